"""Biped model parameters and the YAML model-file schema."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .kernels import N_BODY, N_CONTACT, N_Q

LINK_NAMES = ("torso", "thigh_r", "shank_r", "foot_r", "thigh_l", "shank_l", "foot_l")
ACTUATED = ("torso", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle")
COORD_NAMES = ("x", "z", "torso", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle")
N_ACT = 7


@dataclass
class BipedModel:
    """Link parameters plus limits and contact gains.

    Array fields are indexed by body/coordinate (9 entries, the first two
    being the massless pelvis sliders) so they can go straight to the
    compiled kernels.
    """

    doc: dict
    mass: np.ndarray = field(init=False)
    inertia: np.ndarray = field(init=False)
    length: np.ndarray = field(init=False)
    pivot_local: np.ndarray = field(init=False)
    com_local: np.ndarray = field(init=False)
    contact_local: np.ndarray = field(init=False)
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)
    torque_limits: np.ndarray = field(init=False)
    gains: np.ndarray = field(init=False)

    def __post_init__(self):
        d = self.doc
        links = d["links"]
        self.gravity = float(d.get("gravity", 9.81))
        self.mass = np.zeros(N_BODY)
        self.inertia = np.zeros(N_BODY)
        self.length = np.zeros(N_BODY)
        self.com_local = np.zeros((N_BODY, 2))
        for k, name in enumerate(LINK_NAMES, start=2):
            link = links[name]
            self.mass[k] = float(link["mass"])
            self.inertia[k] = float(link["inertia"])
            self.length[k] = float(link["length"])
            self.com_local[k] = [float(v) for v in link["com"]]
        if np.any(self.mass[2:] <= 0) or np.any(self.inertia[2:] <= 0) or np.any(self.length[2:] <= 0):
            raise ValueError("link masses, inertias and lengths must be positive")

        self.pivot_local = np.zeros((N_BODY, 2))
        for thigh, shank, foot in ((3, 4, 5), (6, 7, 8)):
            self.pivot_local[shank] = (0.0, -self.length[thigh])
            self.pivot_local[foot] = (0.0, -self.length[shank])

        self.foot_height = float(d["foot_height"])
        offsets = [float(v) for v in d["contact_offsets"]]
        if len(offsets) != 4:
            raise ValueError("exactly 4 contact offsets per foot are required")
        self.contact_local = np.array([(a, -self.foot_height) for a in offsets] * 2)
        assert self.contact_local.shape == (N_CONTACT, 2)

        self.torque_limits = np.array([float(v) for v in d["torque_limits"]])
        if self.torque_limits.shape != (N_ACT,) or np.any(self.torque_limits <= 0):
            raise ValueError("need 7 positive torque limits")
        lim = d["joint_limits"]
        self.lower = np.full(N_Q, -np.inf)
        self.upper = np.full(N_Q, np.inf)
        for base in (3, 6):
            for k, name in enumerate(("hip", "knee", "ankle")):
                self.lower[base + k], self.upper[base + k] = (float(v) for v in lim[name])
        self.k_lim = float(d.get("joint_limit_stiffness", 1000.0))
        self.d_lim = float(d.get("joint_limit_damping", 5.0))
        self.joint_damping = float(d.get("joint_damping", 0.0))
        c = d["contact"]
        self.gains = np.array([float(c["k_normal"]), float(c["d_normal"]), float(c["k_tangent"]),
                               float(c["d_tangent"]), float(c["mu"])])
        self.implicit_damping = bool(c.get("implicit_damping", True))

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @property
    def leg_length_right(self) -> float:
        """Hip-to-sole length with a straight leg."""
        return float(self.length[3] + self.length[4] + self.foot_height)

    @property
    def leg_length_left(self) -> float:
        return float(self.length[6] + self.length[7] + self.foot_height)

    def with_overrides(self, **changes) -> "BipedModel":
        """Copy with top-level or nested (``contact__mu=0.5``) document keys replaced."""
        doc = copy.deepcopy(self.doc)
        for key, value in changes.items():
            node = doc
            parts = key.split("__")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = value
        return BipedModel(doc)

    def kernel_args(self) -> tuple:
        return (self.mass, self.inertia, self.pivot_local, self.com_local)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.doc, sort_keys=False)


def load_model(path: str | Path) -> BipedModel:
    return BipedModel(yaml.safe_load(Path(path).read_text(encoding="utf-8")))


def default_model() -> BipedModel:
    text = resources.files("specwalk").joinpath("data/biped_default.yaml").read_text(encoding="utf-8")
    return BipedModel(yaml.safe_load(text))
