"""Terrain height profiles: flat ground, ramps and seeded noisy planes.

Heights are answered by small jitted kernels so the contact model can query
them from inside the physics loop without leaving compiled code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

FLAT, RAMP, NOISY = 0, 1, 2
_KIND_CODES = {"flat": FLAT, "ramp": RAMP, "noisy": NOISY}

NOISE_RESOLUTIONS = (0.25, 0.5, 1.0, 2.0)
MAX_RAMP_ANGLE = 0.35
TRAIN_RAMP_LIMIT = math.radians(5.0)
LEAD_IN = 1.0


@numba.njit(cache=True)
def _splitmix64(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def cell_uniform(seed, cell):
    """Uniform [0, 1) draw that depends only on (seed, cell)."""
    key = _splitmix64(np.uint64(seed) * np.uint64(0x100000001B3))
    key = _splitmix64(key ^ np.uint64(cell))
    return float(key >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def terrain_height(kind, angle, omega, gamma, seed, start_x, x):
    if kind == 0 or x < start_x:
        return 0.0
    if kind == 1:
        return (x - start_x) * math.tan(angle)
    cell = np.int64(math.floor((x - start_x) / gamma))
    return 0.01 * omega * cell_uniform(seed, cell)


@numba.njit(cache=True)
def terrain_slope(kind, angle, start_x, x):
    """Surface inclination (rad) at x; noisy cells are level."""
    if kind == 1 and x >= start_x:
        return angle
    return 0.0


@dataclass(frozen=True)
class TerrainProfile:
    """Immutable description of a ground profile.

    ``noise_amplitude`` is in centimetres so that ``omega=20`` means cells up
    to 20 cm high; ``noise_resolution`` is the cell width in metres.
    """

    kind: str = "flat"
    ramp_angle: float = 0.0
    noise_amplitude: float = 0.0
    noise_resolution: float = 0.5
    seed: int = 0
    start_x: float = LEAD_IN

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if not -MAX_RAMP_ANGLE <= self.ramp_angle <= MAX_RAMP_ANGLE:
            raise ValueError(f"ramp angle {self.ramp_angle} outside +/-{MAX_RAMP_ANGLE} rad")
        if self.kind == "noisy":
            if not 0.0 <= self.noise_amplitude <= 20.0:
                raise ValueError("noise amplitude must lie in [0, 20] cm")
            if self.noise_resolution not in NOISE_RESOLUTIONS:
                raise ValueError(f"noise resolution must be one of {NOISE_RESOLUTIONS}")

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    def kernel_args(self) -> tuple:
        """Flat tuple consumed by the jitted contact kernels."""
        return (self.code, float(self.ramp_angle), float(self.noise_amplitude),
                float(self.noise_resolution), int(self.seed), float(self.start_x))

    @property
    def nominal_angle(self) -> float:
        return self.ramp_angle if self.kind == "ramp" else 0.0

    def to_string(self) -> str:
        if self.kind == "flat":
            return "flat"
        if self.kind == "ramp":
            return f"ramp:{math.degrees(self.ramp_angle):g}"
        return f"noisy:{self.noise_amplitude:g}:{self.noise_resolution:g}:{self.seed}"


def flat() -> TerrainProfile:
    return TerrainProfile("flat")


def ramp(angle_deg: float, start_x: float = LEAD_IN) -> TerrainProfile:
    return TerrainProfile("ramp", ramp_angle=math.radians(angle_deg), start_x=start_x)


def noisy(omega: float, gamma: float, seed: int, start_x: float = LEAD_IN) -> TerrainProfile:
    return TerrainProfile("noisy", noise_amplitude=omega, noise_resolution=gamma,
                          seed=seed, start_x=start_x)


def parse_profile(text: str) -> TerrainProfile:
    """Parse the CLI form ``flat``, ``ramp:<deg>`` or ``noisy:<omega>:<gamma>:<seed>``."""
    parts = text.strip().split(":")
    try:
        if parts[0] == "flat" and len(parts) == 1:
            return flat()
        if parts[0] == "ramp" and len(parts) == 2:
            return ramp(float(parts[1]))
        if parts[0] == "noisy" and len(parts) == 4:
            return noisy(float(parts[1]), float(parts[2]), int(parts[3]))
    except ValueError as exc:
        raise ValueError(f"bad terrain spec {text!r}: {exc}") from None
    raise ValueError(f"bad terrain spec {text!r}")


def height_at(profile: TerrainProfile, x):
    """Ground height (m) at horizontal position ``x``; accepts scalars or arrays."""
    args = profile.kernel_args()
    if np.ndim(x) == 0:
        return terrain_height(*args, float(x))
    xs = np.asarray(x, dtype=float)
    out = np.empty_like(xs)
    for i, xi in enumerate(xs.flat):
        out.flat[i] = terrain_height(*args, xi)
    return out


def slope_at(profile: TerrainProfile, x: float) -> float:
    return terrain_slope(profile.code, profile.ramp_angle, profile.start_x, float(x))


def make_training_terrain(rng: np.random.Generator) -> TerrainProfile:
    """Domain-randomized training ground: flat half the time, else a mild ramp."""
    if rng.random() < 0.5:
        return flat()
    angle = rng.uniform(-TRAIN_RAMP_LIMIT, TRAIN_RAMP_LIMIT)
    return TerrainProfile("ramp", ramp_angle=angle)
