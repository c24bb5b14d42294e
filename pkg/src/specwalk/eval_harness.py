"""Evaluation demos and the configuration comparison table.

Every demo is a grid of independent episodes.  Episodes are produced by a
runner, which is either a controller driving the simulator or one of the
scripted stubs used to pin down metric semantics (a kinematic CoM that
moves exactly at the commanded speed, and a body that never falls).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .dynamics.model import BipedModel
from .env import POLICY_DT, EpisodeConfig, SpeedProfile, WalkingEnv, make_env
from .ppo.trainer import PolicyController, load_checkpoint
from .reward import DecaySchedule
from .terrain import NOISE_RESOLUTIONS, TerrainProfile, flat, noisy, ramp

DEMO_KINDS = ("velocity_comparison", "rotation", "noisy_plane", "velocity_tracking")
SPEED_GRID = tuple(round(0.1 * k, 1) for k in range(23))
ANGLE_GRID = tuple(range(-15, 16))
OMEGA_GRID = tuple(range(1, 21))
EPISODE_SECONDS = 20.0
RANGE_THRESHOLD = 5.0
SPEED_BAND = 0.10
TRACKING_WINDOW = 1.0
TABLE_COLUMNS = ("MSE", "Success(Rotation)", "Success(NP0)", "Success(NP1)", "Range(NP0)", "Range(NP1)")


@dataclass
class EpisodeOutcome:
    """CoM track of one episode, sampled at every policy step (t = 0 included)."""

    times: np.ndarray
    com_x: np.ndarray
    commanded: np.ndarray
    reason: str
    duration: float

    @property
    def survived(self) -> bool:
        return self.reason == "time_limit"

    @property
    def range(self) -> float:
        return max(0.0, float(self.com_x[-1] - self.com_x[0]))

    def position_at(self, t: float) -> float:
        """CoM x at time ``t``; frozen at its final value after the episode ends."""
        return float(np.interp(t, self.times, self.com_x))


class Runner(Protocol):
    def run(self, config: EpisodeConfig) -> EpisodeOutcome: ...


class Controller(Protocol):
    def reset(self) -> None: ...
    def __call__(self, obs: np.ndarray, env: WalkingEnv) -> np.ndarray: ...


class SimRunner:
    """Runs a controller in the walking environment."""

    def __init__(self, env: WalkingEnv, controller: Controller):
        self.env = env
        self.controller = controller

    def run(self, config: EpisodeConfig) -> EpisodeOutcome:
        env = self.env
        obs = env.reset(config)
        self.controller.reset()
        times, xs, cmd = [0.0], [env.com[0]], [config.commanded_speed(0.0)]
        while not env.done:
            obs, _, _ = env.step(self.controller(obs, env))
            times.append(env.time)
            xs.append(env.com[0])
            cmd.append(config.commanded_speed(env.time))
        return EpisodeOutcome(np.array(times), np.array(xs), np.array(cmd), env.done_reason, env.time)


class RandomTorqueController:
    """Uniform random torques within the actuator limits, seeded per episode."""

    def __init__(self, limits, seed: int = 0):
        self.limits = np.asarray(limits, dtype=float)
        self.seed = seed
        self.episode = 0
        self.reset()

    def reset(self) -> None:
        self.rng = np.random.default_rng([self.seed, self.episode])
        self.episode += 1

    def __call__(self, obs, env=None):
        return self.rng.uniform(-self.limits, self.limits)


class TeleportRunner:
    """Scripted stub: the CoM moves exactly at the commanded speed and never falls."""

    def run(self, config: EpisodeConfig) -> EpisodeOutcome:
        n = int(round(config.max_duration / POLICY_DT))
        times = np.arange(n + 1) * POLICY_DT
        cmd = np.array([config.commanded_speed(t) for t in times])
        x = np.zeros(n + 1)
        # trapezoidal integration is exact for the piecewise-linear profiles used here
        x[1:] = np.cumsum(0.5 * (cmd[1:] + cmd[:-1]) * POLICY_DT)
        return EpisodeOutcome(times, x, cmd, "time_limit", times[-1])


class AlwaysAliveRunner:
    """Scripted stub: survives every episode while standing still."""

    def run(self, config: EpisodeConfig) -> EpisodeOutcome:
        n = int(round(config.max_duration / POLICY_DT))
        times = np.arange(n + 1) * POLICY_DT
        cmd = np.array([config.commanded_speed(t) for t in times])
        return EpisodeOutcome(times, np.zeros(n + 1), cmd, "time_limit", times[-1])


# -- results -----------------------------------------------------------------

@dataclass
class DemoResult:
    kind: str
    records: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    series: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in DEMO_KINDS:
            raise ValueError(f"unknown demo kind {self.kind!r}")


RECORD_FIELDS = ("speed", "angle_deg", "omega", "gamma", "plane", "seed", "realized_speed", "in_band",
                 "success", "range", "reason")


def _record(speed=math.nan, angle=math.nan, omega=math.nan, gamma=math.nan, plane=-1, seed=0,
            realized=math.nan, in_band=0, outcome: EpisodeOutcome | None = None, threshold=None) -> dict:
    if threshold is None:
        success = int(outcome.survived)
    else:
        success = int(outcome.range >= threshold)
    return {"speed": speed, "angle_deg": angle, "omega": omega, "gamma": gamma, "plane": plane,
            "seed": seed, "realized_speed": realized, "in_band": int(in_band), "success": success,
            "range": outcome.range, "reason": outcome.reason}


def realized_speed(outcome: EpisodeOutcome, episode_seconds: float) -> float:
    """Mean CoM forward speed over the second half of the nominal episode.

    After an early termination the CoM counts as stopped, so a fall before
    the half-way point gives zero.
    """
    half = 0.5 * episode_seconds
    return (outcome.position_at(episode_seconds) - outcome.position_at(half)) / half


def _episode(speed, terrain: TerrainProfile, seconds: float, seed: int, rsi: bool) -> EpisodeConfig:
    return EpisodeConfig(commanded_speed=speed, terrain=terrain, max_duration=seconds,
                         rsi_enabled=rsi, seed=seed)


def run_velocity_comparison(runner: Runner, speeds: Sequence[float] = SPEED_GRID,
                            episode_seconds: float = EPISODE_SECONDS, seeds: Sequence[int] = (0,),
                            rsi: bool = True) -> DemoResult:
    res = DemoResult("velocity_comparison")
    for seed in seeds:
        for v in speeds:
            out = runner.run(_episode(v, flat(), episode_seconds, seed, rsi))
            real = realized_speed(out, episode_seconds)
            res.records.append(_record(speed=float(v), seed=seed, realized=real,
                                       in_band=abs(real - v) <= SPEED_BAND * v, outcome=out))
    errs = np.array([r["realized_speed"] - r["speed"] for r in res.records])
    res.aggregates = {"mse": float(np.mean(errs ** 2)),
                      "band_fraction": float(np.mean([r["in_band"] for r in res.records])),
                      **_means(res.records)}
    return res


def run_rotation(runner: Runner, angles: Sequence[float] = ANGLE_GRID, speeds: Sequence[float] = SPEED_GRID,
                 episode_seconds: float = EPISODE_SECONDS, seeds: Sequence[int] = (0,),
                 rsi: bool = True) -> DemoResult:
    res = DemoResult("rotation")
    for seed in seeds:
        for angle in angles:
            terrain = ramp(angle)
            for v in speeds:
                out = runner.run(_episode(v, terrain, episode_seconds, seed, rsi))
                res.records.append(_record(speed=float(v), angle=float(angle), seed=seed, outcome=out))
    per_angle = {}
    for angle in angles:
        per_angle[f"{float(angle):g}"] = float(np.mean([r["success"] for r in res.records
                                                        if r["angle_deg"] == float(angle)]))
    res.aggregates = {"success_per_angle": per_angle, **_means(res.records)}
    return res


def run_noisy_plane(runner: Runner, plane_seeds: Sequence[int] = (0, 1), omegas: Sequence[float] = OMEGA_GRID,
                    gammas: Sequence[float] = NOISE_RESOLUTIONS, speed: float = 1.0,
                    episode_seconds: float = EPISODE_SECONDS, seeds: Sequence[int] = (0,),
                    threshold: float = RANGE_THRESHOLD, rsi: bool = True) -> DemoResult:
    res = DemoResult("noisy_plane")
    for plane in plane_seeds:
        for omega in omegas:
            for gamma in gammas:
                terrain = noisy(omega, gamma, plane)
                for seed in seeds:
                    out = runner.run(_episode(speed, terrain, episode_seconds, seed, rsi))
                    res.records.append(_record(speed=float(speed), omega=float(omega), gamma=float(gamma),
                                               plane=int(plane), seed=seed, outcome=out, threshold=threshold))
    planes = {}
    for plane in plane_seeds:
        recs = [r for r in res.records if r["plane"] == plane]
        planes[str(plane)] = {
            "mean_range": float(np.mean([r["range"] for r in recs])),
            "mean_success": float(np.mean([r["success"] for r in recs])),
            "range_per_omega": {f"{float(w):g}": float(np.mean([r["range"] for r in recs
                                                                if r["omega"] == float(w)]))
                                for w in omegas},
        }
    res.aggregates = {"planes": planes, "threshold": threshold}
    return res


def tracking_profile(peak: float = 2.0, ramp_seconds: float = 8.0, hold_seconds: float = 4.0) -> SpeedProfile:
    """Ramp up from rest to ``peak``, hold, then ramp back down."""
    t1 = ramp_seconds
    t2 = t1 + hold_seconds
    return SpeedProfile((0.0, t1, t2, t2 + ramp_seconds), (0.0, peak, peak, 0.0))


def run_velocity_tracking(runner: Runner, profile: SpeedProfile | None = None,
                          episode_seconds: float | None = None, seeds: Sequence[int] = (0,),
                          window: float = TRACKING_WINDOW, rsi: bool = True) -> DemoResult:
    """Desired vs realized speed over time.

    Both are averaged over a trailing ``window``, so a CoM moving exactly at
    the commanded speed has zero error.  Lag is desired minus realized.
    """
    profile = profile or tracking_profile()
    seconds = episode_seconds or float(profile.times[-1]) + 2.0
    res = DemoResult("velocity_tracking")
    n_win = int(round(window / POLICY_DT))
    all_err, all_lag = [], []
    for seed in seeds:
        out = runner.run(_episode(profile, flat(), seconds, seed, rsi))
        grid = np.arange(int(round(seconds / POLICY_DT)) + 1) * POLICY_DT
        x = np.array([out.position_at(t) for t in grid])
        cmd = np.array([profile(t) for t in grid])
        # trapezoid mean of the command over each trailing window
        seg = 0.5 * (cmd[1:] + cmd[:-1]) * POLICY_DT
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        desired = (cum[n_win:] - cum[:-n_win]) / window
        realized = (x[n_win:] - x[:-n_win]) / window
        lag = desired - realized
        err = np.abs(lag)
        all_err.append(err)
        all_lag.append(lag)
        res.records.append(_record(speed=float(np.max(cmd)), seed=seed, realized=float(np.mean(realized)),
                                   outcome=out))
        for t, d, r in zip(grid[n_win:], desired, realized):
            res.series.append({"seed": seed, "t": float(t), "desired": float(d), "realized": float(r)})
    err = np.concatenate(all_err)
    res.aggregates = {"mean_abs_error": float(np.mean(err)), "peak_lag": float(np.max(np.concatenate(all_lag))),
                      **_means(res.records)}
    return res


def _means(records) -> dict:
    return {"mean_success": float(np.mean([r["success"] for r in records])),
            "mean_range": float(np.mean([r["range"] for r in records]))}


# -- persistence -------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_demo(result: DemoResult, out_dir: str | Path) -> list[Path]:
    """``<kind>.csv`` (records), ``<kind>.json`` (aggregates) and, for tracking, ``<kind>.tsv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{result.kind}.csv", out / f"{result.kind}.json"]
    with open(paths[0], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in result.records:
            w.writerow([_cell(r[k]) for k in RECORD_FIELDS])
    paths[1].write_text(json.dumps({"kind": result.kind, "aggregates": result.aggregates},
                                   indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if result.series:
        p = out / f"{result.kind}.tsv"
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("seed\tt\tdesired\trealized\n")
            for s in result.series:
                fh.write(f"{s['seed']}\t{s['t']!r}\t{s['desired']!r}\t{s['realized']!r}\n")
        paths.append(p)
    return paths


def read_demo(out_dir: str | Path, kind: str) -> DemoResult:
    out = Path(out_dir)
    doc = json.loads((out / f"{kind}.json").read_text(encoding="utf-8"))
    records = []
    with open(out / f"{kind}.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k in RECORD_FIELDS:
                v = row[k]
                if k == "reason":
                    rec[k] = v
                elif k in ("plane", "seed", "in_band", "success"):
                    rec[k] = int(v)
                else:
                    rec[k] = float(v)
            records.append(rec)
    return DemoResult(kind, records, doc["aggregates"])


# -- comparison table ----------------------------------------------------------

def table_row(results: dict[str, DemoResult]) -> dict[str, float | None]:
    """The six comparison metrics from whatever demo results are available."""
    row: dict[str, float | None] = {c: None for c in TABLE_COLUMNS}
    vc = results.get("velocity_comparison")
    if vc is not None:
        row["MSE"] = vc.aggregates["mse"]
    rot = results.get("rotation")
    if rot is not None:
        row["Success(Rotation)"] = rot.aggregates["mean_success"]
    npl = results.get("noisy_plane")
    if npl is not None:
        planes = npl.aggregates["planes"]
        for k in ("0", "1"):
            if k in planes:
                row[f"Success(NP{k})"] = planes[k]["mean_success"]
                row[f"Range(NP{k})"] = planes[k]["mean_range"]
    return row


def compare_configurations(results: dict[str, dict[str, DemoResult]]) -> list[dict]:
    """One row per configuration with the six metrics; missing cells stay None."""
    if not results:
        raise ValueError("need at least one configuration")
    return [{"name": name, **table_row(res)} for name, res in results.items()]


def _best(rows: list[dict], col: str):
    vals = [r[col] for r in rows if r[col] is not None]
    if not vals:
        return None
    return min(vals) if col == "MSE" else max(vals)


def write_comparison(rows: list[dict], out_dir: str | Path, stem: str = "table3") -> tuple[Path, Path]:
    """CSV plus an aligned text table with the best value per column starred."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out / f"{stem}.csv", out / f"{stem}.txt"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["configuration", *TABLE_COLUMNS])
        for r in rows:
            w.writerow([r["name"]] + ["" if r[c] is None else repr(float(r[c])) for c in TABLE_COLUMNS])
    best = {c: _best(rows, c) for c in TABLE_COLUMNS}
    cells = [["configuration", *TABLE_COLUMNS]]
    for r in rows:
        line = [r["name"]]
        for c in TABLE_COLUMNS:
            v = r[c]
            if v is None:
                line.append("n/a")
            else:
                fmt = f"{v:.6f}" if c == "MSE" else f"{v:.3f}"
                line.append(fmt + ("*" if v == best[c] else ""))
        cells.append(line)
    widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))]
    text = "\n".join("  ".join(s.ljust(wd) if i == 0 else s.rjust(wd) for i, (s, wd) in enumerate(zip(row, widths)))
                     for row in cells)
    txt_path.write_text(text + "\n", encoding="utf-8")
    return csv_path, txt_path


def policy_runner(checkpoint: str | Path, model: BipedModel, gait_params) -> SimRunner:
    """Deterministic policy from a checkpoint, wired to a fresh environment."""
    state = load_checkpoint(checkpoint)
    env = make_env(model, gait_params)
    cfg = state.config
    env.schedule = DecaySchedule(cfg.alpha, cfg.total_steps, imitation=cfg.imitation)
    return SimRunner(env, PolicyController(state))


def random_runner(model: BipedModel, gait_params, seed: int = 0) -> SimRunner:
    return SimRunner(make_env(model, gait_params), RandomTorqueController(model.torque_limits, seed))
