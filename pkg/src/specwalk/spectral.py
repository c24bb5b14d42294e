"""Gait-cycle preparation and the 32-point Fourier encoding.

Raw joint-angle trials are low-pass filtered, cut into cycles at foot
strikes, decimated to 10 Hz and resampled in the Fourier domain to a fixed
32 frames.  FFT convention: unnormalized forward transform, 1/N inverse.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

N_FRAMES = 32
N_JOINTS = 6
JOINT_NAMES = ("r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle")
RAW_RATE = 100.0
FRAME_RATE = 10.0
CUTOFF_HZ = 5.0
FILTER_ORDER = 4
MIN_CYCLE_S = 0.4
MAX_CYCLE_S = 3.2
SYMMETRY_TOL = 1e-6


class InvalidDataError(ValueError):
    pass


@dataclass(frozen=True)
class Morphology:
    leg_length_right: float
    leg_length_left: float

    def __post_init__(self):
        for leg in (self.leg_length_right, self.leg_length_left):
            if not (math.isfinite(leg) and 0.3 < leg < 1.5):
                raise InvalidDataError(f"leg length {leg} outside (0.3, 1.5) m")


@dataclass
class RawTrial:
    samples: np.ndarray            # (T, 6) radians
    sample_rate: float
    foot_strike_times: np.ndarray  # seconds, strictly increasing
    com_speed_label: float
    morphology: Morphology

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.foot_strike_times = np.asarray(self.foot_strike_times, dtype=float)
        if self.sample_rate <= 0:
            raise InvalidDataError("sample rate must be positive")
        if self.samples.ndim != 2 or self.samples.shape[1] != N_JOINTS:
            raise InvalidDataError(f"samples must be (T, {N_JOINTS})")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidDataError("non-finite joint angle")
        strikes = self.foot_strike_times
        if np.any(np.diff(strikes) <= 0):
            raise InvalidDataError("foot strikes must be strictly increasing")
        if strikes.size and (strikes[0] < 0 or strikes[-1] > self.duration):
            raise InvalidDataError("foot strike outside trial")

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


@dataclass
class Cycle:
    """A variable-length cycle cut between two consecutive strikes."""

    samples: np.ndarray  # (n, 6)
    sample_rate: float
    start_index: int
    stop_index: int
    speed: float
    morphology: Morphology

    @property
    def duration(self) -> float:
        return (self.stop_index - self.start_index) / self.sample_rate


@dataclass
class GaitCycle:
    frames: np.ndarray  # (32, 6)
    speed: float
    morphology: Morphology

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.shape != (N_FRAMES, N_JOINTS):
            raise InvalidDataError(f"expected {N_FRAMES}x{N_JOINTS} frames, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidDataError("non-finite frame")
        if np.any(np.abs(self.frames) >= math.pi):
            raise InvalidDataError("joint angle magnitude must stay below pi")


@dataclass
class SpectralGait:
    coefficients: np.ndarray  # (32, 6) complex, unnormalized forward FFT per channel
    speed: float
    morphology: Morphology

    @property
    def real_imag(self) -> np.ndarray:
        """(32, 12) array ``j0_re, j0_im, ..., j5_re, j5_im``."""
        out = np.empty((N_FRAMES, 2 * N_JOINTS))
        out[:, 0::2] = self.coefficients.real
        out[:, 1::2] = self.coefficients.imag
        return out


# -- filtering ---------------------------------------------------------------

def butterworth_sos(sample_rate: float, cutoff: float, order: int = FILTER_ORDER) -> np.ndarray:
    nyquist = 0.5 * sample_rate
    if not 0 < cutoff < nyquist:
        raise ValueError(f"cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")
    return signal.butter(order, cutoff, btype="low", fs=sample_rate, output="sos")


def lowpass_filter(x: np.ndarray, sample_rate: float = RAW_RATE, cutoff: float = CUTOFF_HZ,
                   order: int = FILTER_ORDER) -> np.ndarray:
    """Zero-phase Butterworth low-pass along axis 0 (forward-backward pass)."""
    sos = butterworth_sos(sample_rate, cutoff, order)
    x = np.asarray(x, dtype=float)
    # sosfiltfilt pads 3*(2*n_sections + 1) samples on each side
    padlen = 3 * (2 * len(sos) + 1)
    if x.shape[0] <= padlen:
        raise ValueError(f"signal needs more than {padlen} samples for filter warm-up")
    return signal.sosfiltfilt(sos, x, axis=0)


def decimate(x: np.ndarray, factor: int) -> np.ndarray:
    """Keep every ``factor``-th sample; callers low-pass first."""
    return np.asarray(x)[::factor]


# -- segmentation ------------------------------------------------------------

def segment_cycles(trial: RawTrial, min_duration: float = MIN_CYCLE_S,
                   max_duration: float = MAX_CYCLE_S) -> list[Cycle]:
    """Cut a trial into one cycle per consecutive pair of foot strikes.

    Strike times are rounded to the nearest sample, and each cycle spans the
    half-open index range ``[strike_i, strike_{i+1})`` so that consecutive
    cycles tile the trial without gaps or overlap.
    """
    strikes = trial.foot_strike_times
    if strikes.size < 2:
        return []
    idx = np.rint(strikes * trial.sample_rate).astype(int)
    idx = np.clip(idx, 0, trial.samples.shape[0])
    cycles = []
    for a, b in zip(idx[:-1], idx[1:]):
        cyc = Cycle(trial.samples[a:b], trial.sample_rate, int(a), int(b),
                    trial.com_speed_label, trial.morphology)
        if min_duration <= cyc.duration <= max_duration:
            cycles.append(cyc)
    return cycles


# -- Fourier unification -----------------------------------------------------

def fourier_resample_spectrum(x: np.ndarray, n_out: int = N_FRAMES) -> np.ndarray:
    """Spectrum (unnormalized, length ``n_out``) of ``x`` Fourier-resampled along axis 0.

    Bins shared by both lengths are copied and scaled by ``n_out / n_in``.  When
    upsampling from an even length the input Nyquist bin is split evenly
    between the two matching output bins; when downsampling to an even length
    both aliases are folded into the output Nyquist bin.  Either way the
    output spectrum stays Hermitian for real input.
    """
    x = np.asarray(x, dtype=float)
    n_in = x.shape[0]
    X = np.fft.fft(x, axis=0)
    Y = np.zeros((n_out,) + x.shape[1:], dtype=complex)
    n = min(n_in, n_out)
    half = (n + 1) // 2  # bins 0..half-1 are unambiguous
    Y[:half] = X[:half]
    if half > 1:
        Y[n_out - half + 1:] = X[n_in - half + 1:]
    if n % 2 == 0:
        k = n // 2
        if n_in < n_out:
            Y[k] = 0.5 * X[k]
            Y[n_out - k] = 0.5 * X[k]
        elif n_in > n_out:
            Y[k] = X[k] + X[n_in - k]
        else:
            Y[k] = X[k]
    return Y * (n_out / n_in)


def unify_cycle(cycle, speed: float | None = None, morphology: Morphology | None = None,
                n_out: int = N_FRAMES) -> SpectralGait:
    """Encode a variable-length (n, 6) cycle as a 32-bin spectrum per channel."""
    if isinstance(cycle, Cycle):
        speed = cycle.speed if speed is None else speed
        morphology = cycle.morphology if morphology is None else morphology
        samples = cycle.samples
    else:
        samples = np.asarray(cycle, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if not np.all(np.isfinite(samples)):
        raise InvalidDataError("non-finite sample in cycle")
    if samples.shape[0] < 4:
        raise InvalidDataError("cycle needs at least 4 samples")
    coeffs = fourier_resample_spectrum(samples, n_out)
    return SpectralGait(coeffs, speed if speed is not None else float("nan"), morphology)


def enforce_symmetry(coeffs: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Return the Hermitian part of ``coeffs``, or raise if it is too far off."""
    n = coeffs.shape[0]
    mirrored = np.conj(coeffs[(-np.arange(n)) % n])
    scale = max(1.0, float(np.max(np.abs(coeffs))))
    if np.max(np.abs(coeffs - mirrored)) > tol * scale:
        raise InvalidDataError("spectrum is not conjugate-symmetric")
    return 0.5 * (coeffs + mirrored)


def reconstruct_cycle(spec: SpectralGait) -> GaitCycle:
    coeffs = enforce_symmetry(np.asarray(spec.coefficients, dtype=complex))
    frames = np.fft.ifft(coeffs, axis=0)
    if np.max(np.abs(frames.imag), initial=0.0) >= 1e-8:
        raise InvalidDataError("imaginary residue after inverse transform")
    return GaitCycle(frames.real, spec.speed, spec.morphology)


def prepare_trial(trial: RawTrial, frame_rate: float = FRAME_RATE,
                  cutoff: float = CUTOFF_HZ) -> list[SpectralGait]:
    """Full preparation chain: filter, segment, decimate, unify."""
    filtered = RawTrial(lowpass_filter(trial.samples, trial.sample_rate, cutoff),
                        trial.sample_rate, trial.foot_strike_times,
                        trial.com_speed_label, trial.morphology)
    factor = max(1, int(round(trial.sample_rate / frame_rate)))
    out = []
    for cyc in segment_cycles(filtered):
        low = decimate(cyc.samples, factor)
        if low.shape[0] >= 4:
            out.append(unify_cycle(low, cyc.speed, cyc.morphology))
    return out


# -- synthetic corpus --------------------------------------------------------

# Per joint: mean offset and two-or-three harmonics.  Each amplitude/phase is
# an affine function a0 + a_v*(v - 1.2) + a_l*(leg - 0.925).
_HARMONICS = {
    # joint: (offset, [(harmonic, amp0, amp_v, amp_l, phase0, phase_v), ...])
    "hip": ((0.10, 0.04, 0.05),
            [(1, 0.40, 0.12, 0.10, 0.00, 0.05), (2, 0.04, 0.01, 0.00, 0.60, 0.10)]),
    "knee": ((-0.55, -0.10, -0.10),
             [(1, 0.30, 0.08, 0.06, 2.10, 0.08), (2, 0.22, 0.06, 0.04, -1.20, 0.06),
              (3, 0.05, 0.01, 0.00, 0.40, 0.00)]),
    "ankle": ((0.00, 0.01, 0.00),
              [(1, 0.12, 0.02, 0.02, -0.80, 0.04), (2, 0.10, 0.02, 0.01, 1.60, 0.05),
               (3, 0.03, 0.01, 0.00, 0.30, 0.00)]),
}


def stride_frequency(speed: float, leg: float) -> float:
    """Cycles per second; rises with speed, falls with leg length."""
    return (0.55 + 0.36 * speed) * math.sqrt(0.925 / leg)


def synthetic_angles(t: np.ndarray, speed: float, morph: Morphology,
                     phase_jitter: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
    """Joint angles (len(t), 6) of the parametric walker at times ``t``."""
    leg_mean = 0.5 * (morph.leg_length_right + morph.leg_length_left)
    freq = stride_frequency(speed, leg_mean)
    dv = speed - 1.2
    out = np.zeros((t.size, N_JOINTS))
    for side, (leg, shift) in enumerate(((morph.leg_length_right, 0.0),
                                         (morph.leg_length_left, math.pi))):
        dl = leg - 0.925
        base_phase = 2 * math.pi * freq * t + shift + phase_jitter[side]
        for j, name in enumerate(("hip", "knee", "ankle")):
            (o0, o_v, o_l), harmonics = _HARMONICS[name]
            ch = np.full(t.size, o0 + o_v * dv + o_l * dl)
            for h, a0, a_v, a_l, p0, p_v in harmonics:
                amp = a0 + a_v * dv + a_l * dl
                ch += amp * np.cos(h * base_phase + p0 + p_v * dv)
            out[:, 3 * side + j] = ch
    return out


def synthesize_dataset(n_subjects: int, seed: int, trials_per_subject: int = 8,
                       cycles_per_trial: int = 6, sample_rate: float = RAW_RATE) -> list[RawTrial]:
    """Deterministic stand-in for a motion-capture corpus.

    Each subject gets leg lengths drawn from [0.80, 1.05] m; each trial a speed
    from [0.2, 2.2] m/s.  Right-foot strikes fall where the right hip channel's
    fundamental crosses phase zero (maximum flexion of the hip harmonic).
    """
    if n_subjects < 1:
        raise ValueError("need at least one subject")
    rng = np.random.default_rng(seed)
    trials = []
    for _ in range(n_subjects):
        morph = Morphology(float(rng.uniform(0.80, 1.05)), float(rng.uniform(0.80, 1.05)))
        for _ in range(trials_per_subject):
            speed = float(rng.uniform(0.2, 2.2))
            freq = stride_frequency(speed, 0.5 * (morph.leg_length_right + morph.leg_length_left))
            period = 1.0 / freq
            lead = float(rng.uniform(0.5, 1.0))
            duration = lead + (cycles_per_trial + 1) * period
            n = int(math.ceil(duration * sample_rate))
            t = np.arange(n) / sample_rate
            angles = synthetic_angles(t - lead, speed, morph)
            strikes = lead + period * np.arange(cycles_per_trial + 1)
            trials.append(RawTrial(angles, sample_rate, strikes, speed, morph))
    return trials


def build_cycle_corpus(trials: Iterable[RawTrial]) -> list[GaitCycle]:
    return [reconstruct_cycle(s) for trial in trials for s in prepare_trial(trial)]


# -- corpus files ------------------------------------------------------------

CYCLE_HEADER = ["speed", "leg_r", "leg_l", "frame"] + [f"j{i}" for i in range(N_JOINTS)]
SPECTRAL_HEADER = ["speed", "leg_r", "leg_l", "bin"] + [
    f"j{i}_{part}" for i in range(N_JOINTS) for part in ("re", "im")]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_cycle_corpus(path: str | Path, cycles: Sequence[GaitCycle]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CYCLE_HEADER)
        for c in cycles:
            m = c.morphology
            for k in range(N_FRAMES):
                w.writerow([_fmt(c.speed), _fmt(m.leg_length_right), _fmt(m.leg_length_left), k]
                           + [_fmt(v) for v in c.frames[k]])


def read_cycle_corpus(path: str | Path) -> list[GaitCycle]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CYCLE_HEADER:
        raise InvalidDataError(f"{path}: unexpected header")
    body = rows[1:]
    if len(body) % N_FRAMES:
        raise InvalidDataError(f"{path}: row count not a multiple of {N_FRAMES}")
    cycles = []
    for start in range(0, len(body), N_FRAMES):
        block = body[start:start + N_FRAMES]
        if [int(r[3]) for r in block] != list(range(N_FRAMES)):
            raise InvalidDataError(f"{path}: frames out of order near row {start + 2}")
        speed, leg_r, leg_l = (float(v) for v in block[0][:3])
        frames = np.array([[float(v) for v in r[4:]] for r in block])
        cycles.append(GaitCycle(frames, speed, Morphology(leg_r, leg_l)))
    return cycles


def write_spectral_corpus(path: str | Path, spectra: Sequence[SpectralGait]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPECTRAL_HEADER)
        for s in spectra:
            m = s.morphology
            ri = s.real_imag
            for k in range(N_FRAMES):
                w.writerow([_fmt(s.speed), _fmt(m.leg_length_right), _fmt(m.leg_length_left), k]
                           + [_fmt(v) for v in ri[k]])


def read_spectral_corpus(path: str | Path) -> list[SpectralGait]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != SPECTRAL_HEADER:
        raise InvalidDataError(f"{path}: unexpected header")
    body = rows[1:]
    out = []
    for start in range(0, len(body), N_FRAMES):
        block = body[start:start + N_FRAMES]
        speed, leg_r, leg_l = (float(v) for v in block[0][:3])
        ri = np.array([[float(v) for v in r[4:]] for r in block])
        out.append(SpectralGait(ri[:, 0::2] + 1j * ri[:, 1::2], speed, Morphology(leg_r, leg_l)))
    return out


def read_raw_trial_csv(path: str | Path, sample_rate: float, strikes: Sequence[float],
                       speed: float, morphology: Morphology) -> RawTrial:
    """Import a trial from a CSV of six joint-angle columns (radians), header optional."""
    data = np.genfromtxt(path, delimiter=",", dtype=float)
    if np.isnan(data[0]).all():
        data = data[1:]
    return RawTrial(data[:, :N_JOINTS], sample_rate, np.asarray(strikes), speed, morphology)
