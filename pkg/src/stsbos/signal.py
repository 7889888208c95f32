"""Trajectory ingestion, filtering, resampling and synthetic STS motions."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.signal as ss

DEFAULT_RATE_HZ = 100.0


class TrajectoryError(ValueError):
    pass


@dataclass
class RawTrajectory:
    t: np.ndarray
    channels: dict[str, np.ndarray]
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.channels = {k: np.asarray(v, dtype=float) for k, v in self.channels.items()}
        for name, v in self.channels.items():
            if v.shape != self.t.shape:
                raise TrajectoryError(f"channel {name!r} has {v.size} samples, time has {self.t.size}")
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise TrajectoryError("timestamps must be strictly increasing")

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    def __len__(self):
        return self.t.size

    def is_uniform(self, tol: float = 1e-9) -> bool:
        if self.t.size < 3:
            return True
        d = np.diff(self.t)
        return bool(np.max(np.abs(d - d.mean())) <= tol * max(1.0, abs(d.mean())) + tol)

    @property
    def rate(self) -> float:
        return (self.t.size - 1) / (self.t[-1] - self.t[0])


@dataclass
class ObservedTrajectory:
    """Uniformly sampled state trajectory on ``[0, T]`` (states in columns)."""

    t: np.ndarray
    x: np.ndarray
    names: list[str]
    rate: float

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.x.shape[0] != self.t.size:
            raise TrajectoryError("state samples do not match the time grid")
        if len(self.names) != self.x.shape[1]:
            raise TrajectoryError("one name per state column required")
        if self.t.size > 2:
            d = np.diff(self.t)
            if np.max(np.abs(d - 1.0 / self.rate)) > 1e-9:
                raise TrajectoryError("observed trajectory must be uniformly sampled")

    @property
    def T(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def interp(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.column_stack([np.interp(times, self.t, self.x[:, i]) for i in range(self.n)])

    def to_csv(self, path) -> None:
        write_csv(path, self.t, {k: self.x[:, i] for i, k in enumerate(self.names)})

    @classmethod
    def from_raw(cls, raw: RawTrajectory, names: Sequence[str] | None = None) -> "ObservedTrajectory":
        names = list(names or raw.names)
        t = raw.t - raw.t[0]
        x = np.column_stack([raw.channels[k] for k in names])
        return cls(t, x, names, raw.rate)

    @classmethod
    def from_csv(cls, path) -> "ObservedTrajectory":
        return cls.from_raw(load_trajectory(path))


# -- CSV ----------------------------------------------------------------------
def write_csv(path, t, channels: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *channels])
        cols = [np.asarray(v) for v in channels.values()]
        for k in range(len(t)):
            w.writerow([repr(float(t[k]))] + [repr(float(c[k])) for c in cols])


def load_trajectory(path, required: Sequence[str] = ()) -> RawTrajectory:
    """Parse a trajectory CSV (header row, first column ``t``, ``#`` comments)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise TrajectoryError(f"{path}: no header row")
    header_no, header = lines[0]
    names = [h.strip() for h in next(csv.reader(io.StringIO(header)))]
    if not names or names[0] != "t":
        raise TrajectoryError(f"{path}:{header_no}: first column must be 't'")
    missing = [r for r in required if r not in names[1:]]
    if missing:
        raise TrajectoryError(f"{path}: missing required channels {missing}")
    rows = []
    for lineno, ln in lines[1:]:
        cells = next(csv.reader(io.StringIO(ln)))
        if len(cells) != len(names):
            raise TrajectoryError(f"{path}:{lineno}: expected {len(names)} cells, got {len(cells)}")
        try:
            rows.append((lineno, [float(c) for c in cells]))
        except ValueError as exc:
            raise TrajectoryError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    if not rows:
        raise TrajectoryError(f"{path}: empty trajectory (header only)")
    for (l0, r0), (l1, r1) in zip(rows, rows[1:]):
        if r1[0] == r0[0]:
            raise TrajectoryError(f"{path}:{l1}: duplicated timestamp {r1[0]!r} (row {l1})")
        if r1[0] < r0[0]:
            raise TrajectoryError(f"{path}:{l1}: non-monotone time {r1[0]!r} after {r0[0]!r}")
    data = np.array([r for _, r in rows])
    return RawTrajectory(data[:, 0], {n: data[:, i + 1] for i, n in enumerate(names[1:])},
                         report={"rows": len(rows), "dropped": 0, "duplicates": 0})


# -- filtering and resampling --------------------------------------------------
def butterworth_sos(order: int, cutoff_hz: float, rate_hz: float) -> np.ndarray:
    nyq = 0.5 * rate_hz
    if cutoff_hz >= nyq:
        raise TrajectoryError(f"cutoff {cutoff_hz} Hz is not below Nyquist {nyq} Hz")
    # scipy's digital design is the bilinear transform with prewarping
    return ss.butter(order, cutoff_hz, btype="low", fs=rate_hz, output="sos")


def butterworth_lowpass(traj: RawTrajectory, order: int = 4, cutoff_hz: float = 2.0,
                        zero_phase: bool = True) -> RawTrajectory:
    """Low-pass every channel; forward-backward by default."""
    if not traj.is_uniform():
        raise TrajectoryError("butterworth_lowpass needs uniform sampling; resample first")
    if len(traj) < 8 * order:
        raise TrajectoryError(f"need at least {8 * order} samples to filter, got {len(traj)}")
    sos = butterworth_sos(order, cutoff_hz, traj.rate)
    out = {}
    for name, v in traj.channels.items():
        if zero_phase:
            out[name] = ss.sosfiltfilt(sos, v, padtype="odd", padlen=min(len(v) - 1, 3 * (2 * len(sos) + 1) * 10))
        else:
            out[name] = ss.sosfilt(sos, v, zi=ss.sosfilt_zi(sos) * v[0])[0]
    return RawTrajectory(traj.t.copy(), out, dict(traj.report))


def resample_uniform(traj: RawTrajectory, rate_hz: float) -> RawTrajectory:
    if rate_hz <= 0:
        raise TrajectoryError("rate must be positive")
    if len(traj) < 2:
        raise TrajectoryError("need at least two samples to resample")
    t0, t1 = traj.t[0], traj.t[-1]
    n = int(math.floor((t1 - t0) * rate_hz + 1e-9)) + 1
    grid = t0 + np.arange(n) / rate_hz
    grid[-1] = min(grid[-1], t1)
    return RawTrajectory(grid, {k: np.interp(grid, traj.t, v) for k, v in traj.channels.items()}, dict(traj.report))


def finite_difference_velocity(x, dt: float) -> np.ndarray:
    """Central differences inside, second-order one-sided at the ends."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 3:
        raise TrajectoryError("need at least three samples for velocities")
    return np.gradient(x, dt, axis=0, edge_order=2)


# -- synthetic sit-to-stand ----------------------------------------------------
STRATEGIES = ("quasi_static", "momentum_transfer", "preferred")

# duration factor, seat-off velocity as a fraction of mean speed,
# fraction of the total lean already done at seat-off
_STRATEGY_SHAPE = {
    "quasi_static": dict(duration=1.25, v0=0.0, pre_lean=0.4, trunk=0.6),
    "preferred": dict(duration=1.0, v0=0.4, pre_lean=0.25, trunk=0.75),
    "momentum_transfer": dict(duration=0.8, v0=1.8, pre_lean=0.0, trunk=0.9),
}


@dataclass(frozen=True)
class SynthStsSpec:
    strategy: str = "preferred"
    duration: float = 1.6
    start_angle: float = -0.6
    end_angle: float = 0.0
    trunk_lean: float = 0.7
    seed: int = 0
    noise: float = 0.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.start_angle == self.end_angle:
            raise ValueError("start and end configurations must differ")

    @property
    def effective_duration(self) -> float:
        return self.duration * _STRATEGY_SHAPE[self.strategy]["duration"]


def _quintic(p0, v0, p1, T):
    """Coefficients (in tau = t/T) of the quintic with p(0)=p0, p'(0)=v0, p''(0)=0 and rest at p1."""
    d = p1 - p0
    w = v0 * T
    # p(tau) = p0 + w tau + a3 tau^3 + a4 tau^4 + a5 tau^5
    A = np.array([[1, 1, 1], [3, 4, 5], [6, 12, 20]], dtype=float)
    rhs = np.array([d - w, -w, 0.0])
    a3, a4, a5 = np.linalg.solve(A, rhs)
    return np.array([p0, w, 0.0, a3, a4, a5])


def _profile(spec: SynthStsSpec, p0: float, p1: float, tau: np.ndarray, T: float):
    shape = _STRATEGY_SHAPE[spec.strategy]
    v0 = shape["v0"] * (p1 - p0) / T
    c = _quintic(p0, v0, p1, T)[::-1]
    return np.polyval(c, tau), np.polyval(np.polyder(c), tau) / T


def generate_synthetic_sts(spec: SynthStsSpec, model: str = "ipm", rate_hz: float = DEFAULT_RATE_HZ) -> ObservedTrajectory:
    """Smooth seat-off-to-standing state trajectory for the IPM or DPM.

    The analysed window starts at seat-off.  Quasi-static motions start with
    the body already leaning over the feet and little velocity; momentum
    transfer starts further back with a large forward velocity.
    """
    model = model.lower()
    shape = _STRATEGY_SHAPE[spec.strategy]
    T = spec.effective_duration
    n = int(round(T * rate_hz)) + 1
    t = np.arange(n) / rate_hz
    T = t[-1]
    tau = t / T
    rng = np.random.default_rng(spec.seed)
    span = spec.end_angle - spec.start_angle
    if model == "ipm":
        p0 = spec.start_angle + shape["pre_lean"] * span
        pos, vel = _profile(spec, p0, spec.end_angle, tau, T)
        x = np.column_stack([pos, vel])
        names = ["theta", "theta_dot"]
    elif model == "dpm":
        # ankle-hip ray leans back less than the whole-body COM ray; the hip
        # flexion relaxes from its seat-off value with a strategy-shaped bump
        p0 = 0.5 * (spec.start_angle + shape["pre_lean"] * span)
        th1, w1 = _profile(spec, p0, 0.5 * spec.end_angle, tau, T)
        hip0 = 0.25 * spec.trunk_lean * (0.4 + 0.6 * shape["pre_lean"])
        peak = 0.125 * spec.trunk_lean * shape["trunk"]
        s = tau
        fall = (1 - s) ** 3 * (1 + 3 * s + 6 * s ** 2)  # 1 -> 0 with flat ends
        dfall = -30 * s ** 2 * (1 - s) ** 2
        rise = 27.0 / 4.0 * s * (1 - s) ** 2  # zero at both ends, one interior peak
        drise = 27.0 / 4.0 * ((1 - s) ** 2 - 2 * s * (1 - s))
        th2 = hip0 * fall + peak * rise
        w2 = (hip0 * dfall + peak * drise) / T
        x = np.column_stack([th1, th2, w1, w2])
        names = ["theta1", "theta2", "theta1_dot", "theta2_dot"]
    else:
        raise ValueError(f"unknown model {model!r}")
    if spec.noise > 0:
        x = x + spec.noise * rng.standard_normal(x.shape)
    return ObservedTrajectory(t, x, names, rate_hz)
