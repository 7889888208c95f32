"""Velocity-based stability region for the inverted pendulum.

The plane has the COM horizontal position over the foot (in foot lengths)
on one axis and the COM horizontal velocity (in pendulum lengths per
second) on the other.  Both boundaries are found by simulating the exact
pendulum under maximal-effort constant torque and bisecting on the initial
velocity at each position.

A state can *stand* if some equilibrium within the torque limits is
reachable: the balanceable band is the set of angles where
``-m g l sin(theta)`` lies inside the torque bounds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .models import IpmParams, TorqueBounds, ipm_dynamics_exact
from .signal import ObservedTrajectory

DEFAULT_FOOT_LENGTH = 0.25


@dataclass(frozen=True)
class RosvSettings:
    positions: int = 60
    velocity_limit: float = 4.0  # bracket half-width in normalized velocity
    tol: float = 1e-4
    step: float = 2e-3
    horizon: float = 6.0


@dataclass
class RosvPlane:
    theta: np.ndarray
    position: np.ndarray
    left: np.ndarray   # normalized velocity; nan where undefined
    right: np.ndarray
    foot_length: float
    length: float
    band: tuple
    notes: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["position", "v_left", "v_right"])
            for p, a, b in zip(self.position, self.left, self.right):
                w.writerow([repr(float(p)), repr(float(a)), repr(float(b))])


@dataclass
class RosvScore:
    position: float
    velocity: float
    distance: float
    flags: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"position": self.position, "velocity": self.velocity, "distance": self.distance,
                "flags": list(self.flags)}


def normalized_state(theta, theta_dot, params: IpmParams, foot_length: float):
    """COM horizontal position in foot lengths and velocity in lengths per second."""
    if foot_length is None or not foot_length > 0:
        raise ValueError("a positive foot length is required")
    theta = np.asarray(theta, float)
    pos = params.l * np.sin(theta) / foot_length
    vel = np.cos(theta) * np.asarray(theta_dot, float)
    return pos, vel


def seatoff_state(traj: ObservedTrajectory, params: IpmParams, foot_length: float | None = DEFAULT_FOOT_LENGTH):
    """Normalized (position, velocity) at the first sample of the window."""
    if traj.n != 2:
        raise ValueError("seat-off state needs an IPM trajectory (theta, theta_dot)")
    p, v = normalized_state(traj.x[0, 0], traj.x[0, 1], params, foot_length)
    return float(p), float(v)


def balance_band(params: IpmParams, bounds: TorqueBounds) -> tuple[float, float]:
    """Angles with a static equilibrium inside the torque limits."""
    mgl = params.m * params.g * params.l
    lo, hi = float(bounds.lo[0]), float(bounds.hi[0])
    a = np.clip(-hi / mgl, -1.0, 1.0)
    b = np.clip(-lo / mgl, -1.0, 1.0)
    return float(np.arcsin(a)), float(np.arcsin(b))


def _outcome(theta0, omega0, torque, params, band, forward: bool, s: RosvSettings) -> np.ndarray:
    """Vectorized maximal-effort rollout.

    ``forward=True`` pushes with ``torque`` and succeeds once the body moves
    forward inside the band; otherwise brakes with ``torque`` and succeeds
    once forward motion stops before leaving the band.
    """
    x = np.column_stack([theta0, omega0]).astype(float)
    lo, hi = band
    out = np.full(len(x), -1)  # -1 undecided, 0 fail, 1 success

    def decide():
        th, om = x[:, 0], x[:, 1]
        und = out < 0
        if forward:
            ok = (th >= lo) & (om >= 0)
            bad = ((th < lo) & (om <= 0)) | (th < -np.pi / 2)
        else:
            ok = (th <= hi) & (om <= 0)
            bad = ((th > hi) & (om > 0)) | (th > np.pi / 2)
        out[und & ok] = 1
        out[und & bad & ~ok] = 0

    fun = lambda z: ipm_dynamics_exact(z, torque, params)
    decide()
    h = s.step
    for _ in range(int(np.ceil(s.horizon / h))):
        idx = out < 0
        if not idx.any():
            break
        z = x[idx]
        k1 = fun(z)
        k2 = fun(z + 0.5 * h * k1)
        k3 = fun(z + 0.5 * h * k2)
        k4 = fun(z + h * k3)
        x[idx] = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        decide()
    out[out < 0] = 0  # hovering at an unstable point counts as not standing
    return out.astype(bool)


def _bisect(theta, success, lo_v, hi_v, tol):
    """Boundary velocity where ``success`` flips, per position; nan without a bracket."""
    c = np.cos(theta)
    a = np.full(theta.shape, -lo_v)
    b = np.full(theta.shape, hi_v)
    sa, sb = success(theta, a / c), success(theta, b / c)
    valid = sa != sb
    while np.max(b - a) > tol:
        m = 0.5 * (a + b)
        sm = success(theta, m / c)
        same = sm == sa
        a = np.where(same, m, a)
        b = np.where(same, b, m)
    v = 0.5 * (a + b)
    return np.where(valid, v, np.nan), sa, sb


def compute_boundaries(params: IpmParams, bounds: TorqueBounds, theta_range: tuple[float, float],
                       foot_length: float = DEFAULT_FOOT_LENGTH, settings: RosvSettings | None = None) -> RosvPlane:
    """Left (too slow to stand) and right (forward fall) boundaries over ``theta_range``."""
    s = settings or RosvSettings()
    if s.positions < 2:
        raise ValueError("need at least two positions")
    band = balance_band(params, bounds)
    theta = np.linspace(theta_range[0], theta_range[1], s.positions)
    t_hi, t_lo = float(bounds.hi[0]), float(bounds.lo[0])
    push = lambda th, om: _outcome(th, om, t_hi, params, band, True, s)
    brake = lambda th, om: _outcome(th, om, t_lo, params, band, False, s)
    V = s.velocity_limit
    left, l_lo, l_hi = _bisect(theta, push, V, V, s.tol)
    right, r_lo, r_hi = _bisect(theta, brake, V, V, s.tol)
    notes = []
    # without a bracket the boundary lies outside the velocity window
    left = np.where(np.isnan(left) & l_lo, -np.inf, left)
    left = np.where(np.isnan(left) & ~l_hi, np.inf, left)
    right = np.where(np.isnan(right) & ~r_lo, -np.inf, right)
    right = np.where(np.isnan(right) & r_hi, np.inf, right)
    if not np.all(np.isfinite(left)):
        notes.append(f"left boundary outside +-{V} at {int(np.sum(~np.isfinite(left)))} positions")
    if not np.all(np.isfinite(right)):
        notes.append(f"right boundary outside +-{V} at {int(np.sum(~np.isfinite(right)))} positions")
    pos = params.l * np.sin(theta) / foot_length
    return RosvPlane(theta, pos, left, right, foot_length, params.l, band, notes)


def rosv_score(position: float, velocity: float, plane: RosvPlane) -> RosvScore:
    """Signed Euclidean distance to the forward-fall boundary (negative beyond it)."""
    p = plane.position
    if not (p.min() - 1e-12 <= position <= p.max() + 1e-12):
        raise ValueError(f"position {position} outside the plane range [{p.min()}, {p.max()}]")
    ok = np.isfinite(plane.right)
    if ok.sum() < 2:
        raise ValueError("forward-fall boundary is undefined on this plane")
    P, V = p[ok], plane.right[ok]
    q = np.array([position, velocity])
    A = np.column_stack([P[:-1], V[:-1]])
    B = np.column_stack([P[1:], V[1:]])
    d = B - A
    w = np.clip(np.einsum("ij,ij->i", q - A, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-300), 0.0, 1.0)
    dist = float(np.min(np.linalg.norm(A + w[:, None] * d - q, axis=1)))
    v_right = float(np.interp(position, P, V))
    flags = []
    if velocity > v_right:
        dist = -dist
        flags.append("beyond forward-fall boundary")
    v_left = np.interp(position, p, np.where(np.isfinite(plane.left), plane.left, np.nan))
    if np.isfinite(v_left) and velocity < v_left:
        flags.append("insufficient velocity")
    return RosvScore(float(position), float(velocity), dist, flags)
