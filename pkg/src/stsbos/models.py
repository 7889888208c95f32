"""Single and double inverted pendulum models of sit-to-stand.

Angles are measured from vertical, positive forward, so upright standing is
the origin.  Gravity is destabilizing and there is no joint damping.
Polynomial fields use the variable order ``(t, x_1, ..., x_n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly import Polynomial, taylor_cos, taylor_sin
from .signal import ObservedTrajectory
from .textio import floats as _floats, read_keyvalue, write_keyvalue

RANGE_FLOOR = 1e-3
EXPANSION_WARN = 1e-2


@dataclass(frozen=True)
class IpmParams:
    m: float
    l: float
    g: float = 9.81

    def __post_init__(self):
        for name in ("m", "l", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IPM parameter {name} must be positive")


@dataclass(frozen=True)
class DpmParams:
    m1: float
    m2: float
    l1: float
    r1: float
    r2: float
    g: float = 9.81

    def __post_init__(self):
        for name in ("m1", "m2", "l1", "r1", "r2", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"DPM parameter {name} must be positive")
        if self.r1 > self.l1:
            raise ValueError("r1 must not exceed l1")


@dataclass(frozen=True)
class StateBox:
    lo: tuple
    hi: tuple
    T: float

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("box bounds must be non-empty and of equal length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"box needs lo < hi in every state, got {lo} / {hi}")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "T", float(self.T))

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lo) + np.array(self.hi))

    @property
    def halfwidth(self) -> np.ndarray:
        return 0.5 * (np.array(self.hi) - np.array(self.lo))

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.array(self.lo) - tol) & (x <= np.array(self.hi) + tol), axis=-1)

    def domain(self) -> list[tuple]:
        """Per-variable intervals of ``[0, T] x X`` in the (t, x) convention."""
        return [(0.0, self.T)] + list(zip(self.lo, self.hi))

    def volume(self) -> float:
        return self.T * float(np.prod(np.array(self.hi) - np.array(self.lo)))


@dataclass(frozen=True)
class TorqueBounds:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"torque bounds need lo < hi per channel, got {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def m(self) -> int:
        return len(self.lo)

    def clip(self, u):
        return np.clip(u, np.array(self.lo), np.array(self.hi))


@dataclass(frozen=True)
class TargetSet:
    """Ellipsoid (``kind='ball'``) or box around ``center`` with the given radii.

    ``extra`` holds additional polynomial inequalities ``h(x) >= 0`` written
    in the (t, x) ring with no dependence on t.
    """

    center: tuple
    radii: tuple
    kind: str = "ball"
    extra: tuple = ()

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        r = tuple(float(v) for v in self.radii)
        if len(c) != len(r):
            raise ValueError("center and radii must have the same length")
        if any(v <= 0 for v in r):
            raise ValueError("target radii must be positive")
        if self.kind not in ("ball", "box"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "extra", tuple(self.extra))

    @property
    def n(self) -> int:
        return len(self.center)

    def polynomials(self) -> list[Polynomial]:
        """Inequalities ``h_j(x) >= 0`` describing the set, in the (t, x) ring."""
        nv = self.n + 1
        scaled = [(Polynomial.variable(nv, i + 1) - c) / r for i, (c, r) in enumerate(zip(self.center, self.radii))]
        if self.kind == "ball":
            out = [1.0 - sum((s * s for s in scaled), Polynomial.zero(nv))]
        else:
            out = [1.0 - s * s for s in scaled]
        return out + list(self.extra)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = (x - np.array(self.center)) / np.array(self.radii)
        if self.kind == "ball":
            ok = np.sum(z * z, axis=1) <= 1.0 + tol
        else:
            ok = np.all(np.abs(z) <= 1.0 + tol, axis=1)
        for h in self.extra:
            pts = np.column_stack([np.zeros(len(x)), x])
            ok &= np.asarray(h.evaluate(pts)) >= -tol
        return ok

    def inside_box(self, box: StateBox) -> bool:
        c, r = np.array(self.center), np.array(self.radii)
        return bool(np.all(c - r >= np.array(box.lo) - 1e-12) and np.all(c + r <= np.array(box.hi) + 1e-12))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples from the ball/box part (extra inequalities ignored)."""
        n = self.n
        if self.kind == "box":
            z = rng.uniform(-1, 1, size=(count, n))
        else:
            d = rng.standard_normal((count, n))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            z = d * rng.uniform(0, 1, size=(count, 1)) ** (1.0 / n)
        return np.array(self.center) + z * np.array(self.radii)


@dataclass
class ControlAffineField:
    """``x' = f(t, x) + g(t, x) u`` with polynomial entries in (t, x)."""

    f: list[Polynomial]
    g: list[list[Polynomial]]
    box: StateBox | None = None
    ubounds: TorqueBounds | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.f)
        if not n or len(self.g) != n:
            raise ValueError("g must have one row per state")
        m = len(self.g[0])
        nv = n + 1
        for row in self.g:
            if len(row) != m:
                raise ValueError("g rows must all have m entries")
        for p in list(self.f) + [q for row in self.g for q in row]:
            if p.nvars != nv:
                raise ValueError(f"field polynomials must have {nv} variables (t plus states)")
        if self.box is not None and self.box.n != n:
            raise ValueError("box dimension does not match the field")
        if self.ubounds is not None and self.ubounds.m != m:
            raise ValueError("torque bounds dimension does not match the field")

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def m(self) -> int:
        return len(self.g[0])

    @property
    def nvars(self) -> int:
        return self.n + 1

    def degree(self) -> int:
        return max(p.degree for p in list(self.f) + [q for row in self.g for q in row])

    def evaluate(self, t, x, u) -> np.ndarray:
        """Vectorized field value for arrays ``t (N,)``, ``x (N, n)``, ``u (N, m)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        z = np.column_stack([t, x])
        out = np.column_stack([np.broadcast_to(p.evaluate(z), (x.shape[0],)) for p in self.f])
        for i in range(self.n):
            for j in range(self.m):
                out[:, i] += np.broadcast_to(self.g[i][j].evaluate(z), (x.shape[0],)) * u[:, j]
        return out

    def with_bounds(self, box: StateBox | None = None, ubounds: TorqueBounds | None = None) -> "ControlAffineField":
        return ControlAffineField(self.f, self.g, box or self.box, ubounds or self.ubounds, dict(self.meta))


# -- exact dynamics -----------------------------------------------------------
def ipm_dynamics_exact(state, torque, params: IpmParams) -> np.ndarray:
    """``(theta, theta_dot) -> (theta_dot, theta_ddot)``, vectorized over leading axes."""
    state = np.asarray(state, dtype=float)
    tau = np.asarray(torque, dtype=float)
    if tau.ndim == state.ndim:
        tau = tau[..., 0]
    th, om = state[..., 0], state[..., 1]
    acc = params.g / params.l * np.sin(th) + tau / (params.m * params.l ** 2)
    return np.stack([om, acc], axis=-1)


def dpm_mass_matrix(theta2, p: DpmParams) -> np.ndarray:
    c2 = np.cos(theta2)
    m11 = p.m1 * p.r1 ** 2 + p.m2 * (p.l1 ** 2 + p.r2 ** 2 + 2 * p.l1 * p.r2 * c2)
    m12 = p.m2 * (p.r2 ** 2 + p.l1 * p.r2 * c2)
    m22 = p.m2 * p.r2 ** 2 * np.ones_like(c2)
    return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)


def dpm_bias(state, p: DpmParams) -> np.ndarray:
    """Coriolis/centrifugal plus gravity terms ``C(q, q')q' + G(q)``."""
    state = np.asarray(state, dtype=float)
    th1, th2, w1, w2 = (state[..., i] for i in range(4))
    h = p.m2 * p.l1 * p.r2 * np.sin(th2)
    c1 = -h * (2 * w1 * w2 + w2 ** 2)
    c2 = h * w1 ** 2
    gam2 = -p.m2 * p.g * p.r2 * np.sin(th1 + th2)
    gam1 = -(p.m1 * p.r1 + p.m2 * p.l1) * p.g * np.sin(th1) + gam2
    return np.stack([c1 + gam1, c2 + gam2], axis=-1)


def dpm_dynamics_exact(state, torque, params: DpmParams) -> np.ndarray:
    """``(th1, th2, w1, w2) -> (w1, w2, a1, a2)`` solving ``M a + C w + G = tau``.

    ``th1`` is the ankle-to-hip angle from vertical and ``th2`` the hip angle
    of the upper body relative to the lower body; ``tau = (ankle, hip)``.
    """
    state = np.asarray(state, dtype=float)
    tau = np.broadcast_to(np.asarray(torque, dtype=float), state.shape[:-1] + (2,))
    M = dpm_mass_matrix(state[..., 1], params)
    rhs = tau - dpm_bias(state, params)
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] ** 2
    a1 = (M[..., 1, 1] * rhs[..., 0] - M[..., 0, 1] * rhs[..., 1]) / det
    a2 = (M[..., 0, 0] * rhs[..., 1] - M[..., 0, 1] * rhs[..., 0]) / det
    return np.stack([state[..., 2], state[..., 3], a1, a2], axis=-1)


def dpm_energy(state, p: DpmParams) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    th1, th2 = state[..., 0], state[..., 1]
    w = state[..., 2:4]
    M = dpm_mass_matrix(th2, p)
    kin = 0.5 * np.einsum("...i,...ij,...j->...", w, M, w)
    pot = p.m1 * p.g * p.r1 * np.cos(th1) + p.m2 * p.g * (p.l1 * np.cos(th1) + p.r2 * np.cos(th1 + th2))
    return kin + pot


def rk4_step(fun, x, h):
    k1 = fun(x)
    k2 = fun(x + 0.5 * h * k1)
    k3 = fun(x + 0.5 * h * k2)
    k4 = fun(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


# -- polynomial fields --------------------------------------------------------
def _expansion_error(field_: ControlAffineField, exact, box: StateBox | None, m: int, seed: int = 0) -> dict:
    if box is None:
        return {}
    rng = np.random.default_rng(seed)
    x = rng.uniform(box.lo, box.hi, size=(4000, box.n))
    zero = np.zeros((len(x), m))
    drift = np.max(np.abs(field_.evaluate(0.0, x, zero) - exact(x, zero)))
    inp = 0.0
    for j in range(m):
        e = np.zeros((len(x), m))
        e[:, j] = 1.0
        gj = field_.evaluate(0.0, x, e) - field_.evaluate(0.0, x, zero)
        gx = exact(x, e) - exact(x, zero)
        inp = max(inp, float(np.max(np.abs(gj - gx))))
    return {"max_drift_error": float(drift), "max_input_error": inp}


def ipm_polynomial_field(params: IpmParams, taylor_degree: int = 5, box: StateBox | None = None) -> ControlAffineField:
    if taylor_degree < 1:
        raise ValueError("taylor_degree must be at least 1")
    nv = 3
    th = Polynomial.variable(nv, 1)
    f = [Polynomial.variable(nv, 2), params.g / params.l * taylor_sin(nv, th, taylor_degree)]
    g = [[Polynomial.zero(nv)], [Polynomial.constant(nv, 1.0 / (params.m * params.l ** 2))]]
    fld = ControlAffineField(f, g, box, meta={"model": "ipm", "taylor_degree": taylor_degree})
    fld.meta.update(_expansion_error(fld, lambda x, u: ipm_dynamics_exact(x, u, params), box, 1))
    return fld


def dpm_polynomial_field(params: DpmParams, taylor_degree: int = 3, box: StateBox | None = None,
                         input_degree: int | None = None, warn_threshold: float = EXPANSION_WARN) -> ControlAffineField:
    """Truncated multivariate Taylor expansion about the upright state.

    ``input_degree`` truncates the state dependence of ``g = [0; M^-1]``;
    it defaults to ``taylor_degree - 1`` so that both blocks carry the same
    order of accuracy once multiplied by a state-affine input.
    """
    if taylor_degree < 1:
        raise ValueError("taylor_degree must be at least 1")
    dg = taylor_degree - 1 if input_degree is None else input_degree
    p = params
    nv = 5
    th1, th2, w1, w2 = (Polynomial.variable(nv, i) for i in range(1, 5))
    D = taylor_degree
    c2 = taylor_cos(nv, th2, D)
    s2 = taylor_sin(nv, th2, D)
    m11 = p.m1 * p.r1 ** 2 + p.m2 * (p.l1 ** 2 + p.r2 ** 2) + 2 * p.m2 * p.l1 * p.r2 * c2
    m12 = p.m2 * p.r2 ** 2 + p.m2 * p.l1 * p.r2 * c2
    m22 = Polynomial.constant(nv, p.m2 * p.r2 ** 2)
    # det M = m2 r2^2 (m1 r1^2 + m2 l1^2 sin^2 th2); expand 1/det as a geometric series
    d0 = p.m2 * p.r2 ** 2 * p.m1 * p.r1 ** 2
    delta = (p.m2 * p.r2 * p.l1) ** 2 * (s2 * s2).truncate(D)
    inv_det = Polynomial.constant(nv, 1.0 / d0)
    term = Polynomial.constant(nv, 1.0 / d0)
    for _ in range(D // 2):
        term = (term * delta).truncate(D) * (-1.0 / d0)
        inv_det = inv_det + term
    minv = [[(m22 * inv_det).truncate(D), (-1.0 * m12 * inv_det).truncate(D)],
            [(-1.0 * m12 * inv_det).truncate(D), (m11 * inv_det).truncate(D)]]
    h = p.m2 * p.l1 * p.r2 * s2
    cor = [-1.0 * h * (2 * w1 * w2 + w2 * w2), h * w1 * w1]
    s12 = taylor_sin(nv, th1 + th2, D)
    gam2 = -p.m2 * p.g * p.r2 * s12
    gam1 = -(p.m1 * p.r1 + p.m2 * p.l1) * p.g * taylor_sin(nv, th1, D) + gam2
    rhs = [(-1.0 * (cor[0] + gam1)).truncate(D), (-1.0 * (cor[1] + gam2)).truncate(D)]
    acc = [(minv[i][0] * rhs[0] + minv[i][1] * rhs[1]).truncate(D) for i in range(2)]
    zero = Polynomial.zero(nv)
    f = [w1, w2, acc[0], acc[1]]
    g = [[zero, zero], [zero, zero],
         [minv[0][0].truncate(dg), minv[0][1].truncate(dg)],
         [minv[1][0].truncate(dg), minv[1][1].truncate(dg)]]
    fld = ControlAffineField(f, g, box, meta={"model": "dpm", "taylor_degree": taylor_degree, "input_degree": dg})
    err = _expansion_error(fld, lambda x, u: dpm_dynamics_exact(x, u, params), box, 2)
    fld.meta.update(err)
    if err and max(err.values()) > warn_threshold:
        fld.meta["warning"] = f"Taylor expansion error {max(err.values()):.3g} exceeds {warn_threshold:g} on the box"
    return fld


# -- identification from segment trajectories --------------------------------
def _ray_angle(origin, tip):
    """Angle from vertical of the ``origin -> tip`` ray, positive forward (+x)."""
    d = np.asarray(tip, float) - np.asarray(origin, float)
    return np.arctan2(d[..., 0], d[..., 1])


def _distance(a, b, what: str) -> np.ndarray:
    d = np.linalg.norm(np.asarray(b, float) - np.asarray(a, float), axis=-1)
    if np.any(d < 1e-9):
        raise ValueError(f"degenerate trajectory: {what} coincide")
    return d


def _states_from_angles(t, angles: np.ndarray, names, rate) -> ObservedTrajectory:
    from .signal import finite_difference_velocity

    angles = np.unwrap(angles, axis=0)
    vel = finite_difference_velocity(angles, 1.0 / rate)
    return ObservedTrajectory(t - t[0], np.column_stack([angles, vel]), names, rate)


def fit_ipm_params(t, ankle, com, subject_mass: float, rate: float | None = None, g: float = 9.81):
    """Pendulum length is the mean ankle-to-COM distance; theta is the COM ray angle.

    ``ankle`` and ``com`` are ``(N, 2)`` arrays of (forward, up) positions.
    """
    t = np.asarray(t, float)
    rate = rate or (len(t) - 1) / (t[-1] - t[0])
    ankle = np.broadcast_to(np.asarray(ankle, float), np.shape(com))
    l = float(np.mean(_distance(ankle, com, "COM and ankle")))
    theta = _ray_angle(ankle, com)
    traj = _states_from_angles(t, theta[:, None], ["theta", "theta_dot"], rate)
    return IpmParams(subject_mass, l, g), traj


def fit_dpm_params(t, ankle, hip, com_lower, com_upper, m1: float, m2: float,
                   rate: float | None = None, g: float = 9.81):
    """Segment lengths are time averages; th2 is the upper-body angle relative to th1."""
    t = np.asarray(t, float)
    rate = rate or (len(t) - 1) / (t[-1] - t[0])
    ankle = np.broadcast_to(np.asarray(ankle, float), np.shape(hip))
    l1 = float(np.mean(_distance(ankle, hip, "hip and ankle")))
    r1 = float(np.mean(_distance(ankle, com_lower, "lower COM and ankle")))
    r2 = float(np.mean(_distance(hip, com_upper, "upper COM and hip")))
    th1 = _ray_angle(ankle, hip)
    phi = _ray_angle(hip, com_upper)
    th2 = np.angle(np.exp(1j * (phi - th1)))
    traj = _states_from_angles(t, np.column_stack([th1, th2]), ["theta1", "theta2", "theta1_dot", "theta2_dot"], rate)
    return DpmParams(m1, m2, l1, min(r1, l1), r2, g), traj


def ipm_positions(traj: ObservedTrajectory, params: IpmParams):
    th = traj.x[:, 0]
    return np.zeros((len(th), 2)), params.l * np.column_stack([np.sin(th), np.cos(th)])


def dpm_positions(traj: ObservedTrajectory, params: DpmParams):
    """Ankle, hip, lower COM and upper COM positions for a DPM state trajectory."""
    th1, th2 = traj.x[:, 0], traj.x[:, 1]
    ray1 = np.column_stack([np.sin(th1), np.cos(th1)])
    ray2 = np.column_stack([np.sin(th1 + th2), np.cos(th1 + th2)])
    ankle = np.zeros_like(ray1)
    hip = params.l1 * ray1
    return ankle, hip, params.r1 * ray1, hip + params.r2 * ray2


# -- bound identification -----------------------------------------------------
def derive_state_box(traj: ObservedTrajectory, margin: float = 0.25, floor: float = RANGE_FLOOR) -> StateBox:
    """Observed per-state [min, max] inflated by ``margin * range`` on each side."""
    if traj.x.shape[0] == 0:
        raise ValueError("empty trajectory")
    lo = traj.x.min(axis=0)
    hi = traj.x.max(axis=0)
    rng = hi - lo
    pad = margin * rng
    lo, hi = lo - pad, hi + pad
    thin = (hi - lo) < 2 * floor
    mid = 0.5 * (lo + hi)
    lo = np.where(thin, mid - floor, lo)
    hi = np.where(thin, mid + floor, hi)
    return StateBox(tuple(lo), tuple(hi), traj.T)


def derive_torque_bounds(u_obs: Sequence[Polynomial], grid, floor: float = RANGE_FLOOR) -> TorqueBounds:
    """Per-channel min/max of ``u_obs(t)`` over the time grid."""
    grid = np.asarray(grid, float)
    lo, hi = [], []
    for p in u_obs:
        z = np.zeros((grid.size, p.nvars))
        z[:, 0] = grid
        vals = np.broadcast_to(p.evaluate(z), grid.shape)
        a, b = float(vals.min()), float(vals.max())
        if b - a < 2 * floor:
            mid = 0.5 * (a + b)
            a, b = mid - floor, mid + floor
        lo.append(a)
        hi.append(b)
    return TorqueBounds(tuple(lo), tuple(hi))


def default_target(traj: ObservedTrajectory, box: StateBox, fraction: float = 0.15) -> TargetSet:
    """Ball around the final observed state with radii a fraction of the box widths."""
    widths = np.array(box.hi) - np.array(box.lo)
    r = fraction * widths
    c = traj.x[-1].copy()
    c = np.clip(c, np.array(box.lo) + r, np.array(box.hi) - r)
    return TargetSet(tuple(c), tuple(r), "ball")


# -- parameter files ----------------------------------------------------------
_UNITS = {"m": "kg", "m1": "kg", "m2": "kg", "l": "m", "l1": "m", "r1": "m", "r2": "m", "g": "m/s^2"}


def save_model(path, params, box: StateBox | None = None, target: TargetSet | None = None,
               ubounds: TorqueBounds | None = None) -> None:
    vals = {"model": "ipm" if isinstance(params, IpmParams) else "dpm"}
    vals.update({k: float(v) for k, v in params.__dict__.items()})
    if box is not None:
        vals.update(box_lo=box.lo, box_hi=box.hi, T=box.T)
    if target is not None:
        vals.update(target_kind=target.kind, target_center=target.center, target_radii=target.radii)
    if ubounds is not None:
        vals.update(u_lo=ubounds.lo, u_hi=ubounds.hi)
    comments = {k: f"unit: {u}" for k, u in _UNITS.items()}
    comments.update(box_lo="state box lower corner (rad, rad/s)", T="horizon (s)", u_lo="torque bounds (N m)")
    write_keyvalue(path, vals, comments)


def load_model(path):
    kv = read_keyvalue(path)
    kind = kv.get("model", "ipm")
    names = ("m", "l", "g") if kind == "ipm" else ("m1", "m2", "l1", "r1", "r2", "g")
    cls = IpmParams if kind == "ipm" else DpmParams
    params = cls(**{k: float(kv[k]) for k in names if k in kv})
    box = StateBox(_floats(kv["box_lo"]), _floats(kv["box_hi"]), float(kv["T"])) if "box_lo" in kv else None
    target = None
    if "target_center" in kv:
        target = TargetSet(_floats(kv["target_center"]), _floats(kv["target_radii"]), kv.get("target_kind", "ball"))
    ub = TorqueBounds(_floats(kv["u_lo"]), _floats(kv["u_hi"])) if "u_lo" in kv else None
    return params, box, target, ub


def ipm_linearization(params: IpmParams):
    A = np.array([[0.0, 1.0], [params.g / params.l, 0.0]])
    B = np.array([[0.0], [1.0 / (params.m * params.l ** 2)]])
    return A, B


def finite_difference_jacobian(fun, x0, h: float = 1e-6) -> np.ndarray:
    x0 = np.asarray(x0, float)
    f0 = fun(x0)
    J = np.zeros((f0.size, x0.size))
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        J[:, i] = (fun(x0 + e) - fun(x0 - e)) / (2 * h)
    return J




@dataclass(frozen=True)
class SyntheticSubject:
    """Anthropometry of a synthetic subject (segment fractions of body height and mass)."""

    name: str
    mass: float
    height: float
    foot: float = 0.25

    @property
    def ipm(self) -> IpmParams:
        return IpmParams(self.mass, 0.53 * self.height)

    @property
    def dpm(self) -> DpmParams:
        l1 = 0.47 * self.height
        return DpmParams(0.32 * self.mass, 0.68 * self.mass, l1, 0.55 * l1, 0.17 * self.height)


def synthetic_subjects(count: int = 5, seed: int = 0) -> list[SyntheticSubject]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        h = float(rng.uniform(1.6, 1.9))
        bmi = float(rng.uniform(20.0, 27.0))
        out.append(SyntheticSubject(f"S{k + 1}", round(bmi * h * h, 3), round(h, 4), round(0.15 * h, 4)))
    return out
