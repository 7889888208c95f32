"""Feedforward input identification by trapezoidal direct transcription.

The input is a polynomial of fixed degree in normalized time ``s = t / T``;
the states at the nodes are free.  Dynamics enter as defect residuals
handled by a quadratic penalty whose weight is increased in a few outer
steps.  Each inner problem is a bounded nonlinear least-squares solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares

from .models import ControlAffineField, StateBox
from .poly import Polynomial
from .signal import ObservedTrajectory
from .textio import floats, read_sections, write_sections

log = logging.getLogger(__name__)


@dataclass
class TrackingSettings:
    penalty0: float = 1e2
    penalty_growth: float = 10.0
    outer_steps: int = 5
    input_bound: float = 1e3
    defect_tol: float = 1e-6
    max_nfev: int = 200
    ftol: float = 1e-12
    xtol: float = 1e-12
    gtol: float = 1e-10


@dataclass
class TrackingProblem:
    field: ControlAffineField
    x_obs: ObservedTrajectory
    input_degree: int = 6
    nodes: int = 101
    box: StateBox | None = None

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("need at least two nodes")
        if self.input_degree < 0:
            raise ValueError("input degree must be non-negative")
        if self.x_obs.n != self.field.n:
            raise ValueError("observed trajectory and field have different state dimensions")
        self.box = self.box or self.field.box
        if self.box is not None and abs(self.box.T - self.x_obs.T) > 1e-9 * max(1.0, self.x_obs.T):
            raise ValueError("box horizon differs from the trajectory duration")

    @property
    def T(self) -> float:
        return self.x_obs.T

    @property
    def n_variables(self) -> int:
        return self.nodes * self.field.n + (self.input_degree + 1) * self.field.m


@dataclass
class TrackingSolution:
    u_obs: list[Polynomial]
    t: np.ndarray
    states: np.ndarray
    objective: float
    max_defect: float
    converged: bool
    coefficients: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def inputs(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        z = np.zeros((t.size, self.u_obs[0].nvars))
        z[:, 0] = t
        return np.column_stack([np.broadcast_to(p.evaluate(z), t.shape) for p in self.u_obs])

    def save(self, path, nodes_path=None) -> None:
        """Input polynomials with a diagnostics footer; node states go to ``nodes_path`` as CSV."""
        header = {"nvars": self.u_obs[0].nvars, "m": len(self.u_obs), "objective": self.objective,
                  "max_defect": self.max_defect, "converged": self.converged, "coefficients": self.coefficients}
        d = self.diagnostics
        footer = {k: d[k] for k in ("function_evaluations", "merit_initial", "merit_final",
                                    "state_bound_active_nodes", "rms_tracking", "variables") if k in d}
        write_sections(path, header, {f"u_obs.{i}": p for i, p in enumerate(self.u_obs)}, footer)
        if nodes_path is not None:
            n = self.states.shape[1]
            np.savetxt(nodes_path, np.column_stack([self.t, self.states]), delimiter=",",
                       header=",".join(["t"] + [f"x{i}" for i in range(n)]), comments="", fmt="%.17g")

    @classmethod
    def load(cls, path, nodes_path=None) -> "TrackingSolution":
        h, polys, footer = read_sections(path)
        m = int(h["m"])
        t = np.zeros(0)
        states = np.zeros((0, 0))
        if nodes_path is not None:
            data = np.loadtxt(nodes_path, delimiter=",", skiprows=1, ndmin=2)
            t, states = data[:, 0], data[:, 1:]
        diag = {k: (list(floats(v)) if k == "rms_tracking" else float(v)) for k, v in footer.items()}
        return cls([polys[f"u_obs.{i}"] for i in range(m)], t, states, float(h["objective"]),
                   float(h["max_defect"]), h["converged"] == "true", np.array(floats(h["coefficients"])).reshape(-1, m), diag)


class Transcription:
    """Residual model of the discretized tracking problem."""

    def __init__(self, problem: TrackingProblem):
        self.p = problem
        fld = problem.field
        self.n, self.m = fld.n, fld.m
        self.N = problem.nodes
        self.d = problem.input_degree
        self.t = np.linspace(0.0, problem.T, self.N)
        self.h = self.t[1] - self.t[0]
        self.s = self.t / problem.T
        self.V = np.vander(self.s, self.d + 1, increasing=True)  # (N, d+1)
        self.x_ref = problem.x_obs.interp(self.t)
        box = problem.box
        if box is not None:
            self.scale = np.array(box.hi) - np.array(box.lo)
        else:
            self.scale = np.maximum(np.ptp(self.x_ref, axis=0), 1e-3)
        nv = fld.nvars
        self.df = [[fld.f[i].differentiate(j + 1) for j in range(self.n)] for i in range(self.n)]
        self.dg = [[[fld.g[i][k].differentiate(j + 1) for j in range(self.n)] for k in range(self.m)]
                   for i in range(self.n)]
        self.nv = nv

    # variables: node states (row-major N x n) then input coefficients ((d+1) x m)
    def split(self, w):
        X = w[: self.N * self.n].reshape(self.N, self.n)
        a = w[self.N * self.n:].reshape(self.d + 1, self.m)
        return X, a

    def pack(self, X, a):
        return np.concatenate([np.ravel(X), np.ravel(a)])

    def _points(self, X):
        return np.column_stack([self.t, X])

    def rhs(self, X, U):
        z = self._points(X)
        fld = self.p.field
        F = np.column_stack([np.broadcast_to(p.evaluate(z), (self.N,)) for p in fld.f]).astype(float)
        for i in range(self.n):
            for k in range(self.m):
                F[:, i] += np.broadcast_to(fld.g[i][k].evaluate(z), (self.N,)) * U[:, k]
        return F

    def jac_rhs(self, X, U):
        """``dF_i/dx_j`` (N, n, n) and ``dF_i/du_k`` (N, n, m)."""
        z = self._points(X)
        fld = self.p.field
        Jx = np.zeros((self.N, self.n, self.n))
        Ju = np.zeros((self.N, self.n, self.m))
        for i in range(self.n):
            for j in range(self.n):
                col = np.broadcast_to(self.df[i][j].evaluate(z), (self.N,)).copy()
                for k in range(self.m):
                    col += np.broadcast_to(self.dg[i][k][j].evaluate(z), (self.N,)) * U[:, k]
                Jx[:, i, j] = col
            for k in range(self.m):
                Ju[:, i, k] = np.broadcast_to(fld.g[i][k].evaluate(z), (self.N,))
        return Jx, Ju

    def defects(self, X, a):
        U = self.V @ a
        F = self.rhs(X, U)
        return (X[1:] - X[:-1] - 0.5 * self.h * (F[1:] + F[:-1])) / self.scale

    def objective(self, X) -> float:
        return float(self.h * np.sum((X - self.x_ref) ** 2))

    def residuals(self, w, rho, ubound):
        X, a = self.split(w)
        U = self.V @ a
        track = np.sqrt(self.h) * (X - self.x_ref)
        F = self.rhs(X, U)
        dfx = (X[1:] - X[:-1] - 0.5 * self.h * (F[1:] + F[:-1])) / self.scale
        hinge = np.maximum(np.abs(U) - ubound, 0.0)
        return np.concatenate([track.ravel(), np.sqrt(rho) * dfx.ravel(), np.sqrt(rho) * hinge.ravel()])

    def jacobian(self, w, rho, ubound):
        X, a = self.split(w)
        U = self.V @ a
        N, n, m, d = self.N, self.n, self.m, self.d
        nx = N * n
        nvar = nx + (d + 1) * m
        sr = np.sqrt(rho)
        Jx, Ju = self.jac_rhs(X, U)
        hh = 0.5 * self.h
        rows, cols, vals = [np.arange(nx)], [np.arange(nx)], [np.full(nx, np.sqrt(self.h))]
        r0 = nx
        k = np.arange(N - 1)
        i_idx, j_idx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        sc = self.scale[None, :, None]
        eye = np.eye(n)[None]
        for shift, blk in ((0, -eye - hh * Jx[:-1]), (1, eye - hh * Jx[1:])):
            blk = sr * blk / sc  # (N-1, n, n)
            rows.append((r0 + k[:, None, None] * n + i_idx[None]).ravel())
            cols.append(((k[:, None, None] + shift) * n + j_idx[None]).ravel())
            vals.append(blk.ravel())
        # input coefficients: -(h/2)(Ju[k] V[k, c] + Ju[k+1] V[k+1, c])
        blk = -hh * (Ju[:-1, :, None, :] * self.V[:-1, None, :, None] + Ju[1:, :, None, :] * self.V[1:, None, :, None])
        blk = sr * blk / self.scale[None, :, None, None]  # (N-1, n, d+1, m)
        kk, ii, cc, qq = np.meshgrid(k, np.arange(n), np.arange(d + 1), np.arange(m), indexing="ij")
        rows.append((r0 + kk * n + ii).ravel())
        cols.append((nx + cc * m + qq).ravel())
        vals.append(blk.ravel())
        r1 = r0 + (N - 1) * n
        act = np.argwhere(np.abs(U) > ubound)
        for kn, q in act:
            rows.append(np.full(d + 1, r1 + kn * m + q))
            cols.append(nx + np.arange(d + 1) * m + q)
            vals.append(sr * np.sign(U[kn, q]) * self.V[kn])
        shape = (r1 + N * m, nvar)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)


def transcribe(problem: TrackingProblem) -> Transcription:
    return Transcription(problem)


def _to_physical(coeffs: np.ndarray, T: float, nvars: int) -> list[Polynomial]:
    out = []
    for q in range(coeffs.shape[1]):
        c = coeffs[:, q] / T ** np.arange(coeffs.shape[0])
        out.append(Polynomial.univariate(nvars, 0, c))
    return out


def _dense(jac):
    return lambda w, *args: jac(w, *args).toarray()


def solve_tracking(problem: TrackingProblem, settings: TrackingSettings | None = None) -> TrackingSolution:
    s = settings or TrackingSettings()
    tr = transcribe(problem)
    X0 = tr.x_ref.copy()
    box = problem.box
    if box is not None:
        lo = np.tile(np.array(box.lo), tr.N)
        hi = np.tile(np.array(box.hi), tr.N)
        pad = 1e-9 * (hi - lo)
        X0 = np.clip(X0, np.array(box.lo) + pad[: tr.n], np.array(box.hi) - pad[: tr.n])
        lb = np.concatenate([lo, np.full((tr.d + 1) * tr.m, -np.inf)])
        ub = np.concatenate([hi, np.full((tr.d + 1) * tr.m, np.inf)])
    else:
        lb, ub = -np.inf, np.inf
    w = tr.pack(X0, np.zeros((tr.d + 1, tr.m)))
    rho_final = s.penalty0 * s.penalty_growth ** (s.outer_steps - 1)
    init_merit = float(np.sum(tr.residuals(w, rho_final, s.input_bound) ** 2))
    rho = s.penalty0
    history = []
    nfev = 0
    ok = True
    for step in range(s.outer_steps):
        # a few hundred unknowns: the dense exact trust-region step is far more
        # reliable than the iterative sparse one on these stiff penalty problems
        res = least_squares(tr.residuals, w, jac=_dense(tr.jacobian), bounds=(lb, ub), method="trf",
                            tr_solver="exact", args=(rho, s.input_bound), ftol=s.ftol, xtol=s.xtol,
                            gtol=s.gtol, max_nfev=s.max_nfev, x_scale="jac")
        w = res.x
        nfev += res.nfev
        X, a = tr.split(w)
        md = float(np.max(np.abs(tr.defects(X, a))))
        history.append({"penalty": rho, "max_defect": md, "objective": tr.objective(X), "status": int(res.status),
                        "optimality": float(res.optimality)})
        log.debug("penalty %.1e defect %.2e objective %.3e", rho, md, tr.objective(X))
        ok = res.status > 0
        rho *= s.penalty_growth
    X, a = tr.split(w)
    U = tr.V @ a
    md = float(np.max(np.abs(tr.defects(X, a))))
    final_merit = float(np.sum(tr.residuals(w, rho_final, s.input_bound) ** 2))
    at_bounds = 0
    if box is not None:
        at_bounds = int(np.sum(np.isclose(X, np.array(box.lo), atol=1e-8 * tr.scale)
                               | np.isclose(X, np.array(box.hi), atol=1e-8 * tr.scale)))
    converged = ok and md <= s.defect_tol and final_merit <= init_merit + 1e-12 and \
        bool(np.all(np.abs(U) <= s.input_bound + 1e-9))
    diag = {
        "history": history,
        "function_evaluations": nfev,
        "merit_initial": init_merit,
        "merit_final": final_merit,
        "state_bound_active_nodes": at_bounds,
        "rms_tracking": np.sqrt(np.mean((X - tr.x_ref) ** 2, axis=0)).tolist(),
        "variables": problem.n_variables,
    }
    u_obs = _to_physical(a, problem.T, problem.field.nvars)
    return TrackingSolution(u_obs, tr.t, X, tr.objective(X), md, converged, a, diag)


def rollout(fld: ControlAffineField, u_obs: list[Polynomial], x0, T: float, steps: int = 1000, dynamics=None):
    """RK4 rollout of the feedforward input; ``dynamics(x, u)`` overrides the polynomial field."""
    h = T / steps
    x = np.asarray(x0, float).copy()
    ts = np.linspace(0.0, T, steps + 1)
    out = np.zeros((steps + 1, x.size))
    out[0] = x
    nv = fld.nvars

    def u_at(t):
        z = np.zeros(nv)
        z[0] = t
        return np.array([p.evaluate(z) for p in u_obs])

    def rhs(t, x):
        u = u_at(t)
        if dynamics is not None:
            return dynamics(x, u)
        return fld.evaluate(np.array([t]), x[None, :], u[None, :])[0]

    for k in range(steps):
        t = ts[k]
        k1 = rhs(t, x)
        k2 = rhs(t + h / 2, x + h / 2 * k1)
        k3 = rhs(t + h / 2, x + h / 2 * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = x
    return ts, out
