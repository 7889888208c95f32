"""LQR gain design, the tracking feedback law and closed-loop assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import ControlAffineField, StateBox, TargetSet, TorqueBounds
from .poly import Polynomial
from .signal import ObservedTrajectory
from .textio import floats, read_sections, write_sections


class CareError(RuntimeError):
    def __init__(self, message: str, history: Sequence[float] = ()):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class LqrWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if not np.allclose(Q, Q.T) or np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(R, R.T) or np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
            raise ValueError("R must be symmetric positive definite")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "R", 0.5 * (R + R.T))

    @classmethod
    def default(cls, n: int, m: int) -> "LqrWeights":
        return cls(np.eye(n) / 2, 0.005 * np.eye(m))


@dataclass
class CareSolution:
    P: np.ndarray
    K: np.ndarray
    residual: float
    iterations: int
    history: list = field(default_factory=list)


@dataclass
class FeedbackLaw:
    """``u(t, x) = u_obs(t) + K (x - x_ref(t))`` with ``K`` the applied (stabilizing) gain."""

    u_obs: list[Polynomial]
    x_ref: list[Polynomial]
    K: np.ndarray
    bounds: TorqueBounds | None = None

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if self.K.shape != (len(self.u_obs), len(self.x_ref)):
            raise ValueError(f"K has shape {self.K.shape}, expected {(len(self.u_obs), len(self.x_ref))}")
        if not np.all(np.isfinite(self.K)):
            raise ValueError("gain entries must be finite")

    @property
    def n(self) -> int:
        return len(self.x_ref)

    @property
    def m(self) -> int:
        return len(self.u_obs)

    @property
    def nvars(self) -> int:
        return self.n + 1

    def polynomials(self) -> list[Polynomial]:
        """The law as polynomials in (t, x)."""
        nv = self.nvars
        out = []
        for i in range(self.m):
            u = self.u_obs[i]
            for j in range(self.n):
                if self.K[i, j] != 0:
                    u = u + self.K[i, j] * (Polynomial.variable(nv, j + 1) - self.x_ref[j])
            out.append(u)
        return out

    def reference(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        z = np.zeros((t.size, self.nvars))
        z[:, 0] = t
        return np.column_stack([np.broadcast_to(p.evaluate(z), t.shape) for p in self.x_ref])

    def feedforward(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        z = np.zeros((t.size, self.nvars))
        z[:, 0] = t
        return np.column_stack([np.broadcast_to(p.evaluate(z), t.shape) for p in self.u_obs])

    def __call__(self, t, x, saturate: bool = False) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        t = np.broadcast_to(np.asarray(t, float), (x.shape[0],))
        u = self.feedforward(t) + (x - self.reference(t)) @ self.K.T
        if saturate and self.bounds is not None:
            u = self.bounds.clip(u)
        return u

    def save(self, path) -> None:
        header = {"nvars": self.nvars, "n": self.n, "m": self.m, "K": self.K}
        if self.bounds is not None:
            header.update(u_lo=self.bounds.lo, u_hi=self.bounds.hi)
        polys = {f"u_obs.{i}": p for i, p in enumerate(self.u_obs)}
        polys.update({f"x_ref.{j}": p for j, p in enumerate(self.x_ref)})
        write_sections(path, header, polys)

    @classmethod
    def load(cls, path) -> "FeedbackLaw":
        header, polys, _ = read_sections(path)
        n, m = int(header["n"]), int(header["m"])
        K = np.array(floats(header["K"])).reshape(m, n)
        bounds = TorqueBounds(floats(header["u_lo"]), floats(header["u_hi"])) if "u_lo" in header else None
        return cls([polys[f"u_obs.{i}"] for i in range(m)], [polys[f"x_ref.{j}"] for j in range(n)], K, bounds)


@dataclass
class ClosedLoopField:
    """Closed-loop vector field ``F(t, x)`` on ``[0, T] x X`` with its target set."""

    F: list[Polynomial]
    box: StateBox
    target: TargetSet | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.F) != self.box.n:
            raise ValueError("field and box dimensions differ")
        if self.target is not None and self.target.n != self.box.n:
            raise ValueError("target and box dimensions differ")

    @property
    def n(self) -> int:
        return len(self.F)

    @property
    def nvars(self) -> int:
        return self.n + 1

    @property
    def T(self) -> float:
        return self.box.T

    def degree(self) -> int:
        return max(p.degree for p in self.F)

    def evaluate(self, t, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        z = np.column_stack([np.broadcast_to(np.asarray(t, float), (x.shape[0],)), x])
        return np.column_stack([np.broadcast_to(p.evaluate(z), (x.shape[0],)) for p in self.F])


# -- linearization and Riccati --------------------------------------------------
def linearize_small_angle(fld: ControlAffineField) -> tuple[np.ndarray, np.ndarray]:
    """Jacobian of ``f`` in x and the value of ``g`` at ``(t, x) = 0``."""
    n, m = fld.n, fld.m
    origin = np.zeros(fld.nvars)
    A = np.array([[float(fld.f[i].differentiate(j + 1).evaluate(origin)) for j in range(n)] for i in range(n)])
    B = np.array([[float(fld.g[i][j].evaluate(origin)) for j in range(m)] for i in range(n)])
    return A, B


def solve_lyapunov(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve ``A' P + P A + Q = 0`` by the vectorized Kronecker system."""
    n = A.shape[0]
    I = np.eye(n)
    L = np.kron(I, A.T) + np.kron(A.T, I)
    P = np.linalg.solve(L, -Q.reshape(-1, order="F")).reshape((n, n), order="F")
    return 0.5 * (P + P.T)


def is_stabilizable(A, B, tol: float = 1e-9) -> bool:
    """PBH test on the eigenvalues with non-negative real part."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= -tol:
            M = np.hstack([A - lam * np.eye(n), B])
            if np.linalg.matrix_rank(M, tol=1e-9 * max(1.0, np.linalg.norm(M))) < n:
                return False
    return True


def stabilizing_gain(A, B) -> np.ndarray:
    """A gain with ``A - B K`` Hurwitz, by shifting the spectrum (Bass' method)."""
    n, m = B.shape
    eig = np.linalg.eigvals(A)
    # a margin, so eigenvalues within rounding of the axis still get shifted
    if np.max(eig.real) < -1e-6 * max(1.0, float(np.max(np.abs(eig)))):
        return np.zeros((m, n))
    beta = max(0.0, float(np.max(eig.real))) + 1.0 + float(np.max(np.abs(eig)))
    Ab = A + beta * np.eye(n)
    Z = solve_lyapunov(Ab.T, -2.0 * B @ B.T)  # Ab Z + Z Ab' = 2 B B'
    K = B.T @ np.linalg.pinv(Z)
    if np.max(np.linalg.eigvals(A - B @ K).real) >= 0:
        raise CareError("could not construct an initial stabilizing gain")
    return K


def care_residual(A, B, Q, R, P) -> np.ndarray:
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def solve_care(A, B, weights: LqrWeights, tol: float = 1e-12, max_iter: int = 100) -> CareSolution:
    """Kleinman-Newton iteration for the continuous algebraic Riccati equation.

    Returns ``P`` and the textbook gain ``K = R^-1 B' P`` (closed loop ``A - B K``).
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    if B.shape[0] != A.shape[0]:
        B = B.T
    Q, R = weights.Q, weights.R
    if not is_stabilizable(A, B):
        raise CareError("(A, B) is not stabilizable")
    K = stabilizing_gain(A, B)
    qn = max(np.linalg.norm(Q), 1e-300)
    history = []
    P = np.zeros_like(A)
    for it in range(1, max_iter + 1):
        Ak = A - B @ K
        P_new = solve_lyapunov(Ak, Q + K.T @ R @ K)
        K_new = np.linalg.solve(R, B.T @ P_new)
        res = float(np.linalg.norm(care_residual(A, B, Q, R, P_new)))
        history.append(res)
        step = np.linalg.norm(P_new - P)
        P, K = P_new, K_new
        if res <= tol * qn or step <= 1e-15 * max(1.0, np.linalg.norm(P)):
            break
        # quadratic convergence has ended at the rounding floor
        if len(history) > 1 and res > 0.5 * history[-2] and res <= 1e-8 * qn:
            break
    else:
        raise CareError(f"Newton iteration did not converge in {max_iter} steps", history)
    res = float(np.linalg.norm(care_residual(A, B, Q, R, P)))
    if res > 1e-8 * max(np.linalg.norm(Q), 0.0) and res > 1e-14:
        raise CareError(f"Riccati residual {res:.3g} above tolerance", history)
    if np.max(np.linalg.eigvals(A - B @ K).real) >= -1e-9:
        raise CareError("closed loop is not strictly stable", history)
    return CareSolution(P, K, res, it, history)


# -- reference fitting and assembly ---------------------------------------------
def fit_time_polynomial(t, y, degree: int, nvars: int) -> tuple[Polynomial, float]:
    """Least-squares polynomial in t (fit on normalized time); returns max abs error."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if degree >= t.size:
        raise ValueError("fit degree must be below the number of samples")
    T = float(t[-1] - t[0]) or 1.0
    s = (t - t[0]) / T
    V = np.vander(s, degree + 1, increasing=True)
    coef, _, rank, sv = np.linalg.lstsq(V, y, rcond=None)
    if rank < degree + 1 or sv[-1] < 1e-12 * sv[0]:
        raise ValueError("ill-conditioned reference fit (rank deficient)")
    err = float(np.max(np.abs(V @ coef - y)))
    # back to physical time: p(t) = sum c_k ((t - t0)/T)^k
    tt = (Polynomial.variable(nvars, 0) - float(t[0])) / T
    p = Polynomial.zero(nvars)
    for c in coef[::-1]:
        p = p * tt + float(c)
    return p, err


def fit_reference_polynomial(x_obs: ObservedTrajectory, degree: int) -> tuple[list[Polynomial], np.ndarray]:
    nv = x_obs.n + 1
    polys, errs = [], []
    for j in range(x_obs.n):
        p, e = fit_time_polynomial(x_obs.t, x_obs.x[:, j], degree, nv)
        polys.append(p)
        errs.append(e)
    return polys, np.array(errs)


def assemble_closed_loop(fld: ControlAffineField, law: FeedbackLaw, box: StateBox | None = None,
                         target: TargetSet | None = None, check_points: int = 100, seed: int = 0) -> ClosedLoopField:
    """Substitute the feedback law into ``f + g u``; verified pointwise."""
    if law.n != fld.n or law.m != fld.m:
        raise ValueError("law and field dimensions differ")
    box = box or fld.box
    if box is None:
        raise ValueError("a state box is required")
    u = law.polynomials()
    F = []
    for i in range(fld.n):
        Fi = fld.f[i]
        for j in range(fld.m):
            if not fld.g[i][j].is_zero():
                Fi = Fi + fld.g[i][j] * u[j]
        F.append(Fi)
    cl = ClosedLoopField(F, box, target, meta={"model": fld.meta.get("model", "custom")})
    if check_points:
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, box.T, check_points)
        x = rng.uniform(box.lo, box.hi, (check_points, fld.n))
        want = fld.evaluate(t, x, law(t, x))
        got = cl.evaluate(t, x)
        scale = 1.0 + np.max(np.abs(want))
        if np.max(np.abs(got - want)) > 1e-10 * scale:
            raise AssertionError("closed-loop assembly does not match f + g u")
    return cl


def saturation_check(law: FeedbackLaw, box: StateBox, bounds: TorqueBounds | None = None,
                     density: int = 21, max_points: int = 200_000) -> dict:
    """Torque-bound violation of the unsaturated law over a (t, x) grid."""
    bounds = bounds or law.bounds
    if bounds is None:
        raise ValueError("torque bounds are required")
    dims = 1 + box.n
    per = max(2, min(density, int(max_points ** (1.0 / dims))))
    axes = [np.linspace(0, box.T, per)] + [np.linspace(a, b, per) for a, b in zip(box.lo, box.hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dims)
    u = law(grid[:, 0], grid[:, 1:])
    lo, hi = np.array(bounds.lo), np.array(bounds.hi)
    viol = np.maximum(np.maximum(u - hi, lo - u), 0.0)
    return {
        "max_violation": viol.max(axis=0).tolist(),
        "violation_fraction": float(np.mean(np.any(viol > 0, axis=1))),
        "grid_points": int(grid.shape[0]),
    }
