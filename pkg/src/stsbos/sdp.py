"""Dense block-diagonal SDP solver (primal-dual path following).

Standard form handled here::

    min  <C, X> + c_f' x_f
    s.t. <A_i, X> + (A_f x_f)_i = b_i,   i = 1..m
         X = diag(X_1, ..., X_k) PSD,  x_f free

with dual ``max b'y  s.t.  S = C - sum_i y_i A_i PSD,  A_f' y = c_f``.

The search direction is HKM with Mehrotra predictor-corrector.  The Schur
complement ``M`` is formed densely and the augmented system
``[[M, A_f], [A_f', 0]]`` is factored by LU after symmetric (Ruiz)
equilibration, with iterative refinement against the unreduced Newton
equations.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)


@dataclass
class SdpProblem:
    """Block SDP data.

    ``A[j]`` is a sparse ``(m, n_j**2)`` matrix whose row ``i`` is the
    row-major flattening of the symmetric matrix ``A_i`` restricted to block
    ``j``.
    """

    block_sizes: list[int]
    C: list[np.ndarray]
    A: list[sp.csr_matrix]
    b: np.ndarray
    A_free: np.ndarray | None = None
    c_free: np.ndarray | None = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        m = self.b.shape[0]
        if len(self.C) != len(self.block_sizes) or len(self.A) != len(self.block_sizes):
            raise ValueError("one C and one A entry per block required")
        for j, n in enumerate(self.block_sizes):
            Cj = np.asarray(self.C[j], dtype=float)
            if Cj.shape != (n, n):
                raise ValueError(f"C[{j}] has shape {Cj.shape}, expected {(n, n)}")
            self.C[j] = 0.5 * (Cj + Cj.T)
            Aj = sp.csr_matrix(self.A[j], dtype=float)
            if Aj.shape != (m, n * n):
                raise ValueError(f"A[{j}] has shape {Aj.shape}, expected {(m, n * n)}")
            # symmetrize each row
            perm = np.arange(n * n).reshape(n, n).T.ravel()
            self.A[j] = ((Aj + Aj[:, perm]) * 0.5).tocsr()
            self.A[j].eliminate_zeros()
        if self.A_free is None:
            self.A_free = np.zeros((m, 0))
            self.c_free = np.zeros(0)
        self.A_free = np.asarray(self.A_free, dtype=float)
        self.c_free = np.asarray(self.c_free, dtype=float)
        if self.A_free.shape[0] != m or self.A_free.shape[1] != self.c_free.shape[0]:
            raise ValueError("free-variable data has inconsistent shape")

    @classmethod
    def from_constraints(cls, C: Sequence[np.ndarray], constraints: Sequence[tuple], free=None) -> "SdpProblem":
        """Build from dense data: ``constraints = [(A_i_blocks, b_i), ...]``."""
        sizes = [np.asarray(c).shape[0] for c in C]
        rows = [[] for _ in sizes]
        b = []
        for blocks, bi in constraints:
            for j, Ab in enumerate(blocks):
                rows[j].append(np.asarray(Ab, dtype=float).ravel())
            b.append(bi)
        A = [sp.csr_matrix(np.array(r).reshape(len(constraints), n * n)) for r, n in zip(rows, sizes)]
        A_free = c_free = None
        if free is not None:
            A_free, c_free = free
        return cls(list(sizes), [np.asarray(c, float) for c in C], A, np.array(b, float), A_free, c_free)

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def n_free(self) -> int:
        return self.c_free.shape[0]

    def op(self, X: Sequence[np.ndarray]) -> np.ndarray:
        """The linear map ``X -> (<A_i, X>)_i``."""
        out = np.zeros(self.m)
        for Aj, Xj in zip(self.A, X):
            out += Aj @ Xj.ravel()
        return out

    def adjoint(self, y: np.ndarray) -> list[np.ndarray]:
        out = []
        for Aj, n in zip(self.A, self.block_sizes):
            out.append((Aj.T @ y).reshape(n, n))
        return out


@dataclass
class SdpSolution:
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    x_free: np.ndarray
    status: str
    iterations: int
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    gap: float = np.nan
    primal_objective: float = np.nan
    dual_objective: float = np.nan
    history: list[dict] = field(default_factory=list)
    message: str = ""


@dataclass
class SdpSettings:
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    tol_gap: float = 1e-7
    accept_primal: float = 1e-7
    accept_dual: float = 1e-7
    accept_gap: float = 1e-6
    near_optimal: float = 1e-5
    step_fraction: float = 0.98
    max_iterations: int = 200
    infeasible_threshold: float = 1e10
    chunk_floats: int = 4_000_000
    refinement_steps: int = 1
    stall_iterations: int = 10
    equilibrate: bool = False


def residuals(problem: SdpProblem, sol: SdpSolution) -> dict:
    """Relative residuals of a candidate solution, computed from its iterates."""
    AX = problem.op(sol.X) + problem.A_free @ sol.x_free
    primal = float(np.max(np.abs(AX - problem.b) / (1.0 + np.abs(problem.b)))) if problem.m else 0.0
    Aty = problem.adjoint(sol.y)
    dres2 = sum(np.sum((Aty[j] + sol.S[j] - problem.C[j]) ** 2) for j in range(len(problem.C)))
    dres2 += float(np.sum((problem.A_free.T @ sol.y - problem.c_free) ** 2))
    cnorm = np.sqrt(sum(np.sum(Cj ** 2) for Cj in problem.C) + np.sum(problem.c_free ** 2))
    dual = float(np.sqrt(dres2) / (1.0 + cnorm))
    pobj = sum(float(np.sum(Cj * Xj)) for Cj, Xj in zip(problem.C, sol.X)) + float(problem.c_free @ sol.x_free)
    dobj = float(problem.b @ sol.y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    return {"primal": primal, "dual": dual, "gap": gap, "primal_objective": pobj, "dual_objective": dobj}


def _independent_rows(problem: SdpProblem, tol: float = 1e-10) -> np.ndarray:
    m = problem.m
    G = np.zeros((m, m))
    for Aj in problem.A:
        G += (Aj @ Aj.T).toarray()
    G += problem.A_free @ problem.A_free.T
    if m == 0:
        return np.arange(0)
    # unit diagonal first: row scaling alone must not look like dependence
    g = np.sqrt(np.diag(G))
    nz = np.nonzero(g > 0)[0]
    if nz.size == 0:
        return np.arange(0)
    G = G[np.ix_(nz, nz)] / np.outer(g[nz], g[nz])
    _, R, piv = sla.qr(G, pivoting=True, mode="economic")
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return np.arange(0)
    rank = int(np.sum(d > tol * d[0]))
    return np.sort(nz[piv[:rank]])


def _subproblem(problem: SdpProblem, rows: np.ndarray) -> SdpProblem:
    return SdpProblem(
        list(problem.block_sizes),
        [C.copy() for C in problem.C],
        [Aj[rows] for Aj in problem.A],
        problem.b[rows],
        problem.A_free[rows],
        problem.c_free.copy(),
    )


def _ruiz(K: np.ndarray, sweeps: int = 10) -> np.ndarray:
    """Symmetric scaling ``d`` so that ``diag(d) K diag(d)`` has rows of unit max-norm."""
    d = np.ones(K.shape[0])
    for _ in range(sweeps):
        r = np.max(np.abs(d[:, None] * K * d[None, :]), axis=1)
        r[r == 0] = 1.0
        d /= np.sqrt(r)
        if np.max(np.abs(r - 1)) < 1e-2:
            break
    return d


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest a with X + a dX PSD (X positive definite)."""
    if X.shape[0] == 1:
        return np.inf if dX[0, 0] >= 0 else -X[0, 0] / dX[0, 0]
    L = np.linalg.cholesky(X)
    W = sla.solve_triangular(L, dX, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _inner(U: Sequence[np.ndarray], V: Sequence[np.ndarray]) -> float:
    return sum(float(np.sum(u * v)) for u, v in zip(U, V))


class _Solver:
    def __init__(self, problem: SdpProblem, settings: SdpSettings):
        self.p = problem
        self.s = settings
        self.rows_of_block = []
        for Aj in problem.A:
            nz = np.unique(Aj.nonzero()[0])
            self.rows_of_block.append((nz, Aj[nz]))
        self.ntot = sum(problem.block_sizes)

    def schur(self, X, Z) -> np.ndarray:
        p = self.p
        M = np.zeros((p.m, p.m))
        for j, n in enumerate(p.block_sizes):
            rows, Asub = self.rows_of_block[j]
            if rows.size == 0:
                continue
            chunk = max(1, self.s.chunk_floats // (n * n))
            for start in range(0, rows.size, chunk):
                stop = min(rows.size, start + chunk)
                D = Asub[start:stop].toarray().reshape(stop - start, n, n)
                U = np.matmul(np.matmul(X[j], D), Z[j]).reshape(stop - start, n * n)
                block = (Asub @ U.T)  # (len(rows), chunk)
                M[np.ix_(rows, rows[start:stop])] += block
        return 0.5 * (M + M.T)

    def factor(self, M):
        p = self.p
        if p.n_free:
            # symmetric indefinite KKT system [[M, Af], [Af', 0]]; LU with pivoting keeps
            # accuracy where eliminating the free variables through M^-1 does not
            K = np.zeros((p.m + p.n_free, p.m + p.n_free))
            K[:p.m, :p.m] = M
            K[:p.m, p.m:] = p.A_free
            K[p.m:, :p.m] = p.A_free.T
            d = _ruiz(K)
            lu = sla.lu_factor(d[:, None] * K * d[None, :], check_finite=True)
            if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0:
                raise np.linalg.LinAlgError("singular KKT system")
            return ("kkt", (lu, d), K)
        scale = np.max(np.abs(np.diag(M))) if p.m else 1.0
        reg = 0.0
        for attempt in range(8):
            try:
                L = sla.cholesky(M + reg * np.eye(p.m), lower=True)
                break
            except np.linalg.LinAlgError:
                reg = scale * (1e-14 if reg == 0 else reg / scale * 100)
        else:
            raise np.linalg.LinAlgError("Schur complement is not positive definite")
        return ("chol", L, M)

    def solve_reduced(self, fac, h, rf):
        p = self.p
        kind, F, K = fac
        if kind == "chol":
            dy = sla.cho_solve((F, True), h)
            return dy, np.zeros(0)
        lu, d = F
        rhs = np.concatenate([h, rf])
        sol = d * sla.lu_solve(lu, d * rhs)
        for _ in range(self.s.refinement_steps):
            sol = sol + d * sla.lu_solve(lu, d * (rhs - K @ sol))
        return sol[:p.m], sol[p.m:]

    def _recover(self, X, Z, Rd, base, dy):
        Aty = self.p.adjoint(dy)
        dS = [Rd[j] - Aty[j] for j in range(len(X))]
        dX = []
        for j in range(len(X)):
            D = base[j] + X[j] @ Aty[j] @ Z[j]
            dX.append(0.5 * (D + D.T))
        return dX, dS

    def direction(self, X, S, Z, Rd, rp, rf, fac, target, corr=None):
        p = self.p
        nb = len(X)
        # constant part of dX (without the A*(dy) term)
        base = []
        for j in range(nb):
            Bj = target * Z[j] - X[j] - X[j] @ Rd[j] @ Z[j]
            if corr is not None:
                Bj = Bj - corr[j] @ Z[j]
            base.append(Bj)
        h = rp - p.op(base)
        dy, dxf = self.solve_reduced(fac, h, rf)
        dX, dS = self._recover(X, Z, Rd, base, dy)
        # the assembled Schur matrix carries rounding error of its own; correct the
        # step against the exact operators so the primal residual keeps shrinking
        for _ in range(self.s.refinement_steps):
            ep = rp - p.op(dX) - p.A_free @ dxf
            ef = rf - p.A_free.T @ dy
            ddy, ddxf = self.solve_reduced(fac, ep, ef)
            dy, dxf = dy + ddy, dxf + ddxf
            dX, dS = self._recover(X, Z, Rd, base, dy)
        return dX, dy, dS, dxf

    def initial_point(self):
        p = self.p
        X, S = [], []
        for j, n in enumerate(p.block_sizes):
            Aj = p.A[j]
            anorm = np.sqrt(np.asarray(Aj.multiply(Aj).sum(axis=1)).ravel()) if p.m else np.zeros(0)
            ratio = np.max((1.0 + np.abs(p.b)) / (1.0 + anorm)) if p.m else 1.0
            xi = max(10.0, np.sqrt(n), np.sqrt(n) * ratio)
            cn = np.linalg.norm(p.C[j])
            eta = max(10.0, np.sqrt(n), cn, float(anorm.max()) if anorm.size else 0.0)
            eta = max(1.0, (1.0 + eta) / np.sqrt(n))
            X.append(xi * np.eye(n))
            S.append(eta * np.eye(n))
        return X, np.zeros(p.m), S, np.zeros(p.n_free)

    def run(self) -> SdpSolution:
        p, s = self.p, self.s
        X, y, S, xf = self.initial_point()
        bnorm = 1.0 + np.linalg.norm(p.b)
        cnorm = 1.0 + np.sqrt(sum(np.sum(C ** 2) for C in p.C) + np.sum(p.c_free ** 2))
        history = []
        last_steps = (1.0, 1.0)
        status = "max-iterations"
        message = ""
        best = None
        it = 0
        for it in range(s.max_iterations + 1):
            Aty = p.adjoint(y)
            rp = p.b - p.op(X) - p.A_free @ xf
            Rd = [p.C[j] - Aty[j] - S[j] for j in range(len(X))]
            rf = p.c_free - p.A_free.T @ y
            xs = _inner(X, S)
            mu = xs / max(self.ntot, 1)
            pobj = _inner(p.C, X) + float(p.c_free @ xf)
            dobj = float(p.b @ y)
            pres = float(np.max(np.abs(rp) / (1.0 + np.abs(p.b)))) if p.m else 0.0
            dres = np.sqrt(sum(np.sum(R ** 2) for R in Rd) + np.sum(rf ** 2)) / cnorm
            gap = abs(pobj - dobj) / (1.0 + abs(pobj))
            # the iterate is feasible for data (A(X), A*(y) + S); weak duality there is <X,S> >= 0
            history.append({
                "iteration": it, "primal_objective": pobj, "dual_objective": dobj,
                "complementarity": xs, "primal_residual": pres, "dual_residual": dres, "gap": gap,
                "perturbed_gap": pobj - dobj - _inner(Rd, X) + float(rp @ y) - float(rf @ xf),
            })
            log.debug("it %3d pobj %+.8e dobj %+.8e pres %.1e dres %.1e gap %.1e", it, pobj, dobj, pres, dres, gap)
            score = max(pres / s.accept_primal, dres / s.accept_dual, gap / s.accept_gap)
            if best is None or score < best[0]:
                best = (score, [x.copy() for x in X], y.copy(), [z.copy() for z in S], xf.copy(), it)
            if pres <= s.tol_primal and dres <= s.tol_dual and gap <= s.tol_gap:
                status = "optimal"
                break
            if np.linalg.norm(y) > s.infeasible_threshold * cnorm and dobj > 0 and dres < 1e-3:
                status = "likely-infeasible"
                message = "dual objective diverges: primal infeasible"
                break
            if -pobj > s.infeasible_threshold * bnorm and pres < 1e-3:
                status = "likely-infeasible"
                message = "primal objective diverges: dual infeasible"
                break
            if it == s.max_iterations:
                break
            if it - best[5] >= s.stall_iterations:
                message = f"no progress in {s.stall_iterations} iterations; returning the best iterate"
                break
            try:
                Z = []
                for Sj in S:
                    Ls = sla.cholesky(Sj, lower=True)
                    Li = sla.solve_triangular(Ls, np.eye(Sj.shape[0]), lower=True)
                    Z.append(Li.T @ Li)
                M = self.schur(X, Z)
                fac = self.factor(M)
                dX, dy, dS, dxf = self.direction(X, S, Z, Rd, rp, rf, fac, 0.0)
                ap = min(1.0, min(_max_step(X[j], dX[j]) for j in range(len(X))))
                ad = min(1.0, min(_max_step(S[j], dS[j]) for j in range(len(S))))
                Xa = [X[j] + ap * dX[j] for j in range(len(X))]
                Sa = [S[j] + ad * dS[j] for j in range(len(S))]
                mu_aff = _inner(Xa, Sa) / max(self.ntot, 1)
                # short predictor steps mean the iterate is off-centre: centre more
                expon = max(1.0, 3.0 * min(ap, ad) ** 2)
                sigma = min(1.0, (max(mu_aff, 0.0) / mu) ** expon) if mu > 0 else 0.0
                corr = [dX[j] @ dS[j] for j in range(len(X))]
                dX, dy, dS, dxf = self.direction(X, S, Z, Rd, rp, rf, fac, sigma * mu, corr)
                frac = min(s.step_fraction, 0.9 + 0.09 * min(last_steps))
                ap = min(1.0, frac * min(_max_step(X[j], dX[j]) for j in range(len(X))))
                ad = min(1.0, frac * min(_max_step(S[j], dS[j]) for j in range(len(S))))
            except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
                status = "numerical-failure"
                message = f"Newton system failed at iteration {it}: {exc}"
                break
            if ap < 1e-12 and ad < 1e-12:
                status = "numerical-failure"
                message = f"step length collapsed at iteration {it}"
                break
            history[-1].update(step_primal=float(ap), step_dual=float(ad), sigma=float(sigma))
            last_steps = (ap, ad)
            X = [X[j] + ap * dX[j] for j in range(len(X))]
            X = [0.5 * (x + x.T) for x in X]
            S = [S[j] + ad * dS[j] for j in range(len(S))]
            S = [0.5 * (z + z.T) for z in S]
            y = y + ad * dy
            xf = xf + ap * dxf
        if status != "optimal" and status != "likely-infeasible" and best is not None:
            _, X, y, S, xf, _ = best
        sol = SdpSolution(X, y, S, xf, status, it, history=history, message=message)
        r = residuals(p, sol)
        sol.primal_residual, sol.dual_residual, sol.gap = r["primal"], r["dual"], r["gap"]
        sol.primal_objective, sol.dual_objective = r["primal_objective"], r["dual_objective"]
        if sol.status in ("max-iterations", "numerical-failure"):
            if r["primal"] <= s.accept_primal and r["dual"] <= s.accept_dual and r["gap"] <= s.accept_gap:
                sol.status = "optimal"
            elif max(r["primal"], r["dual"], r["gap"]) <= s.near_optimal:
                sol.status = "near-optimal"
        return sol


def _row_scaled(problem: SdpProblem) -> tuple[SdpProblem, np.ndarray]:
    """Scale every equality row to unit Euclidean norm."""
    nrm2 = np.asarray(sum(Aj.multiply(Aj).sum(axis=1) for Aj in problem.A)).ravel()
    nrm2 = nrm2 + np.sum(problem.A_free ** 2, axis=1)
    d = 1.0 / np.sqrt(np.where(nrm2 > 0, nrm2, 1.0))
    D = sp.diags(d)
    scaled = SdpProblem(list(problem.block_sizes), [C.copy() for C in problem.C], [(D @ Aj).tocsr() for Aj in problem.A],
                        d * problem.b, d[:, None] * problem.A_free, problem.c_free.copy())
    return scaled, d


def solve(problem: SdpProblem, settings: SdpSettings | None = None) -> SdpSolution:
    """Solve an SDP; dependent equality rows are dropped first (with a warning).

    With ``settings.equilibrate`` the rows are normalized before solving; the
    status refers to the normalized problem while the reported residuals are
    always those of ``problem`` itself.
    """
    settings = settings or SdpSettings()
    rows = _independent_rows(problem)
    work = problem
    if rows.size < problem.m:
        warnings.warn(f"dropping {problem.m - rows.size} linearly dependent equality rows", RuntimeWarning)
        work = _subproblem(problem, rows)
    d = None
    if settings.equilibrate and work.m:
        work, d = _row_scaled(work)
    sol = _Solver(work, settings).run()
    if d is not None:
        sol.y = d * sol.y
    if work is not problem:
        y = np.zeros(problem.m)
        y[rows] = sol.y
        sol.y = y
        r = residuals(problem, sol)
        sol.primal_residual, sol.dual_residual, sol.gap = r["primal"], r["dual"], r["gap"]
        sol.primal_objective, sol.dual_objective = r["primal_objective"], r["dual_objective"]
    return sol


# -- SDPA sparse text format --------------------------------------------------
def write_sdpa(problem: SdpProblem, path) -> None:
    """Dump as an SDPA sparse problem (free variables split into a diagonal LP block).

    Our primal corresponds to the SDPA dual: ``F_0 = -C``, ``F_i = A_i``, ``c_i = b_i``;
    the SDPA objective is therefore ``-1`` times ours.
    """
    p = problem
    sizes = list(p.block_sizes)
    nf = p.n_free
    if nf:
        sizes.append(-2 * nf)
    lines = [f"{p.m}", f"{len(sizes)}", " ".join(str(s) for s in sizes), " ".join(repr(float(v)) for v in p.b)]

    def emit(mat_index: int, block: int, n: int, M: np.ndarray, sign: float):
        for r in range(n):
            for c in range(r, n):
                v = M[r, c]
                if v != 0.0:
                    lines.append(f"{mat_index} {block} {r + 1} {c + 1} {float(sign * v)!r}")

    for j, n in enumerate(p.block_sizes):
        emit(0, j + 1, n, p.C[j], -1.0)
    if nf:
        for k in range(nf):
            if p.c_free[k] != 0:
                lines.append(f"0 {len(sizes)} {k + 1} {k + 1} {-float(p.c_free[k])!r}")
                lines.append(f"0 {len(sizes)} {nf + k + 1} {nf + k + 1} {float(p.c_free[k])!r}")
    for i in range(p.m):
        for j, n in enumerate(p.block_sizes):
            row = p.A[j][i]
            if row.nnz:
                emit(i + 1, j + 1, n, row.toarray().reshape(n, n), 1.0)
        if nf:
            for k in np.nonzero(p.A_free[i])[0]:
                v = float(p.A_free[i, k])
                lines.append(f"{i + 1} {len(sizes)} {k + 1} {k + 1} {v!r}")
                lines.append(f"{i + 1} {len(sizes)} {nf + k + 1} {nf + k + 1} {-v!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sdpa(path) -> SdpProblem:
    """Read the sparse SDPA format produced by :func:`write_sdpa` (no free-variable recovery)."""
    with open(path) as fh:
        tokens = [ln.split("*")[0].strip() for ln in fh if ln.strip() and not ln.startswith(("*", '"'))]
    m = int(tokens[0].split()[0])
    nblocks = int(tokens[1].split()[0])
    sizes = [int(s) for s in tokens[2].replace(",", " ").replace("{", " ").replace("}", " ").split()][:nblocks]
    b = np.array([float(v) for v in tokens[3].replace(",", " ").replace("{", " ").replace("}", " ").split()][:m])
    dims = [abs(s) for s in sizes]
    mats = [[np.zeros((d, d)) for d in dims] for _ in range(m + 1)]
    for line in tokens[4:]:
        i, blk, r, c, v = line.split()
        i, blk, r, c = int(i), int(blk) - 1, int(r) - 1, int(c) - 1
        mats[i][blk][r, c] = float(v)
        mats[i][blk][c, r] = float(v)
    C = [-M for M in mats[0]]
    A = [sp.csr_matrix(np.array([mats[i + 1][j].ravel() for i in range(m)]).reshape(m, dims[j] ** 2)) for j in range(len(dims))]
    return SdpProblem(dims, C, A, b)
