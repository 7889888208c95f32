"""Sum-of-squares certificates for finite-time basins of stability.

For a closed-loop field ``x' = F(t, x)`` on ``[0, T] x X`` and a target set
``X_T`` the certificate is a polynomial ``v`` with

* ``-(dv/dt + grad_x v . F) >= 0`` on ``[0, T] x X``,
* ``v >= 0`` on ``[0, T] x X``,
* ``v(T, x) >= alpha`` on ``X_T``,

minimizing the integral of ``v`` over the domain.  Each condition is imposed
as a Putinar identity with SOS multipliers.  Every trajectory that stays in
``X`` and ends in ``X_T`` at ``T`` keeps ``v >= alpha`` along the way, so
``{v >= alpha}`` contains the basin.

All assembly happens in coordinates where time and each state range over
``[-1, 1]``; ``v`` is mapped back to physical coordinates afterwards.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import sdp as sdpmod
from .feedback import ClosedLoopField
from .models import StateBox, TargetSet
from .poly import Polynomial, affine_images, lebesgue_box_moment, monomial_basis
from .textio import floats, read_sections, write_sections

log = logging.getLogger(__name__)

OK_STATUSES = ("optimal", "near-optimal")


class DegreeError(ValueError):
    """Constraint degrees are not representable by the chosen relaxation degree."""


@dataclass
class BosProblem:
    closed_loop: ClosedLoopField
    target: TargetSet | None = None
    alpha: float = 1.0
    degree: int = 10
    v_degree: int | None = None

    def __post_init__(self):
        if self.target is None:
            self.target = self.closed_loop.target
        if self.target is None:
            raise ValueError("a target set is required")
        if self.target.n != self.closed_loop.n:
            raise ValueError("target dimension does not match the field")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.degree < 2 or self.degree % 2:
            raise DegreeError(f"certificate degree must be even and >= 2, got {self.degree}")

    @property
    def box(self) -> StateBox:
        return self.closed_loop.box

    @property
    def nvars(self) -> int:
        return self.closed_loop.nvars


# -- coordinate scaling -----------------------------------------------------
@dataclass(frozen=True)
class Scaling:
    """Affine map between physical (t, x) and the unit box z in [-1, 1]^N."""

    offsets: tuple
    scales: tuple

    @classmethod
    def from_box(cls, box: StateBox) -> "Scaling":
        half = 0.5 * box.T
        return cls((half,) + tuple(box.center), (half,) + tuple(box.halfwidth))

    def to_unit(self, pts) -> np.ndarray:
        return (np.asarray(pts, float) - np.array(self.offsets)) / np.array(self.scales)

    def to_physical(self, z) -> np.ndarray:
        return np.array(self.offsets) + np.asarray(z, float) * np.array(self.scales)

    def pull_back(self, p: Polynomial) -> Polynomial:
        """Express a physical polynomial in unit coordinates."""
        return p.compose(affine_images(p.nvars, self.offsets, self.scales))

    def push_forward(self, p: Polynomial) -> Polynomial:
        """Express a unit-coordinate polynomial in physical coordinates."""
        inv_s = [1.0 / s for s in self.scales]
        inv_o = [-o / s for o, s in zip(self.offsets, self.scales)]
        return p.compose(affine_images(p.nvars, inv_o, inv_s))


def scaled_lie(v: Polynomial, G: list[Polynomial], half_T: float) -> Polynomial:
    """``dv/ds + (T/2) sum_i dv/dy_i G_i`` in unit coordinates (time derivative times T/2)."""
    out = v.differentiate(0)
    for i, Gi in enumerate(G):
        dv = v.differentiate(i + 1)
        if not dv.is_zero():
            out = out + half_T * dv * Gi
    return out


# -- generic Putinar assembly -----------------------------------------------
@dataclass
class _Block:
    name: str
    basis: np.ndarray  # (nb, N) exponents
    mult: Polynomial
    rows: np.ndarray = None
    cols: np.ndarray = None
    vals: np.ndarray = None


def _keys(exps: np.ndarray, base: int) -> np.ndarray:
    w = base ** np.arange(exps.shape[1], dtype=np.int64)
    return exps.astype(np.int64) @ w


class PutinarAssembler:
    """Collects identities ``sum_k x_k P_k + c = sigma_0 + sum_j sigma_j g_j``.

    ``x`` are free (real) decision variables shared across identities, the
    ``sigma`` are SOS polynomials represented by Gram blocks.
    """

    def __init__(self, nvars: int, n_free: int):
        self.nvars = nvars
        self.n_free = n_free
        self.blocks: list[_Block] = []
        self.rows = 0
        self.b: list[np.ndarray] = []
        self.free_rows: list[np.ndarray] = []
        self.row_monomials: list[tuple] = []
        self.identities: list[dict] = []

    def add_identity(self, name: str, free_polys: list[Polynomial], const: Polynomial, degree: int,
                     multipliers: list[Polynomial], active: list[int]) -> None:
        N = self.nvars
        inactive = [v for v in range(N) if v not in active]
        mono = monomial_basis(len(active), degree)
        full = np.zeros((len(mono), N), dtype=np.int64)
        full[:, active] = np.array(mono, dtype=np.int64).reshape(len(mono), len(active))
        base = degree + 1
        keys = _keys(full, base)
        order = np.argsort(keys)
        sorted_keys = keys[order]

        def locate(exps: np.ndarray, what: str) -> np.ndarray:
            exps = np.atleast_2d(exps)
            if exps.size and (exps.sum(axis=1).max() > degree or (inactive and exps[:, inactive].any())):
                raise DegreeError(f"{name}: {what} has terms outside the degree-{degree} monomials in variables {active}")
            k = _keys(exps, base)
            pos = np.searchsorted(sorted_keys, k)
            return order[pos]

        row0 = self.rows
        m = len(mono)
        b = np.zeros(m)
        for e, c in const.items():
            b[locate(np.array([e]), "constant part")[0]] += c
        Af = np.zeros((m, self.n_free))
        for k, P in enumerate(free_polys):
            if P.is_zero():
                continue
            exps, coeffs = P._arrays()
            idx = locate(exps, f"free polynomial {k}")
            np.add.at(Af[:, k], idx, -coeffs)
        for j, g in enumerate(multipliers):
            dg = max(g.degree, 0)
            half = (degree - dg) // 2
            if half < 0:
                raise DegreeError(f"{name}: multiplier {j} has degree {dg} above {degree}")
            bm = monomial_basis(len(active), half)
            bas = np.zeros((len(bm), N), dtype=np.int64)
            bas[:, active] = np.array(bm, dtype=np.int64).reshape(len(bm), len(active))
            nb = len(bas)
            gexp, gco = g._arrays()
            pair = (bas[:, None, :] + bas[None, :, :]).reshape(nb * nb, N)
            rows, cols, vals = [], [], []
            for e, c in zip(gexp, gco):
                idx = locate(pair + e, f"multiplier {j}")
                rows.append(row0 + idx)
                cols.append(np.arange(nb * nb))
                vals.append(np.full(nb * nb, c))
            self.blocks.append(_Block(f"{name}.{j}", bas, g, np.concatenate(rows), np.concatenate(cols),
                                      np.concatenate(vals)))
        self.b.append(b)
        self.free_rows.append(Af)
        self.row_monomials.extend(tuple(r) for r in full)
        self.identities.append({"name": name, "rows": (row0, row0 + m), "degree": degree,
                                "blocks": [bl.name for bl in self.blocks[-len(multipliers):]]})
        self.rows += m

    def problem(self, c_free: np.ndarray) -> sdpmod.SdpProblem:
        m = self.rows
        A = []
        for bl in self.blocks:
            nb = bl.basis.shape[0]
            A.append(sp.csr_matrix((bl.vals, (bl.rows, bl.cols)), shape=(m, nb * nb)))
        C = [np.zeros((bl.basis.shape[0],) * 2) for bl in self.blocks]
        return sdpmod.SdpProblem([bl.basis.shape[0] for bl in self.blocks], C, A, np.concatenate(self.b),
                                 np.vstack(self.free_rows), np.asarray(c_free, float))

    def gram_polynomial(self, k: int, Q: np.ndarray) -> Polynomial:
        """``b(z)' Q b(z)`` for block ``k`` (without its multiplier ``g``)."""
        bas = self.blocks[k].basis
        nb = bas.shape[0]
        terms: dict = {}
        for p in range(nb):
            for q in range(nb):
                e = tuple(bas[p] + bas[q])
                terms[e] = terms.get(e, 0.0) + Q[p, q]
        return Polynomial(self.nvars, terms)


# -- the basin program -------------------------------------------------------
@dataclass
class SosProgram:
    problem: BosProblem
    scaling: Scaling
    field_unit: list[Polynomial]
    v_basis: list[tuple]
    v_degree: int
    assembler: PutinarAssembler
    sdp: sdpmod.SdpProblem
    target_unit: list[Polynomial]

    def summary(self) -> dict:
        return {
            "v_degree": self.v_degree,
            "n_free": len(self.v_basis),
            "rows": self.sdp.m,
            "blocks": list(self.sdp.block_sizes),
            "identities": [i["name"] for i in self.assembler.identities],
        }


def default_v_degree(degree: int, field_degree: int) -> int:
    """Largest v degree whose Lie derivative fits in ``degree``."""
    return max(1, min(degree, degree + 1 - max(field_degree, 1)))


def _even_up(d: int) -> int:
    return d + (d % 2)


def build_sos_program(problem: BosProblem) -> SosProgram:
    cl = problem.closed_loop
    box = cl.box
    N = cl.nvars
    n = cl.n
    sc = Scaling.from_box(box)
    G = [sc.pull_back(Fi) / w for Fi, w in zip(cl.F, box.halfwidth)]
    e = max(p.degree for p in G)
    D = problem.degree
    dv = problem.v_degree if problem.v_degree is not None else default_v_degree(D, e)
    if dv < 1:
        raise DegreeError("v degree must be at least 1")
    if dv - 1 + max(e, 0) > D:
        raise DegreeError(f"Lie derivative degree {dv - 1 + e} exceeds the relaxation degree {D}")
    basis = monomial_basis(N, dv)
    half_T = 0.5 * box.T
    mons = [Polynomial.monomial(N, b_) for b_ in basis]
    lie = [scaled_lie(mk, G, half_T) for mk in mons]
    z = [Polynomial.variable(N, i) for i in range(N)]
    box_g = [1.0 - zi * zi for zi in z]
    asm = PutinarAssembler(N, len(basis))
    everything = list(range(N))
    one = Polynomial.constant(N, 1.0)
    zero = Polynomial.zero(N)
    # decrease along the flow on the whole domain
    asm.add_identity("decrease", [-1.0 * L for L in lie], zero, D, [one] + box_g, everything)
    # nonnegativity on the whole domain
    D2 = _even_up(dv)
    asm.add_identity("nonnegative", mons, zero, D2, [one] + box_g, everything)
    # terminal condition on the target, states only
    scale_y = [Polynomial.constant(N, 1.0)] + [Polynomial.variable(N, i) for i in range(1, N)]
    at_T = [mk.compose(scale_y) for mk in mons]  # s -> 1
    target_unit = [sc.pull_back(h) for h in problem.target.polynomials()]
    D3 = _even_up(max(dv, max((h.degree for h in target_unit), default=0)))
    asm.add_identity("terminal", at_T, Polynomial.constant(N, -problem.alpha), D3, [one] + target_unit,
                     list(range(1, N)))
    unit = [(-1.0, 1.0)] * N
    c_free = np.array([lebesgue_box_moment(b_, unit) for b_ in basis])
    prog = SosProgram(problem, sc, G, basis, dv, asm, asm.problem(c_free), target_unit)
    log.info("SOS program: %s", prog.summary())
    return prog


# -- certificates -----------------------------------------------------------
@dataclass
class BosCertificate:
    v: Polynomial
    v_unit: Polynomial
    scaling: Scaling
    box: StateBox
    target: TargetSet
    alpha: float
    degree: int
    v_degree: int
    status: str
    objective: float
    multipliers: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    degraded: bool = False

    @property
    def ok(self) -> bool:
        return self.status in OK_STATUSES and not self.degraded

    @property
    def nvars(self) -> int:
        return self.v.nvars

    def value(self, t, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        t = np.broadcast_to(np.asarray(t, float), (x.shape[0],))
        z = self.scaling.to_unit(np.column_stack([t, x]))
        return np.asarray(self.v_unit.evaluate(z))

    def epsilon(self) -> float:
        return 1e-6 * (1.0 + self.v_unit.coeff_norm(1))

    def scaled(self, c: float) -> "BosCertificate":
        """Jointly scale ``v`` and ``alpha`` by ``c > 0``."""
        if not c > 0:
            raise ValueError("scale must be positive")
        return BosCertificate(c * self.v, c * self.v_unit, self.scaling, self.box, self.target, c * self.alpha,
                              self.degree, self.v_degree, self.status, c * self.objective,
                              {k: c * p for k, p in self.multipliers.items()}, dict(self.diagnostics), self.degraded)

    def save(self, path, footer: dict | None = None) -> None:
        header = {
            "nvars": self.nvars, "degree": self.degree, "v_degree": self.v_degree, "alpha": self.alpha,
            "box_lo": self.box.lo, "box_hi": self.box.hi, "T": self.box.T,
            "target_kind": self.target.kind, "target_center": self.target.center,
            "target_radii": self.target.radii, "status": self.status, "objective": self.objective,
            "degraded": self.degraded,
        }
        polys = {"v": self.v, "v_unit": self.v_unit}
        polys.update({f"mult.{k}": p for k, p in self.multipliers.items()})
        write_sections(path, header, polys, footer)

    @classmethod
    def load(cls, path) -> "BosCertificate":
        h, polys, _ = read_sections(path)
        box = StateBox(floats(h["box_lo"]), floats(h["box_hi"]), float(h["T"]))
        target = TargetSet(floats(h["target_center"]), floats(h["target_radii"]), h["target_kind"])
        mult = {k[5:]: p for k, p in polys.items() if k.startswith("mult.")}
        return cls(polys["v"], polys["v_unit"], Scaling.from_box(box), box, target, float(h["alpha"]),
                   int(h["degree"]), int(h["v_degree"]), h["status"], float(h["objective"]), mult, {},
                   h.get("degraded", "false") == "true")


def constant_certificate(box: StateBox, target: TargetSet, value: float, alpha: float = 1.0) -> BosCertificate:
    """A degenerate certificate ``v == value`` (useful as a reference point)."""
    nv = box.n + 1
    c = Polynomial.constant(nv, value)
    return BosCertificate(c, c, Scaling.from_box(box), box, target, alpha, 0, 0, "optimal", value * box.volume())


def validate_certificate(cert: BosCertificate, program: SosProgram | None, rng: np.random.Generator,
                         n_domain: int = 10_000, n_target: int = 1_000) -> dict:
    """Sampled checks of the three defining conditions with slack ``eps``."""
    eps = cert.epsilon()
    N = cert.nvars
    z = rng.uniform(-1, 1, size=(n_domain, N))
    out = {"epsilon": eps}
    if program is not None:
        lie = scaled_lie(cert.v_unit, program.field_unit, 0.5 * cert.box.T)
        lv = np.asarray(lie.evaluate(z))
        out["max_lie"] = float(lv.max())
        out["lie_violations"] = int(np.sum(lv > eps))
    vv = np.asarray(cert.v_unit.evaluate(z))
    out["min_v"] = float(vv.min())
    out["nonneg_violations"] = int(np.sum(vv < -eps))
    xt = cert.target.sample(rng, n_target)
    vt = cert.value(np.full(n_target, cert.box.T), xt)
    out["min_terminal_margin"] = float((vt - cert.alpha).min())
    out["terminal_violations"] = int(np.sum(vt < cert.alpha - eps))
    return out


def solve_bos(problem: BosProblem, settings: sdpmod.SdpSettings | None = None, seed: int = 0,
              program: SosProgram | None = None) -> BosCertificate:
    """Assemble, solve and validate the SOS program."""
    t0 = time.perf_counter()
    prog = program or build_sos_program(problem)
    t1 = time.perf_counter()
    # identity rows mix unit-size and field-sized coefficients; normalizing them
    # keeps the Newton systems usable close to the optimum
    sol = sdpmod.solve(prog.sdp, settings or sdpmod.SdpSettings(equilibrate=True))
    t2 = time.perf_counter()
    coef = sol.x_free
    v_unit = Polynomial.from_coefficients(prog.assembler.nvars, prog.v_basis, coef)
    v = prog.scaling.push_forward(v_unit)
    mult = {}
    for k, bl in enumerate(prog.assembler.blocks):
        mult[bl.name] = prog.assembler.gram_polynomial(k, sol.X[k])
    diag = {
        "sdp_status": sol.status,
        "sdp_iterations": sol.iterations,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "gap": sol.gap,
        "assembly_seconds": t1 - t0,
        "solve_seconds": t2 - t1,
        "v_coeff_norm": v_unit.coeff_norm(1),
        "min_gram_eig": float(min((np.linalg.eigvalsh(X)[0] for X in sol.X), default=0.0)),
        **prog.summary(),
    }
    status = sol.status if sol.status in OK_STATUSES else "failed"
    cert = BosCertificate(v, v_unit, prog.scaling, problem.box, problem.target, problem.alpha, problem.degree,
                          prog.v_degree, status, float(sol.primal_objective), mult, diag)
    checks = validate_certificate(cert, prog, np.random.default_rng(seed))
    cert.diagnostics.update(checks)
    cert.degraded = (checks["lie_violations"] + checks["nonneg_violations"] + checks["terminal_violations"]) > 0
    if cert.degraded:
        log.warning("certificate failed sampled checks: %s", checks)
    return cert


# -- queries ------------------------------------------------------------------
def membership(cert: BosCertificate, t, x, check_domain: bool = True):
    """``v(t, x) >= alpha``; scalar input gives a bool."""
    xa = np.atleast_2d(np.asarray(x, float))
    ta = np.broadcast_to(np.asarray(t, float), (xa.shape[0],))
    if check_domain:
        tol = 1e-9 * max(1.0, cert.box.T)
        if np.any(ta < -tol) or np.any(ta > cert.box.T + tol) or not np.all(cert.box.contains(xa, 1e-9)):
            raise ValueError("point outside the certificate domain [0, T] x X")
    res = cert.value(ta, xa) >= cert.alpha
    if np.ndim(t) == 0 and np.asarray(x).ndim <= 1:
        return bool(res[0])
    return res


@dataclass
class VolumeEstimate:
    fraction: float
    stderr: float
    slice_fractions: np.ndarray
    slice_edges: np.ndarray
    samples: int
    seed: int

    def as_dict(self) -> dict:
        return {"fraction": self.fraction, "stderr": self.stderr, "samples": self.samples, "seed": self.seed,
                "slice_fractions": [float(f) for f in self.slice_fractions]}


def stratified_volume(indicator, box: StateBox, seed: int, samples: int = 200_000, slices: int = 10) -> VolumeEstimate:
    """Fraction of ``[0, T] x X`` where ``indicator(t, x)`` holds; equal samples per time slice."""
    if samples < slices:
        raise ValueError("need at least one sample per slice")
    rng = np.random.default_rng(seed)
    per = samples // slices
    edges = np.linspace(0.0, box.T, slices + 1)
    fr = np.zeros(slices)
    var = 0.0
    for k in range(slices):
        t = rng.uniform(edges[k], edges[k + 1], per)
        x = rng.uniform(box.lo, box.hi, size=(per, box.n))
        p = float(np.mean(indicator(t, x)))
        fr[k] = p
        var += p * (1 - p) / per
    return VolumeEstimate(float(fr.mean()), float(np.sqrt(var) / slices), fr, edges, per * slices, seed)


def superlevel_volume(cert: BosCertificate, seed: int, samples: int = 200_000, slices: int = 10) -> VolumeEstimate:
    if samples < 10_000:
        raise ValueError("volume estimates need at least 1e4 samples")
    return stratified_volume(lambda t, x: cert.value(t, x) >= cert.alpha, cert.box, seed, samples, slices)


@dataclass
class TrajectoryCheck:
    passed: bool | None
    min_margin: float
    diagnostic: str = ""

    @property
    def skipped(self) -> bool:
        return self.passed is None


def trajectory_check(cert: BosCertificate, t, x, reached: bool = True, exited: bool = False) -> TrajectoryCheck:
    """``v >= alpha - eps`` along a trajectory that stays in X and ends in the target at T."""
    if exited:
        return TrajectoryCheck(None, float("nan"), "trajectory left the state box; premises do not hold")
    if not reached:
        return TrajectoryCheck(None, float("nan"), "trajectory does not end in the target set")
    vals = cert.value(t, x)
    margin = float(np.min(vals - cert.alpha))
    return TrajectoryCheck(bool(margin >= -cert.epsilon()), margin)
