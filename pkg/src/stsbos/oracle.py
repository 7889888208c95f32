"""Brute-force reachability: simulate the closed loop from sampled (t0, x0).

Each sample is integrated with fixed-step RK4 from ``t0`` to ``T``.  All
samples take the same number of steps, so a sample starting late simply
uses shorter steps; no step exceeds the configured one.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .feedback import FeedbackLaw
from .models import (ControlAffineField, DpmParams, IpmParams, StateBox, TargetSet, dpm_dynamics_exact,
                     ipm_dynamics_exact)

Dynamics = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SimConfig:
    """``step`` defaults to ``T / 200`` when left at ``None``."""

    step: float | None = None
    samples: int = 20_000
    seed: int = 0
    saturate: bool = True
    slices: int = 10

    def resolve_step(self, T: float) -> float:
        h = T / 200.0 if self.step is None else float(self.step)
        if not h > 0:
            raise ValueError("integration step must be positive")
        if h > T / 100.0 * (1 + 1e-12):
            raise ValueError(f"integration step {h} exceeds T/100 = {T / 100.0}")
        return h

    def validate(self, T: float) -> None:
        self.resolve_step(T)
        if self.samples <= 0:
            raise ValueError("the sampling plan must contain at least one sample")
        if self.slices <= 0 or self.samples < self.slices:
            raise ValueError("need at least one sample per time slice")


def exact_dynamics(params) -> Dynamics:
    """Trigonometric dynamics of an IPM or DPM as ``f(t, x, u)``."""
    if isinstance(params, IpmParams):
        return lambda t, x, u: ipm_dynamics_exact(x, u, params)
    if isinstance(params, DpmParams):
        return lambda t, x, u: dpm_dynamics_exact(x, u, params)
    raise TypeError(f"no exact dynamics for {type(params).__name__}")


def polynomial_dynamics(fld: ControlAffineField) -> Dynamics:
    return lambda t, x, u: fld.evaluate(t, x, u)


@dataclass
class SimBatch:
    t0: np.ndarray
    x0: np.ndarray
    reached: np.ndarray       # entered the target at some time <= T without leaving X first
    reached_at_T: np.ndarray  # in the target at T and never left X
    exited: np.ndarray        # left X before reaching the target
    blew_up: np.ndarray       # non-finite state
    x_final: np.ndarray
    times: np.ndarray | None = None   # (steps + 1, N) when recorded
    states: np.ndarray | None = None  # (steps + 1, N, n) when recorded


def simulate_closed_loop(x0, t0, law: FeedbackLaw, dynamics: Dynamics, box: StateBox, target: TargetSet,
                         step: float, saturate: bool = True, record: bool = False) -> SimBatch:
    """Integrate ``x' = f(t, x, u(t, x))`` for a batch of initial conditions."""
    x = np.array(np.atleast_2d(x0), dtype=float)
    N, n = x.shape
    t = np.array(np.broadcast_to(np.asarray(t0, float), (N,)))
    T = box.T
    if np.any(t < -1e-12) or np.any(t > T + 1e-12):
        raise ValueError("initial times must lie in [0, T]")
    if not np.all(box.contains(x, 1e-12)):
        raise ValueError("initial states must lie in the state box")
    t0 = t.copy()
    x0 = x.copy()
    steps = max(1, int(np.ceil(T / step - 1e-9)))
    h = (T - t) / steps

    def rhs(tt, xx):
        return dynamics(tt, xx, law(tt, xx, saturate=saturate))

    inside = target.contains(x)
    reached = inside.copy()
    exited = np.zeros(N, bool)
    blew_up = np.zeros(N, bool)
    alive = np.ones(N, bool)
    if record:
        times = np.empty((steps + 1, N))
        states = np.empty((steps + 1, N, n))
        times[0], states[0] = t, x
    with np.errstate(all="ignore"):
        for k in range(steps):
            idx = np.nonzero(alive)[0]
            if idx.size:
                ti, xi, hi = t[idx], x[idx], h[idx, None]
                k1 = rhs(ti, xi)
                k2 = rhs(ti + 0.5 * hi[:, 0], xi + 0.5 * hi * k1)
                k3 = rhs(ti + 0.5 * hi[:, 0], xi + 0.5 * hi * k2)
                k4 = rhs(ti + hi[:, 0], xi + hi * k3)
                x[idx] = xi + hi / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t0 + (k + 1) * h
            bad = alive & ~np.all(np.isfinite(x), axis=1)
            blew_up |= bad
            alive &= ~bad
            out = alive & ~box.contains(np.where(np.isfinite(x), x, 0.0))
            exited |= out & ~reached
            alive &= ~out
            reached |= alive & target.contains(np.where(np.isfinite(x), x, np.inf))
            if record:
                times[k + 1], states[k + 1] = t, x
    reached &= ~blew_up
    reached_at_T = alive & target.contains(x) & ~exited
    batch = SimBatch(t0, x0, reached, reached_at_T, exited, blew_up, x)
    if record:
        batch.times, batch.states = times, states
    return batch


@dataclass
class OracleResult:
    t0: np.ndarray
    x0: np.ndarray
    reached: np.ndarray
    reached_at_T: np.ndarray
    exited: np.ndarray
    blew_up: np.ndarray
    slice_edges: np.ndarray
    slice_fractions: np.ndarray
    fraction: float
    stderr: float
    fraction_at_T: float
    seed: int
    wall_seconds: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return self.t0.size

    def summary(self) -> dict:
        """Deterministic numbers only (no timings)."""
        return {
            "samples": self.samples, "seed": self.seed, "fraction": self.fraction, "stderr": self.stderr,
            "fraction_at_T": self.fraction_at_T, "exited": int(self.exited.sum()),
            "blew_up": int(self.blew_up.sum()),
            "slice_fractions": [float(f) for f in self.slice_fractions],
        }


def estimate_bos(law: FeedbackLaw, dynamics: Dynamics, box: StateBox, target: TargetSet,
                 config: SimConfig | None = None, meta: dict | None = None) -> OracleResult:
    """Stratified Monte-Carlo estimate of the reachable fraction of ``[0, T] x X``."""
    cfg = config or SimConfig()
    cfg.validate(box.T)
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    per = cfg.samples // cfg.slices
    edges = np.linspace(0.0, box.T, cfg.slices + 1)
    t0 = np.concatenate([rng.uniform(edges[k], edges[k + 1], per) for k in range(cfg.slices)])
    x0 = rng.uniform(box.lo, box.hi, size=(t0.size, box.n))
    b = simulate_closed_loop(x0, t0, law, dynamics, box, target, cfg.resolve_step(box.T), cfg.saturate)
    fr = b.reached.reshape(cfg.slices, per).mean(axis=1)
    se = float(np.sqrt(np.sum(fr * (1 - fr) / per)) / cfg.slices)
    return OracleResult(t0, x0, b.reached, b.reached_at_T, b.exited, b.blew_up, edges, fr, float(fr.mean()), se,
                        float(b.reached_at_T.mean()), cfg.seed, time.perf_counter() - start, dict(meta or {}))


def containment_report(cert, result: OracleResult, tol: float = 1e-9) -> dict:
    """How many simulated successes the certificate's super-level set contains.

    The certificate and oracle must share the domain and target.
    """
    if not (np.allclose(cert.box.lo, result.meta.get("box_lo", cert.box.lo), atol=tol)
            and np.allclose(cert.box.hi, result.meta.get("box_hi", cert.box.hi), atol=tol)
            and abs(cert.box.T - result.meta.get("T", cert.box.T)) <= tol):
        raise ValueError("certificate and oracle were computed on different domains")
    if np.any(result.t0 > cert.box.T + tol) or not np.all(cert.box.contains(result.x0, tol)):
        raise ValueError("oracle samples fall outside the certificate domain")
    eps = cert.epsilon()
    v = cert.value(result.t0, result.x0)
    ok = result.reached
    n_ok = int(ok.sum())
    n_bad = int((~ok).sum())
    inside = v >= cert.alpha - eps
    at_T = result.reached_at_T
    n_at_T = int(at_T.sum())
    return {
        "successes_at_T": n_at_T,
        "containment_at_T": float(inside[at_T].mean()) if n_at_T else 1.0,
        "missed_at_T": int((~inside & at_T).sum()),
        "successes": n_ok,
        "failures": n_bad,
        "vacuous": n_ok == 0,
        "containment": float(inside[ok].mean()) if n_ok else 1.0,
        "missed": int((~inside & ok).sum()),
        "false_positive_rate": float((v[~ok] >= cert.alpha).mean()) if n_bad else 0.0,
        "epsilon": eps,
    }


def write_labeled_csv(path, result: OracleResult, v_values=None, names=None) -> None:
    n = result.x0.shape[1]
    names = list(names) if names else [f"x{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t0", *names, "reached", "reached_at_T", "exited"] + (["v"] if v_values is not None else []))
        for i in range(result.samples):
            row = [repr(float(result.t0[i]))] + [repr(float(c)) for c in result.x0[i]]
            row += [int(result.reached[i]), int(result.reached_at_T[i]), int(result.exited[i])]
            if v_values is not None:
                row.append(repr(float(v_values[i])))
            w.writerow(row)


def trajectory_audit(cert, law: FeedbackLaw, dynamics: Dynamics, box: StateBox, target: TargetSet,
                     samples: int = 4000, seed: int = 0, step: float | None = None, chunk: int = 1000) -> dict:
    """Check ``v >= alpha - eps`` at every sample of every unsaturated trajectory that ends in the target at T.

    Trajectories that leave X or miss the target at T do not satisfy the
    premises and are only counted.
    """
    h = SimConfig(step=step).resolve_step(box.T)
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(0.0, box.T, samples)
    x0 = rng.uniform(box.lo, box.hi, size=(samples, box.n))
    eps = cert.epsilon()
    checked = violations = exited = missed = blew_up = 0
    worst = np.inf
    for a in range(0, samples, chunk):
        b = simulate_closed_loop(x0[a:a + chunk], t0[a:a + chunk], law, dynamics, box, target, h,
                                 saturate=False, record=True)
        exited += int(b.exited.sum())
        blew_up += int(b.blew_up.sum())
        ok = b.reached_at_T
        missed += int((~ok & ~b.exited & ~b.blew_up).sum())
        if not ok.any():
            continue
        tt = b.times[:, ok]
        xx = b.states[:, ok, :]
        v = cert.value(tt.ravel(), xx.reshape(-1, box.n)).reshape(tt.shape)
        margin = (v - cert.alpha).min(axis=0)
        checked += int(ok.sum())
        violations += int(np.sum(margin < -eps))
        worst = min(worst, float(margin.min()))
    return {
        "samples": samples, "seed": seed, "checked": checked, "violations": violations,
        "passed_fraction": (checked - violations) / checked if checked else 1.0,
        "min_margin": worst if checked else float("nan"), "epsilon": eps,
        "excluded_exited": exited, "excluded_not_in_target_at_T": missed, "excluded_blew_up": blew_up,
    }
