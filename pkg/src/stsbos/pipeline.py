"""End-to-end BOS pipeline over a trial directory.

Every stage reads the artifacts of earlier stages from the trial directory
and writes its own, so any stage can be rerun on its own:

    00_config.txt     resolved configuration
    01_traj.csv       state trajectory (01_segments.csv: segment positions)
    02_model.txt      model parameters, state box and target set
    03_control.txt    feedforward input polynomials (03_nodes.csv: node states)
    04_law.txt        feedback law with torque bounds (04_lqr.txt: Riccati data)
    05_certificate.txt
    06_oracle.csv     labeled samples (06_audit.json, 06_rosv.csv, 06_rosv.json)
    07_report.json    deterministic report body (07_timings.json: wall times)
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
import types
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracle as orc
from . import rosv
from .feedback import (FeedbackLaw, LqrWeights, assemble_closed_loop, care_residual, fit_reference_polynomial,
                       linearize_small_angle, saturation_check, solve_care)
from .models import (TorqueBounds, default_target, derive_state_box, derive_torque_bounds,
                     dpm_polynomial_field, dpm_positions, fit_dpm_params, fit_ipm_params, ipm_polynomial_field,
                     ipm_positions, load_model, save_model, synthetic_subjects)
from .optcontrol import TrackingProblem, TrackingSolution, solve_tracking
from .signal import (ObservedTrajectory, SynthStsSpec, butterworth_lowpass, generate_synthetic_sts,
                     load_trajectory, write_csv)
from .sos import BosCertificate, BosProblem, DegreeError, membership, solve_bos, superlevel_volume
from .textio import fmt_value, read_keyvalue, write_keyvalue

log = logging.getLogger(__name__)

# model-dependent defaults for keys left at "auto"
MODEL_DEFAULTS = {
    "ipm": dict(taylor_degree=5, input_matrix_degree=None, control_degree=6, degree=10, oracle_samples=20_000),
    "dpm": dict(taylor_degree=3, input_matrix_degree=0, control_degree=4, degree=6, oracle_samples=50_000),
}
LOWER_BODY_FRACTION = 0.32  # share of body mass below the hip when splitting a measured mass

FILES = {
    "config": "00_config.txt", "traj": "01_traj.csv", "segments": "01_segments.csv", "model": "02_model.txt",
    "control": "03_control.txt", "nodes": "03_nodes.csv", "law": "04_law.txt", "lqr": "04_lqr.txt",
    "certificate": "05_certificate.txt", "oracle": "06_oracle.csv", "audit": "06_audit.json",
    "rosv": "06_rosv.csv", "rosv_score": "06_rosv.json", "report": "07_report.json", "timings": "07_timings.json",
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; artifacts written so far are kept."""

    def __init__(self, stage: str, message: str, diagnostics: dict | None = None):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
        self.diagnostics = diagnostics or {}


@dataclass
class PipelineConfig:
    """Flat configuration; ``None`` means "model default" and is written as ``auto``."""

    model: str = "ipm"
    label: str = ""
    # trajectory source: a segment-position CSV, or the synthetic generator
    input: str = ""
    strategy: str = "preferred"
    duration: float = 1.6
    noise: float = 0.0
    subject: str = "S1"
    subject_count: int = 5
    subject_seed: int = 0
    mass: float | None = None
    foot_length: float | None = None
    filter_order: int = 4
    filter_cutoff: float = 2.0
    # model and control
    taylor_degree: int | None = None
    input_matrix_degree: int | None = None
    control_degree: int | None = None
    nodes: int = 101
    box_margin: float = 0.25
    target_fraction: float = 0.15
    lqr_q: float = 0.5
    lqr_r: float = 0.005
    # certificate
    degree: int | None = None
    alpha: float = 1.0
    volume_samples: int = 200_000
    # oracle and audit
    oracle_samples: int | None = None
    oracle_step: float | None = None
    saturate: bool = True
    audit_samples: int = 4000
    seed: int | None = None

    def resolved(self, key: str):
        v = getattr(self, key)
        if v is None and key in MODEL_DEFAULTS.get(self.model, {}):
            return MODEL_DEFAULTS[self.model][key]
        return v

    def validate(self) -> None:
        if self.model not in MODEL_DEFAULTS:
            raise ConfigError(f"model must be one of {sorted(MODEL_DEFAULTS)}, got {self.model!r}")
        deg = self.resolved("degree")
        if deg < 2 or deg % 2:
            raise DegreeError(f"certificate degree must be even and >= 2, got {deg}")
        if self.resolved("taylor_degree") < 1:
            raise ConfigError("taylor_degree must be at least 1")
        if self.resolved("control_degree") < 0:
            raise ConfigError("control_degree must be non-negative")
        imd = self.resolved("input_matrix_degree")
        if imd is not None and imd < 0:
            raise ConfigError("input_matrix_degree must be non-negative")
        if self.nodes < 2:
            raise ConfigError("need at least two collocation nodes")
        if self.input and not Path(self.input).is_file():
            raise ConfigError(f"input trajectory {self.input!r} does not exist")
        if self.input and self.mass is None:
            raise ConfigError("a measured trajectory needs the subject mass")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.volume_samples < 10_000:
            raise ConfigError("volume_samples must be at least 1e4")
        if self.resolved("oracle_samples") < 10 or self.audit_samples < 0:
            raise ConfigError("oracle needs at least one sample per time slice")
        if self.lqr_q < 0 or not self.lqr_r > 0:
            raise ConfigError("LQR weights need q >= 0 and r > 0")

    # -- text form ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def save(self, path) -> None:
        write_keyvalue(path, {k: ("auto" if v is None else v) for k, v in self.to_dict().items()})

    def updated(self, values: dict) -> "PipelineConfig":
        return dataclasses.replace(self, **parse_values(values))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls().updated(read_keyvalue(path))


def _coerce(name: str, typ, text):
    if not isinstance(text, str):
        return text
    opt = isinstance(typ, types.UnionType) and type(None) in typing.get_args(typ)
    base = next(a for a in typing.get_args(typ) if a is not type(None)) if opt else typ
    s = text.strip()
    if opt and s.lower() in ("auto", "none", ""):
        return None
    try:
        if base is bool:
            if s.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(s)
            return s.lower() in ("true", "1", "yes")
        return base(s)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {text!r} as {base.__name__}") from None


def parse_values(values: dict) -> dict:
    hints = typing.get_type_hints(PipelineConfig)
    out = {}
    for k, v in values.items():
        key = k.replace("-", "_")
        if key not in hints:
            raise ConfigError(f"unknown configuration key {k!r}")
        out[key] = _coerce(key, hints[key], v)
    return out


# -- helpers ------------------------------------------------------------------
def _path(d, key) -> Path:
    return Path(d) / FILES[key]


def _require(d, *keys) -> None:
    for k in keys:
        if not _path(d, k).is_file():
            raise FileNotFoundError(f"{_path(d, k)} is missing; run the earlier stages first")


def _subject(cfg: PipelineConfig):
    for s in synthetic_subjects(cfg.subject_count, cfg.subject_seed):
        if s.name == cfg.subject:
            return s
    raise ConfigError(f"no synthetic subject named {cfg.subject!r}")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _field(cfg: PipelineConfig, params, box):
    if cfg.model == "ipm":
        return ipm_polynomial_field(params, cfg.resolved("taylor_degree"), box)
    return dpm_polynomial_field(params, cfg.resolved("taylor_degree"), box,
                                input_degree=cfg.resolved("input_matrix_degree"))


def _foot_length(cfg: PipelineConfig) -> float:
    if cfg.foot_length is not None:
        return cfg.foot_length
    return rosv.DEFAULT_FOOT_LENGTH if cfg.input else _subject(cfg).foot


# -- stages ---------------------------------------------------------------------
def stage_synth(d, cfg: PipelineConfig) -> dict:
    """Synthetic state trajectory and the matching segment positions."""
    subj = _subject(cfg)
    spec = SynthStsSpec(cfg.strategy, duration=cfg.duration, seed=cfg.seed or 0, noise=cfg.noise)
    traj = generate_synthetic_sts(spec, cfg.model)
    traj.to_csv(_path(d, "traj"))
    if cfg.model == "ipm":
        ankle, com = ipm_positions(traj, subj.ipm)
        ch = {"ankle_x": ankle[:, 0], "ankle_y": ankle[:, 1], "com_x": com[:, 0], "com_y": com[:, 1]}
    else:
        pts = dpm_positions(traj, subj.dpm)
        ch = {}
        for name, p in zip(("ankle", "hip", "com_lower", "com_upper"), pts):
            ch.update({f"{name}_x": p[:, 0], f"{name}_y": p[:, 1]})
    write_csv(_path(d, "segments"), traj.t, ch)
    return {"samples": int(traj.t.size), "T": traj.T, "strategy": cfg.strategy}


def stage_fit(d, cfg: PipelineConfig) -> dict:
    """Segment geometry to model parameters, then the state box and target."""
    measured = bool(cfg.input)
    src = cfg.input if measured else _path(d, "segments")
    names = ["ankle", "com"] if cfg.model == "ipm" else ["ankle", "hip", "com_lower", "com_upper"]
    raw = load_trajectory(src, [f"{n}_{c}" for n in names for c in "xy"])
    if measured and cfg.filter_cutoff > 0:
        raw = butterworth_lowpass(raw, cfg.filter_order, cfg.filter_cutoff)
    pts = [np.column_stack([raw.channels[f"{n}_x"], raw.channels[f"{n}_y"]]) for n in names]
    if cfg.model == "ipm":
        mass = cfg.mass if measured else _subject(cfg).ipm.m
        params, fitted = fit_ipm_params(raw.t, pts[0], pts[1], mass, raw.rate)
    else:
        if measured:
            m1, m2 = LOWER_BODY_FRACTION * cfg.mass, (1 - LOWER_BODY_FRACTION) * cfg.mass
        else:
            m1, m2 = _subject(cfg).dpm.m1, _subject(cfg).dpm.m2
        params, fitted = fit_dpm_params(raw.t, *pts, m1, m2, raw.rate)
    if measured:
        fitted.to_csv(_path(d, "traj"))
    traj = ObservedTrajectory.from_csv(_path(d, "traj"))
    box = derive_state_box(traj, cfg.box_margin)
    target = default_target(traj, box, cfg.target_fraction)
    save_model(_path(d, "model"), params, box, target)
    return {"params": dict(params.__dict__), "box_lo": list(box.lo), "box_hi": list(box.hi), "T": box.T}


def stage_control(d, cfg: PipelineConfig) -> dict:
    """Feedforward torques that reproduce the observed trajectory."""
    _require(d, "traj", "model")
    traj = ObservedTrajectory.from_csv(_path(d, "traj"))
    params, box, _, _ = load_model(_path(d, "model"))
    fld = _field(cfg, params, box)
    sol = solve_tracking(TrackingProblem(fld, traj, cfg.resolved("control_degree"), cfg.nodes))
    sol.save(_path(d, "control"), _path(d, "nodes"))
    widths = np.array(box.hi) - np.array(box.lo)
    rel = (np.array(sol.diagnostics["rms_tracking"]) / widths).tolist()
    info = {"converged": sol.converged, "objective": sol.objective, "max_defect": sol.max_defect,
            "rms_tracking_relative": rel, "taylor_error": {k: v for k, v in fld.meta.items() if k.startswith("max")}}
    if not sol.converged:
        raise StageError("control", "tracking problem did not converge", info)
    return info


def stage_feedback(d, cfg: PipelineConfig) -> dict:
    """Torque bounds from the feedforward, LQR gain and the tracking law."""
    _require(d, "traj", "model", "control")
    traj = ObservedTrajectory.from_csv(_path(d, "traj"))
    params, box, _, _ = load_model(_path(d, "model"))
    sol = TrackingSolution.load(_path(d, "control"))
    bounds = derive_torque_bounds(sol.u_obs, traj.t)
    fld = _field(cfg, params, box)
    A, B = linearize_small_angle(fld)
    w = LqrWeights(cfg.lqr_q * np.eye(fld.n), cfg.lqr_r * np.eye(fld.m))
    care = solve_care(A, B, w)
    x_ref, fit_err = fit_reference_polynomial(traj, cfg.resolved("control_degree"))
    law = FeedbackLaw(sol.u_obs, x_ref, -care.K, bounds)
    law.save(_path(d, "law"))
    eig = np.linalg.eigvals(A + B @ law.K)
    res = float(np.linalg.norm(care_residual(A, B, w.Q, w.R, care.P)))
    sat = saturation_check(law, box, bounds)
    write_keyvalue(_path(d, "lqr"), {"A": A, "B": B, "Q": w.Q, "R": w.R, "P": care.P, "K_applied": law.K,
                                     "residual": res, "iterations": care.iterations,
                                     "max_real_eig": float(eig.real.max()), "u_lo": bounds.lo, "u_hi": bounds.hi})
    info = {"are_residual": res, "max_real_eig": float(eig.real.max()), "u_lo": list(bounds.lo),
            "u_hi": list(bounds.hi), "reference_fit_rms": fit_err.tolist(), "saturation": sat}
    if not eig.real.max() < 0:
        raise StageError("feedback", "LQR closed loop is not strictly stable", info)
    return info


def _closed_loop(d, cfg: PipelineConfig):
    params, box, target, _ = load_model(_path(d, "model"))
    law = FeedbackLaw.load(_path(d, "law"))
    fld = _field(cfg, params, box)
    return params, box, target, law, fld, assemble_closed_loop(fld, law, box, target)


def stage_bos(d, cfg: PipelineConfig) -> dict:
    """SOS certificate and the Monte-Carlo volume of its super-level set."""
    _require(d, "model", "law")
    if cfg.seed is None:
        raise ConfigError("the bos stage is stochastic; --seed is required")
    _, box, target, _, fld, cl = _closed_loop(d, cfg)
    cert = solve_bos(BosProblem(cl, target, cfg.alpha, cfg.resolved("degree")), seed=cfg.seed)
    vol = superlevel_volume(cert, seed=cfg.seed, samples=cfg.volume_samples)
    diag = {k: v for k, v in cert.diagnostics.items() if k not in ("assembly_seconds", "solve_seconds")}
    footer = {k: v for k, v in diag.items() if isinstance(v, (int, float, str, bool, np.floating, np.integer))}
    footer.update({"volume_fraction": vol.fraction, "volume_stderr": vol.stderr, "volume_samples": vol.samples,
                   "volume_seed": vol.seed})
    cert.save(_path(d, "certificate"), footer)
    info = {"status": cert.status, "degraded": cert.degraded, "degree": cert.degree, "v_degree": cert.v_degree,
            "field_degree": cl.degree(), "volume": vol.as_dict(), "diagnostics": footer,
            "timing": {"assembly_seconds": cert.diagnostics["assembly_seconds"],
                       "solve_seconds": cert.diagnostics["solve_seconds"]}}
    if cert.status == "failed":
        raise StageError("bos", "SDP solve failed", info)
    return info


def stage_oracle(d, cfg: PipelineConfig) -> dict:
    """Simulated BOS on the exact dynamics, containment and trajectory audits."""
    _require(d, "model", "law", "certificate")
    if cfg.seed is None:
        raise ConfigError("the oracle stage is stochastic; --seed is required")
    params, box, target, law, fld, _ = _closed_loop(d, cfg)
    cert = BosCertificate.load(_path(d, "certificate"))
    sim = orc.SimConfig(step=cfg.oracle_step, samples=cfg.resolved("oracle_samples"), seed=cfg.seed,
                        saturate=cfg.saturate)
    meta = {"box_lo": box.lo, "box_hi": box.hi, "T": box.T}
    res = orc.estimate_bos(law, orc.exact_dynamics(params), box, target, sim, meta)
    v = cert.value(res.t0, res.x0)
    orc.write_labeled_csv(_path(d, "oracle"), res, v, ["theta", "theta_dot"] if box.n == 2 else
                          ["theta1", "theta2", "theta1_dot", "theta2_dot"])
    audit = {"containment": orc.containment_report(cert, res)}
    if cfg.audit_samples:
        for name, dyn in (("exact", orc.exact_dynamics(params)), ("polynomial", orc.polynomial_dynamics(fld))):
            audit[f"trajectories_{name}"] = orc.trajectory_audit(cert, law, dyn, box, target, cfg.audit_samples,
                                                                 cfg.seed, cfg.oracle_step)
    audit["oracle"] = res.summary()
    _write_json(_path(d, "audit"), audit)
    return {**audit, "timing": {"oracle_seconds": res.wall_seconds}}


def stage_rosv(d, cfg: PipelineConfig, bounds: TorqueBounds | None = None, theta_range=None) -> dict:
    """Seat-off ROSv score; IPM trials only."""
    if cfg.model != "ipm":
        return {"skipped": "ROSv is defined on the single pendulum"}
    _require(d, "traj", "model", "law")
    traj = ObservedTrajectory.from_csv(_path(d, "traj"))
    params, box, _, _ = load_model(_path(d, "model"))
    bounds = bounds or FeedbackLaw.load(_path(d, "law")).bounds
    foot = _foot_length(cfg)
    plane = rosv.compute_boundaries(params, bounds, theta_range or (box.lo[0], box.hi[0]), foot)
    plane.to_csv(_path(d, "rosv"))
    score = rosv.rosv_score(*rosv.seatoff_state(traj, params, foot), plane)
    info = {**score.as_dict(), "foot_length": foot, "band": list(plane.band), "notes": plane.notes,
            "u_lo": list(bounds.lo), "u_hi": list(bounds.hi)}
    _write_json(_path(d, "rosv_score"), info)
    return info


STAGES = {"synth": stage_synth, "fit": stage_fit, "control": stage_control, "feedback": stage_feedback,
          "bos": stage_bos, "oracle": stage_oracle, "rosv": stage_rosv}


def run_stage(name: str, d, cfg: PipelineConfig) -> dict:
    cfg.validate()
    Path(d).mkdir(parents=True, exist_ok=True)
    cfg.save(_path(d, "config"))
    try:
        return STAGES[name](d, cfg)
    except (StageError, ConfigError, DegreeError, FileNotFoundError):
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


def _round(obj, digits: int = 12):
    """Round floats so the report body is stable against last-bit noise in printing."""
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}") if np.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _round(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, digits) for v in obj]
    return obj


def run_pipeline(d, cfg: PipelineConfig) -> dict:
    """All stages in order; writes the report and timings, returns the report body."""
    cfg.validate()
    if cfg.seed is None:
        raise ConfigError("the pipeline is stochastic; --seed is required")
    stages = (["fit"] if cfg.input else ["synth", "fit"]) + ["control", "feedback", "bos", "oracle", "rosv"]
    out, timings = {}, {}
    for name in stages:
        start = time.perf_counter()
        info = run_stage(name, d, cfg)
        timings[name] = time.perf_counter() - start
        info = dict(info)
        timings.update({f"{name}.{k}": v for k, v in info.pop("timing", {}).items()})
        out[name] = info
        log.info("stage %s done in %.1f s", name, timings[name])
    report = build_report(cfg, out)
    _path(d, "report").write_text(json.dumps(_round(report), indent=2, sort_keys=True, default=_jsonable) + "\n",
                                  encoding="utf-8")
    _write_json(_path(d, "timings"), timings)
    return report


def build_report(cfg: PipelineConfig, stages: dict) -> dict:
    bos = stages["bos"]
    aud = stages["oracle"]
    return {
        "subject": cfg.subject if not cfg.input else Path(cfg.input).stem,
        "label": cfg.label or cfg.strategy,
        "model": cfg.model,
        "config": {k: ("auto" if v is None else v) for k, v in cfg.to_dict().items()},
        "bos_volume_percent": 100.0 * bos["volume"]["fraction"],
        "bos_volume_stderr_percent": 100.0 * bos["volume"]["stderr"],
        "certificate": {k: bos[k] for k in ("status", "degraded", "degree", "v_degree", "field_degree")},
        "certificate_diagnostics": bos["diagnostics"],
        "tracking": stages["control"],
        "feedback": stages["feedback"],
        "oracle_volume_percent": 100.0 * aud["oracle"]["fraction"],
        "oracle_volume_stderr_percent": 100.0 * aud["oracle"]["stderr"],
        "oracle_volume_at_T_percent": 100.0 * aud["oracle"]["fraction_at_T"],
        "audit": {k: v for k, v in aud.items() if k != "oracle"},
        "rosv": stages["rosv"],
        "notes": [
            "oracle success means first entry into the target by T; the at-T variant is reported alongside",
            "oracle uses the exact dynamics with torque saturation; the certificate uses the Taylor field unsaturated",
        ],
        "artifacts": {k: v for k, v in FILES.items()},
    }


# -- comparisons ------------------------------------------------------------------
COMPARISONS = (("slow", "fast"), ("quasi", "momentum"))


def _better(a: float, b: float, sa: float = 0.0, sb: float = 0.0, k: float = 2.0) -> bool:
    """Strict ordering; with standard errors the gap must also exceed ``k`` combined errors."""
    return bool(a > b and (a - b) >= k * float(np.hypot(sa, sb)))


def pooled_rosv(dirs: list, cfg_overrides: dict | None = None) -> dict:
    """ROSv scores of IPM trials with torque bounds and angle range pooled per subject."""
    groups: dict[str, list] = {}
    for d in dirs:
        cfg = PipelineConfig.load(_path(d, "config")).updated(cfg_overrides or {})
        if cfg.model == "ipm":
            groups.setdefault(cfg.subject, []).append((d, cfg))
    out = {}
    for subj, items in groups.items():
        laws = [FeedbackLaw.load(_path(d, "law")) for d, _ in items]
        boxes = [load_model(_path(d, "model"))[1] for d, _ in items]
        b = TorqueBounds((min(l.bounds.lo[0] for l in laws),), (max(l.bounds.hi[0] for l in laws),))
        rng = (min(bx.lo[0] for bx in boxes), max(bx.hi[0] for bx in boxes))
        for d, cfg in items:
            out[str(d)] = stage_rosv(d, cfg, b, rng)
    return out


def compare_strategies(reports: list[dict], rosv_scores: dict | None = None) -> dict:
    """Per-subject orderings and per-method correct-ordering counts.

    ``reports`` are report bodies; ``rosv_scores`` maps (subject, label) to a
    ROSv distance and overrides the per-trial scores when given.
    """
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    table: dict = {}
    for r in reports:
        key = (r["subject"], r["model"], r["label"])
        if key in table:
            raise ValueError(f"duplicate report for {key}")
        table[key] = r
    subjects = sorted({r["subject"] for r in reports})
    models = sorted({r["model"] for r in reports})
    rows, counts = [], {}
    for subj in subjects:
        labels = {m: {k[2] for k in table if k[0] == subj and k[1] == m} for m in models}
        if not any(len(v) >= 2 for v in labels.values()):
            raise ValueError(f"subject {subj!r} has fewer than two reports for any model")
        for better, worse in COMPARISONS:
            for m in models:
                a, b = table.get((subj, m, better)), table.get((subj, m, worse))
                if a is None or b is None:
                    continue
                ok = _better(a["bos_volume_percent"], b["bos_volume_percent"],
                             a["bos_volume_stderr_percent"], b["bos_volume_stderr_percent"])
                rows.append({"subject": subj, "method": f"BOS {m.upper()}", "comparison": f"{better} > {worse}",
                             "better": a["bos_volume_percent"], "worse": b["bos_volume_percent"], "correct": ok})
            sa = _rosv_distance(subj, better, table, rosv_scores)
            sb = _rosv_distance(subj, worse, table, rosv_scores)
            if sa is not None and sb is not None:
                rows.append({"subject": subj, "method": "ROSv", "comparison": f"{better} > {worse}",
                             "better": sa, "worse": sb, "correct": _better(sa, sb)})
    for row in rows:
        c = counts.setdefault(row["method"], {})
        cell = c.setdefault(row["comparison"], {"correct": 0, "total": 0})
        cell["correct"] += int(row["correct"])
        cell["total"] += 1
    return {"rows": rows, "counts": counts}


def _rosv_distance(subj, label, table, scores):
    if scores is not None and (subj, label) in scores:
        return scores[(subj, label)]
    r = table.get((subj, "ipm", label))
    if r is None or "distance" not in (r.get("rosv") or {}):
        return None
    return r["rosv"]["distance"]


def write_comparison(out_dir, comparison: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "comparison.json", _round(comparison))
    with open(out / "comparison_rows.csv", "w", encoding="utf-8") as fh:
        fh.write("subject,method,comparison,better,worse,correct\n")
        for r in comparison["rows"]:
            fh.write(f"{r['subject']},{r['method']},{r['comparison']},{fmt_value(r['better'])},"
                     f"{fmt_value(r['worse'])},{str(r['correct']).lower()}\n")
    with open(out / "table_v.csv", "w", encoding="utf-8") as fh:
        comps = [f"{a} > {b}" for a, b in COMPARISONS]
        fh.write("method," + ",".join(comps) + "\n")
        for method, cells in sorted(comparison["counts"].items()):
            vals = [f"{cells[c]['correct']}/{cells[c]['total']}" if c in cells else "" for c in comps]
            fh.write(method + "," + ",".join(vals) + "\n")


# -- batches ---------------------------------------------------------------------
# the four synthetic trials per subject behind the strategy comparisons
BATCH_TRIALS = {
    "slow": {"strategy": "preferred", "duration": 1.6},
    "fast": {"strategy": "preferred", "duration": 0.8},
    "quasi": {"strategy": "quasi_static", "duration": 1.6},
    "momentum": {"strategy": "momentum_transfer", "duration": 1.6},
}


def run_batch(out_dir, subjects=None, models=("ipm", "dpm"), seed: int = 0, overrides: dict | None = None) -> dict:
    """Every synthetic subject x trial x model, then the strategy comparison.

    Trials are written to ``out_dir/<model>/<subject>/<label>``.  A failed
    trial is recorded with its stage and message and left out of the
    comparison.
    """
    out = Path(out_dir)
    base = PipelineConfig(seed=seed).updated(overrides or {})
    names = list(subjects) if subjects else [s.name for s in synthetic_subjects(base.subject_count,
                                                                                 base.subject_seed)]
    reports, dirs, failures, wall = [], [], [], {}
    for model in models:
        for subj in names:
            for label, trial in BATCH_TRIALS.items():
                d = out / model / subj / label
                cfg = dataclasses.replace(base, model=model, subject=subj, label=label, **trial)
                start = time.perf_counter()
                try:
                    reports.append(run_pipeline(d, cfg))
                    dirs.append(d)
                except StageError as exc:
                    failures.append({"dir": str(d), "stage": exc.stage, "message": str(exc)})
                    log.error("%s", exc)
                wall[str(d)] = time.perf_counter() - start
    scores = {}
    pooled = pooled_rosv([d for d in dirs if (d / FILES["model"]).is_file()])
    for d, r in zip(dirs, reports):
        if "distance" in pooled.get(str(d), {}):
            scores[(r["subject"], r["label"])] = pooled[str(d)]["distance"]
    comparison = compare_strategies(reports, scores) if len(reports) >= 2 else {"rows": [], "counts": {}}
    write_comparison(out, comparison)
    _write_json(out / "batch_failures.json", failures)
    _write_json(out / "batch_timings.json", wall)
    return {"reports": reports, "dirs": dirs, "failures": failures, "wall_seconds": wall,
            "comparison": comparison, "rosv_pooled": pooled}


# -- slices ---------------------------------------------------------------------
def export_bos_slices(cert: BosCertificate, times, grid: int, path) -> int:
    """Membership of a regular state grid at each requested time; returns the row count."""
    times = np.atleast_1d(np.asarray(times, float))
    T = cert.box.T
    if np.any(times < -1e-12) or np.any(times > T * (1 + 1e-12)):
        raise ValueError(f"slice times must lie in [0, {T}]")
    n = cert.box.n
    names = ["theta", "theta_dot"] if n == 2 else ["theta1", "theta2", "theta1_dot", "theta2_dot"]
    rows = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["t", *names, "v", "member"]) + "\n")
        if grid <= 0 or times.size == 0:
            return 0
        axes = [np.linspace(a, b, grid) for a, b in zip(cert.box.lo, cert.box.hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
        for t in np.clip(times, 0.0, T):
            v = cert.value(np.full(len(pts), t), pts)
            mem = membership(cert, np.full(len(pts), t), pts, check_domain=False)
            for p, vi, mi in zip(pts, v, mem):
                fh.write(",".join([repr(float(t)), *(repr(float(c)) for c in p), repr(float(vi)), str(int(mi))]) + "\n")
            rows += len(pts)
    return rows


__all__ = ["PipelineConfig", "StageError", "ConfigError", "run_stage", "run_pipeline", "compare_strategies",
           "pooled_rosv", "write_comparison", "export_bos_slices", "run_batch", "BATCH_TRIALS", "FILES"]
