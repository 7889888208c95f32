"""Command-line entry point.

    stsbos <stage> TRIAL_DIR [--config FILE] [--key=value ...]
    stsbos compare TRIAL_DIR [TRIAL_DIR ...] --out DIR
    stsbos export-slices TRIAL_DIR --times 0,0.5,1 --grid 41

Configuration comes from the trial's ``00_config.txt`` if present, then the
``--config`` file, then ``--key=value`` flags.  Stochastic stages refuse to
run without ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .sos import BosCertificate, DegreeError
from .textio import floats, read_keyvalue

STOCHASTIC = {"synth", "bos", "oracle", "pipeline"}


def _split_overrides(extra: list[str]) -> dict:
    out = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise pl.ConfigError(f"expected --key=value, got {item!r}")
        k, v = item[2:].split("=", 1)
        out[k] = v
    return out


def _config(trial: Path, config_file: str | None, overrides: dict, fresh: bool) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig()
    stored = trial / pl.FILES["config"]
    if stored.is_file() and not fresh:
        cfg = pl.PipelineConfig.load(stored)
    if config_file:
        cfg = cfg.updated(read_keyvalue(config_file))
    return cfg.updated(overrides)


def _stage_command(args, extra) -> int:
    trial = Path(args.trial)
    overrides = _split_overrides(extra)
    # a fresh synthetic run or pipeline starts from the defaults, not a stale directory
    cfg = _config(trial, args.config, overrides, fresh=args.command in ("synth", "pipeline"))
    if args.command in STOCHASTIC and "seed" not in overrides and (args.command != "synth" or cfg.noise > 0):
        raise pl.ConfigError(f"{args.command} is stochastic: pass --seed=N")
    if args.command == "pipeline":
        out = pl.run_pipeline(trial, cfg)
        summary = {k: out[k] for k in ("subject", "label", "model", "bos_volume_percent", "oracle_volume_percent")}
        summary["status"] = out["certificate"]["status"]
    else:
        summary = pl.run_stage(args.command, trial, cfg)
    print(json.dumps(pl._round(summary), indent=2, sort_keys=True, default=pl._jsonable))
    return 0


def _compare(args, extra) -> int:
    dirs = [Path(d) for d in args.trials]
    reports = []
    for d in dirs:
        p = d / pl.FILES["report"]
        if not p.is_file():
            raise FileNotFoundError(f"{p} is missing; run the pipeline first")
        reports.append(json.loads(p.read_text(encoding="utf-8")))
    scores = None
    if args.pooled_rosv:
        pooled = pl.pooled_rosv(dirs)
        scores = {}
        for d, r in zip(dirs, reports):
            if str(d) in pooled and "distance" in pooled[str(d)]:
                scores[(r["subject"], r["label"])] = pooled[str(d)]["distance"]
    comp = pl.compare_strategies(reports, scores)
    pl.write_comparison(args.out, comp)
    for method, cells in sorted(comp["counts"].items()):
        print(method, "  ".join(f"{c}: {v['correct']}/{v['total']}" for c, v in cells.items()))
    return 0


def _export(args, extra) -> int:
    trial = Path(args.trial)
    cert = BosCertificate.load(trial / pl.FILES["certificate"])
    times = floats(args.times) if args.times else tuple(cert.box.T * k / 10 for k in range(11))
    out = args.out or trial / "08_slices.csv"
    rows = pl.export_bos_slices(cert, times, args.grid, out)
    print(f"wrote {rows} rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stsbos", description="Basin-of-stability pipeline for sit-to-stand models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*pl.STAGES, "pipeline"):
        s = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline" else "run every stage")
        s.add_argument("trial", help="trial directory")
        s.add_argument("--config", help="flat key=value configuration file")
    c = sub.add_parser("compare", help="strategy comparisons across trial directories")
    c.add_argument("trials", nargs="+")
    c.add_argument("--out", required=True)
    c.add_argument("--per-trial-rosv", dest="pooled_rosv", action="store_false",
                   help="score ROSv with each trial's own torque bounds instead of the subject's pooled bounds")
    e = sub.add_parser("export-slices", help="certificate membership on time slices of a state grid")
    e.add_argument("trial")
    e.add_argument("--times", help="comma-separated slice times (default: 11 equally spaced)")
    e.add_argument("--grid", type=int, default=41, help="points per state axis")
    e.add_argument("--out")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if extra and args.command in ("compare", "export-slices"):
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        if args.command == "compare":
            return _compare(args, extra)
        if args.command == "export-slices":
            return _export(args, extra)
        return _stage_command(args, extra)
    except pl.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, indent=2, default=pl._jsonable), file=sys.stderr)
        return 3
    except (pl.ConfigError, DegreeError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
