"""One synthetic trial end to end, plus plot data for the basin slices and the perturbed rollouts.

    python scripts/demo_trial.py OUT_DIR [--model ipm] [--strategy preferred] [--seed 0]

Writes the trial artifacts, ``08_slices.csv`` (certificate membership on
time slices) and ``08_rollouts.csv`` (the nominal and a few perturbed
closed-loop trajectories with their certificate values).
"""

import argparse
import json

import numpy as np

from stsbos import pipeline as pl
from stsbos.feedback import FeedbackLaw
from stsbos.models import load_model
from stsbos.oracle import exact_dynamics, simulate_closed_loop
from stsbos.signal import ObservedTrajectory
from stsbos.sos import BosCertificate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--model", default="ipm", choices=["ipm", "dpm"])
    ap.add_argument("--strategy", default="preferred")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--perturbations", type=int, default=6)
    args = ap.parse_args()

    cfg = pl.PipelineConfig(model=args.model, strategy=args.strategy, seed=args.seed)
    report = pl.run_pipeline(args.out, cfg)
    d = pl.Path(args.out)
    cert = BosCertificate.load(d / pl.FILES["certificate"])
    T = cert.box.T
    pl.export_bos_slices(cert, np.linspace(0, T, 5), 41 if cert.box.n == 2 else 9, d / "08_slices.csv")

    params, box, target, _ = load_model(d / pl.FILES["model"])
    law = FeedbackLaw.load(d / pl.FILES["law"])
    traj = ObservedTrajectory.from_csv(d / pl.FILES["traj"])
    rng = np.random.default_rng(args.seed)
    x0 = traj.x[0] + rng.normal(scale=0.15, size=(args.perturbations, box.n)) * box.halfwidth
    x0 = np.vstack([traj.x[0], np.clip(x0, box.lo, box.hi)])
    b = simulate_closed_loop(x0, 0.0, law, exact_dynamics(params), box, target, T / 400, saturate=cfg.saturate,
                             record=True)
    with open(d / "08_rollouts.csv", "w", encoding="utf-8") as fh:
        fh.write("run,t," + ",".join(f"x{i}" for i in range(box.n)) + ",v,reached\n")
        for k in range(x0.shape[0]):
            v = cert.value(b.times[:, k], b.states[:, k, :])
            for t, x, vi in zip(b.times[:, k], b.states[:, k, :], v):
                fh.write(f"{k},{float(t)!r}," + ",".join(repr(float(c)) for c in x) + f",{float(vi)!r},{int(b.reached[k])}\n")

    print(json.dumps({k: report[k] for k in ("model", "label", "bos_volume_percent", "oracle_volume_percent")},
                     indent=2))
    print(f"rollouts reaching the target: {int(b.reached.sum())}/{x0.shape[0]} (run 0 is nominal)")


if __name__ == "__main__":
    main()
