"""Run the synthetic strategy batch (5 subjects x 4 trials x IPM/DPM) and print the comparison table.

    python scripts/run_batch.py OUT_DIR [--seed 0] [--models ipm,dpm] [--subjects S1,S2] [--key=value ...]
"""

import argparse
import json
import logging
import statistics
import time

from stsbos import pipeline as pl


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--models", default="ipm,dpm")
    ap.add_argument("--subjects", default="")
    ap.add_argument("-v", "--verbose", action="store_true")
    args, extra = ap.parse_known_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = dict(item[2:].split("=", 1) for item in extra)
    start = time.perf_counter()
    res = pl.run_batch(args.out, [s for s in args.subjects.split(",") if s] or None, args.models.split(","),
                       args.seed, overrides)
    for r in res["reports"]:
        print(f"{r['model']:4s} {r['subject']:3s} {r['label']:9s} BOS {r['bos_volume_percent']:6.2f}% "
              f"+- {r['bos_volume_stderr_percent']:.2f}  oracle {r['oracle_volume_percent']:6.2f}%  "
              f"{r['certificate']['status']}")
    for model in sorted({r["model"] for r in res["reports"]}):
        vols = [r["bos_volume_percent"] for r in res["reports"] if r["model"] == model]
        print(f"median {model} volume {statistics.median(vols):.2f}%")
    for method, cells in sorted(res["comparison"]["counts"].items()):
        print(method, "  ".join(f"{c}: {v['correct']}/{v['total']}" for c, v in cells.items()))
    if res["failures"]:
        print(json.dumps(res["failures"], indent=2))
    print(f"total {time.perf_counter() - start:.0f} s")


if __name__ == "__main__":
    main()
