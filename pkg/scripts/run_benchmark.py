"""Run the whole benchmark for a config and write the report directory.

    python scripts/run_benchmark.py configs/acceptance.toml --out runs/acceptance
"""
import argparse
import time
from pathlib import Path

from pgc.config import load
from pgc.benchmark import run_benchmark
from pgc.report import write_report


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--out", default=None)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    run = load(args.config)
    out = Path(args.out or run.evaluation.out_dir)
    t = time.perf_counter()
    res = run_benchmark(run, workers=args.workers,
                        log=lambda it, elite, best: print(f"  cem {it:3d} elite {elite:.3f}"))
    seeds = {name: [int(c.seeds[0]), int(c.seeds[-1]) + 1] for name, c in res.conditions.items()}
    write_report(out, res.curves, res.ttd, res.impact, run.hash(), run.to_dict(), seeds,
                 extra={"timings": res.timings})
    print(f"done in {time.perf_counter() - t:.0f}s, report in {out}")
    for name, auc in res.auc.items():
        print(f"{name:16s} AUC {auc:.4f}  reward {res.impact[name]['mean']:8.2f}")
    print(f"{'none':16s}              reward {res.impact['none']['mean']:8.2f}")


if __name__ == "__main__":
    main()
