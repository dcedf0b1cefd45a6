"""Time to detection against false positive rate, read from a report
directory written by ``pgc evaluate`` or run_benchmark.py."""
import argparse
from collections import defaultdict

from pgc.report import read_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("report_dir")
    ap.add_argument("--max-fpr", type=float, default=0.2)
    args = ap.parse_args()

    rows = defaultdict(list)
    for r in read_csv(f"{args.report_dir}/ttd.csv"):
        if r["ttd"] and float(r["fpr"]) <= args.max_fpr:
            rows[r["condition"]].append((float(r["fpr"]), float(r["ttd"]), float(r["beta"])))
    for name, pts in rows.items():
        print(name)
        for fpr, ttd, beta in sorted(pts):
            print(f"  fpr {fpr:6.3f}  ttd {ttd:7.2f}  beta {beta:8.3f}")


if __name__ == "__main__":
    main()
