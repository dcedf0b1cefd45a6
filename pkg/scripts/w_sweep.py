"""AUC as a function of the CUSUM drift w, with one predictor bank and the
attacks of the config trained once."""
import argparse

from pgc.attacks import TRAINABLE
from pgc.benchmark import build_bank, evaluate, train_attack
from pgc.config import load
from pgc.detector import DetectorConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--w", type=float, nargs="+", default=[0.0, 0.25, 0.5, 1.0, 2.0])
    args = ap.parse_args()

    run = load(args.config)
    bank, _ = build_bank(run)
    attacks = []
    for spec in run.attacks:
        if spec.kind in TRAINABLE and spec.policy_params is None:
            spec, _ = train_attack(run, spec, bank if spec.kind == "dyn" else None)
        attacks.append(spec)
    rows = {}
    for w in args.w:
        res = evaluate(run, bank, attacks, det=DetectorConfig(w=w))
        rows[w] = res.auc
    names = list(next(iter(rows.values())))
    print("w      " + " ".join(f"{n:>12s}" for n in names))
    for w, aucs in rows.items():
        print(f"{w:<6g} " + " ".join(f"{aucs[n]:12.4f}" for n in names))


if __name__ == "__main__":
    main()
