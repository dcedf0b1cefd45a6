"""Empirical moments of the normality score when actions follow the
predicted Gaussian exactly, against -d/2 and d/2."""
import argparse

import numpy as np

from pgc import linalg
from pgc.detector import StandardMoments
from pgc.predictor import PredictorNet


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--draws", type=int, default=100_000)
    ap.add_argument("--dims", type=int, nargs="+", default=[1, 2, 4, 9, 16])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'d':>3} {'mean z':>9} {'-d/2':>7} {'var z':>8} {'d/2':>6}")
    for d in args.dims:
        net = PredictorNet.initialized(5, d, 8, args.seed + d)
        net.params[net.slice_of("out.W")] *= 20.0
        raw, _ = net.forward_seq(rng.normal(size=(args.draws, 4, 5)))
        mu, L = net.head.params(raw[:, -1])
        a = mu + np.einsum("nij,nj->ni", L, rng.standard_normal((args.draws, d)))
        y = linalg.forward_substitute_batch(L, a - mu)
        z = -0.5 * (y * y).sum(-1)
        m = StandardMoments(d)
        print(f"{d:3d} {z.mean():9.4f} {m.mean:7.2f} {z.var():8.4f} {m.std ** 2:6.2f}")


if __name__ == "__main__":
    main()
