"""Discrete baseline: quantize the action box and predict a categorical
distribution over the ``Q**d`` cells with the same recurrent body.

The categorical score ``log p(bin) - log max_b p(b)`` has no state-independent
mean, so detection uses the sliding-window metric with moments estimated on
clean validation episodes instead of CUSUM.  The head grows as ``Q**d``
(``3**9 = 19683`` cells for a 9-dimensional action), which is why only small
``d`` is practical here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import predictor
from .predictor import PredictorNet, TrainConfig


class OutOfBoundsAction(ValueError):
    pass


def head_size(levels: int, d: int) -> int:
    return levels ** d


@dataclass(frozen=True)
class Quantizer:
    levels: int
    low: tuple
    high: tuple

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 levels per dimension")
        object.__setattr__(self, "low", tuple(float(v) for v in self.low))
        object.__setattr__(self, "high", tuple(float(v) for v in self.high))
        if len(self.low) != len(self.high) or not self.low:
            raise ValueError("bounds must have matching nonzero length")
        if any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ValueError("empty interval in bounds")

    @classmethod
    def box(cls, levels: int, d: int, low: float, high: float) -> "Quantizer":
        return cls(levels, (low,) * d, (high,) * d)

    @property
    def d(self) -> int:
        return len(self.low)

    @property
    def n_bins(self) -> int:
        return head_size(self.levels, self.d)

    def cell_bins(self, actions: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Per-dimension bin of each action (..., d).  Cells are closed on the
        right, ``[low, e1], (e1, e2], ...``, so an action sitting on an
        interior edge falls into the lower cell."""
        a = np.asarray(actions, dtype=float)
        low, high = np.array(self.low), np.array(self.high)
        if np.any(a < low - tol) or np.any(a > high + tol):
            raise OutOfBoundsAction("action outside the quantizer box")
        a = np.clip(a, low, high)
        width = (high - low) / self.levels
        k = np.ceil((a - low) / width) - 1
        return np.clip(k, 0, self.levels - 1).astype(np.int64)

    def quantize(self, actions) -> np.ndarray:
        bins = self.cell_bins(actions)
        radix = self.levels ** np.arange(self.d)
        return (bins * radix).sum(-1)

    def dequantize(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        if np.any(index < 0) or np.any(index >= self.n_bins):
            raise IndexError("bin index out of range")
        digits = (index[..., None] // self.levels ** np.arange(self.d)) % self.levels
        low, high = np.array(self.low), np.array(self.high)
        width = (high - low) / self.levels
        return low + (digits + 0.5) * width


def quantize(q: Quantizer, action):
    out = q.quantize(action)
    return int(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CategoricalParams:
    logits: np.ndarray

    def probabilities(self) -> np.ndarray:
        e = np.exp(self.logits - self.logits.max())
        return e / e.sum()


def discrete_normality_score(params: CategoricalParams, bin: int) -> float:
    logits = np.asarray(params.logits, dtype=float)
    if not 0 <= bin < len(logits):
        raise IndexError(f"bin {bin} out of range")
    return float(logits[bin] - logits.max())


def categorical_scores(logits: np.ndarray, bins: np.ndarray) -> np.ndarray:
    picked = np.take_along_axis(logits, bins[..., None], axis=-1)[..., 0]
    return picked - logits.max(-1)


class CategoricalHead:
    name = "categorical"

    def __init__(self, quantizer: Quantizer):
        self.quantizer = quantizer
        self.d = quantizer.d
        self.out_dim = quantizer.n_bins

    def to_json(self) -> dict:
        q = self.quantizer
        return {"levels": q.levels, "low": list(q.low), "high": list(q.high)}

    @classmethod
    def from_json(cls, blob: dict) -> "CategoricalHead":
        return cls(Quantizer(blob["levels"], tuple(blob["low"]), tuple(blob["high"])))

    def params(self, raw: np.ndarray):
        return raw

    def loss_grad(self, raw: np.ndarray, actions: np.ndarray):
        bins = self.quantizer.quantize(actions)
        m = raw.max(-1, keepdims=True)
        e = np.exp(raw - m)
        z = e.sum(-1, keepdims=True)
        logp = raw - m - np.log(z)
        rows = np.arange(len(raw))
        loss = -logp[rows, bins]
        grad = e / z
        grad[rows, bins] -= 1.0
        return loss, grad


def make_discrete_net(obs_dim: int, quantizer: Quantizer, hidden_size: int, seed: int,
                      prev_action: bool = False, shared: bool = False) -> PredictorNet:
    return PredictorNet.initialized(obs_dim, quantizer.d, hidden_size, seed,
                                    head=CategoricalHead(quantizer),
                                    prev_action=prev_action, shared=shared)


def train_discrete(net: PredictorNet, data, cfg: TrainConfig, seed: int):
    if not isinstance(net.head, CategoricalHead):
        raise TypeError("train_discrete needs a categorical-head network")
    return predictor.train(net, data, cfg, seed)


def score_moments(net: PredictorNet, samples) -> tuple:
    """Empirical mean and standard deviation of the categorical score over
    clean episodes; these replace the analytic Gaussian moments."""
    X, A, W = predictor._stack(samples, net)
    raw, _ = net.forward_seq(X)
    bins = net.head.quantizer.quantize(A)
    s = categorical_scores(raw, bins)[W > 0]
    return float(s.mean()), float(max(s.std(), 1e-6))
