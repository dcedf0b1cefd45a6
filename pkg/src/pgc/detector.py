"""Normality score, its standardization, and sequential decision rules.

For a Gaussian prediction the log-density ratio against the mode reduces to
``z = -D^2 / 2`` with ``D^2`` the squared Mahalanobis distance.  When the
observed action really follows the prediction, ``D^2`` is chi-square with ``d``
degrees of freedom, so ``E[z] = -d/2`` and ``Var[z] = d/2`` regardless of the
state; the two-sided CUSUM below tracks departures from that mean.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from . import linalg
from .linalg import DimensionMismatch

PLUS, MINUS = "plus", "minus"


@dataclass(frozen=True)
class NormalityScore:
    z: float
    t: int = 0
    observer: int = -1
    victim: int = -1


@dataclass(frozen=True)
class StandardMoments:
    d: int

    @property
    def mean(self) -> float:
        return -self.d / 2.0

    @property
    def std(self) -> float:
        return math.sqrt(self.d / 2.0)


@dataclass
class DetectorConfig:
    w: float = 0.5
    beta_plus: float = 5.0
    beta_minus: float = 5.0
    u: int = 1
    mode: str = "cusum"
    window_len: int = 10

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("drift w must be nonnegative")
        if self.beta_plus <= 0 or self.beta_minus <= 0:
            raise ValueError("thresholds must be positive")
        if self.u < 1:
            raise ValueError("quorum u must be at least 1")
        if self.mode not in ("cusum", "window"):
            raise ValueError(f"unknown detection mode {self.mode!r}")
        if self.window_len < 1:
            raise ValueError("window_len must be at least 1")

    def with_beta(self, beta: float) -> "DetectorConfig":
        return replace(self, beta_plus=beta, beta_minus=beta)


@dataclass
class CusumState:
    c_plus: float = 0.0
    c_minus: float = 0.0
    w: float = 0.0
    alarmed: Optional[tuple] = None


def normality_score(params, action, t: int = 0, observer: int = -1, victim: int = -1) -> NormalityScore:
    action = np.asarray(action, dtype=float)
    if action.shape != params.mu.shape:
        raise DimensionMismatch(f"{action.shape} vs {params.mu.shape}")
    z = -0.5 * linalg.mahalanobis_sq(action, params.mu, params.chol)
    return NormalityScore(z, t, observer, victim)


def log_density(x, mu, cov) -> float:
    """Multivariate normal log-density from the covariance matrix."""
    x, mu, cov = (np.asarray(v, dtype=float) for v in (x, mu, cov))
    d = len(mu)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise linalg.NotPositiveDefinite("covariance is not positive definite")
    e = x - mu
    return float(-0.5 * (d * math.log(2 * math.pi) + logdet + e @ np.linalg.solve(cov, e)))


def standardize(score, d: int) -> float:
    if d < 1:
        raise ValueError("d must be positive")
    z = score.z if isinstance(score, NormalityScore) else float(score)
    m = StandardMoments(d)
    return (z - m.mean) / m.std


def cusum_update(state: CusumState, z_std: float) -> CusumState:
    return replace(state,
                   c_plus=max(0.0, state.c_plus + z_std - state.w),
                   c_minus=max(0.0, state.c_minus - z_std - state.w))


def check_alarm(state: CusumState, cfg: DetectorConfig, t: int):
    """Latch the first strict threshold crossing; ``plus`` wins ties."""
    if state.alarmed is None:
        if state.c_plus > cfg.beta_plus:
            state.alarmed = (PLUS, t)
        elif state.c_minus > cfg.beta_minus:
            state.alarmed = (MINUS, t)
    return state.alarmed


class WindowBuffer:
    """Sliding-window mean of a score, compared with its reference moments.

    The metric ``|mean(window) - ref_mean| / ref_std`` is emitted once the
    window is full (stride one)."""

    def __init__(self, window_len: int, ref_mean: float, ref_std: float):
        if window_len < 1:
            raise ValueError("window_len must be at least 1")
        self.window_len = window_len
        self.ref_mean = ref_mean
        self.ref_std = ref_std
        self.values = deque(maxlen=window_len)

    @classmethod
    def gaussian(cls, window_len: int, d: int) -> "WindowBuffer":
        m = StandardMoments(d)
        return cls(window_len, m.mean, m.std)


def window_score_update(buffer: WindowBuffer, z: float, window_len: int | None = None):
    if window_len is not None and window_len != buffer.window_len:
        raise ValueError("window_len does not match the buffer")
    buffer.values.append(float(z))
    if len(buffer.values) < buffer.window_len:
        return None
    return abs(sum(buffer.values) / buffer.window_len - buffer.ref_mean) / buffer.ref_std


def aggregate(alarms: Mapping, u: int):
    """Earliest time by which at least ``u`` observers have alarmed."""
    if u < 1:
        raise ValueError("quorum u must be at least 1")
    times = sorted(t for t in alarms.values() if t is not None)
    if len(times) < u:
        return None
    return times[u - 1]


# ---------------------------------------------------------------- batched


class CusumBank:
    """Vectorized two-sided CUSUM over arbitrary leading shape."""

    def __init__(self, shape, w: float):
        self.w = w
        self.c_plus = np.zeros(shape)
        self.c_minus = np.zeros(shape)

    def update(self, z_std: np.ndarray):
        self.c_plus = np.maximum(0.0, self.c_plus + z_std - self.w)
        self.c_minus = np.maximum(0.0, self.c_minus - z_std - self.w)
        return self.c_plus, self.c_minus


def window_metric_trace(z: np.ndarray, window_len: int, ref_mean, ref_std) -> np.ndarray:
    """Window metric along axis 0 of ``z`` (T, ...); zeros until the window
    first fills."""
    T = z.shape[0]
    out = np.zeros_like(z)
    if T < window_len:
        return out
    csum = np.cumsum(z, axis=0)
    sums = csum[window_len - 1:].copy()
    sums[1:] -= csum[:-window_len]
    out[window_len - 1:] = np.abs(sums / window_len - ref_mean) / ref_std
    return out


def first_crossing(trace: np.ndarray, beta: float) -> np.ndarray:
    """Index of the first entry strictly above ``beta`` along axis 0, or -1."""
    hit = trace > beta
    first = np.argmax(hit, axis=0)
    return np.where(hit.any(axis=0), first, -1)
