"""Recurrent predictors of a neighbour's action distribution.

A ``PredictorNet`` maps the observer's observation history to the parameters
of a multivariate Gaussian over the neighbour's next action.  The network is
an affine+ReLU preprocessing layer, a single GRU cell and a linear output
layer whose rows are interpreted by a *head*:

* ``GaussianHead``: the first ``d`` outputs are the mean, the remaining
  ``d(d+1)/2`` are the packed Cholesky factor.  Diagonal entries go through
  ``floor + (1 - floor) * exp(raw)`` so any real output is a valid factor and
  zero output gives the identity.
* ``GaussianHead(diagonal=True)``: only the ``d`` diagonal entries are
  predicted (independent action dimensions).

Gradients are written out by hand (truncated BPTT); ``gradient_check`` compares
them against central differences.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg
from .linalg import DimensionMismatch, LowerTriangular


class DivergenceDetected(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 20
    epochs: int = 10
    bptt_len: int = 25
    hidden_size: int = 128
    diag_floor: float = 1e-3
    momentum: float = 0.9
    clip_norm: float = 10.0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "bptt_len",
                     "hidden_size", "diag_floor", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


@dataclass(frozen=True)
class GaussianParams:
    mu: np.ndarray
    chol: LowerTriangular

    @property
    def dim(self) -> int:
        return self.chol.dim

    def covariance(self) -> np.ndarray:
        L = self.chol.dense()
        return L @ L.T


@dataclass
class RecurrentState:
    hidden: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int) -> "RecurrentState":
        return cls(np.zeros(hidden_size))


@dataclass
class TrainingSample:
    """One episode of (observer observation, neighbour action) pairs."""

    obs: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.obs.ndim != 2 or self.actions.ndim != 2:
            raise DimensionMismatch("obs and actions must be (T, dim) arrays")
        if len(self.obs) != len(self.actions):
            raise DimensionMismatch("obs and actions differ in length")

    def __len__(self):
        return len(self.obs)


# ---------------------------------------------------------------- heads


class GaussianHead:
    def __init__(self, action_dim: int, diagonal: bool = False, diag_floor: float = 1e-3):
        self.d = action_dim
        self.diagonal = diagonal
        self.diag_floor = diag_floor
        self.n_chol = action_dim if diagonal else linalg.packed_size(action_dim)
        self.out_dim = action_dim + self.n_chol
        self._diag_pos = (np.arange(action_dim) if diagonal
                          else linalg.diag_indices(action_dim))

    @property
    def name(self) -> str:
        return "diagonal" if self.diagonal else "gaussian"

    def to_json(self) -> dict:
        return {"diag_floor": self.diag_floor}

    def _diag(self, raw_diag):
        return self.diag_floor + (1.0 - self.diag_floor) * np.exp(raw_diag)

    def params(self, raw: np.ndarray):
        """raw (..., out_dim) -> mu (..., d), dense L (..., d, d)."""
        d = self.d
        mu = raw[..., :d]
        craw = raw[..., d:]
        L = np.zeros(raw.shape[:-1] + (d, d))
        if self.diagonal:
            idx = np.arange(d)
            L[..., idx, idx] = self._diag(craw)
        else:
            packed = craw.copy()
            packed[..., self._diag_pos] = self._diag(craw[..., self._diag_pos])
            rows, cols = np.tril_indices(d)
            L[..., rows, cols] = packed
        return mu, L

    def loss_grad(self, raw: np.ndarray, actions: np.ndarray):
        """Per-row nll and its gradient w.r.t. ``raw``; inputs are (N, .)."""
        d = self.d
        mu, L = self.params(raw)
        e = actions - mu
        y = linalg.forward_substitute_batch(L, e)
        s = linalg.back_substitute_transpose_batch(L, y)
        ldiag = np.diagonal(L, axis1=-2, axis2=-1)
        loss = 2.0 * np.log(ldiag).sum(-1) + np.einsum("nk,nk->n", y, y)

        draw = np.empty_like(raw)
        draw[:, :d] = -2.0 * s
        gL = -2.0 * s[:, :, None] * y[:, None, :]
        idx = np.arange(d)
        gL[:, idx, idx] += 2.0 / ldiag
        craw = raw[:, d:]
        if self.diagonal:
            dcraw = gL[:, idx, idx] * (1.0 - self.diag_floor) * np.exp(craw)
        else:
            rows, cols = np.tril_indices(d)
            dcraw = gL[:, rows, cols]
            dp = self._diag_pos
            dcraw[:, dp] *= (1.0 - self.diag_floor) * np.exp(craw[:, dp])
        draw[:, d:] = dcraw
        return loss, draw


# ---------------------------------------------------------------- network


def _outer_sum(a, b):
    """sum over (t, b) of a[t, b, :, None] * b[t, b, None, :]."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class PredictorNet:
    """Affine+ReLU -> GRU -> linear head, with a flat parameter vector."""

    def __init__(self, obs_dim: int, action_dim: int, hidden_size: int,
                 head=None, prev_action: bool = False, shared: bool = False,
                 params: np.ndarray | None = None):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hidden_size = hidden_size
        self.head = head if head is not None else GaussianHead(action_dim)
        self.prev_action = prev_action
        self.shared = shared
        self.in_dim = obs_dim + (action_dim if prev_action else 0)
        H, n = hidden_size, self.in_dim
        self.layout = [
            ("pre.W", (H, n)), ("pre.b", (H,)),
            ("gru.Wz", (H, H)), ("gru.Uz", (H, H)), ("gru.bz", (H,)),
            ("gru.Wr", (H, H)), ("gru.Ur", (H, H)), ("gru.br", (H,)),
            ("gru.Wn", (H, H)), ("gru.Un", (H, H)), ("gru.bn", (H,)),
            ("out.W", (self.head.out_dim, H)), ("out.b", (self.head.out_dim,)),
        ]
        self._slices = {}
        off = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self._slices[name] = (off, off + size, shape)
            off += size
        self.n_params = off
        if params is None:
            params = np.zeros(off)
        params = np.asarray(params, dtype=float)
        if params.shape != (off,):
            raise DimensionMismatch(f"expected {off} parameters, got {params.shape}")
        self.params = params.copy()

    # -- construction helpers

    @classmethod
    def initialized(cls, obs_dim, action_dim, hidden_size, seed, **kw) -> "PredictorNet":
        net = cls(obs_dim, action_dim, hidden_size, **kw)
        rng = np.random.default_rng(seed)
        theta = np.zeros(net.n_params)
        for name, shape in net.layout:
            lo, hi, _ = net._slices[name]
            if len(shape) == 2:
                bound = math.sqrt(6.0 / (shape[0] + shape[1]))
                if name == "out.W":
                    bound *= 0.1
                theta[lo:hi] = rng.uniform(-bound, bound, hi - lo)
        net.params = theta
        return net

    def copy(self, params=None) -> "PredictorNet":
        new = copy.copy(self)
        new.params = (self.params if params is None else np.asarray(params, float)).copy()
        return new

    def view(self, name: str, theta=None) -> np.ndarray:
        lo, hi, shape = self._slices[name]
        theta = self.params if theta is None else theta
        return theta[lo:hi].reshape(shape)

    def slice_of(self, name: str) -> slice:
        lo, hi, _ = self._slices[name]
        return slice(lo, hi)

    def weights(self):
        return {name: self.view(name) for name, _ in self.layout}

    # -- inputs

    def build_inputs(self, obs: np.ndarray, actions: np.ndarray | None = None) -> np.ndarray:
        """(..., T, obs_dim) observations -> network inputs.  With
        ``prev_action`` the neighbour's previous action (zeros at t=0) is
        appended."""
        obs = np.asarray(obs, dtype=float)
        if obs.shape[-1] != self.obs_dim:
            raise DimensionMismatch(f"obs dim {obs.shape[-1]} != {self.obs_dim}")
        if not self.prev_action:
            return obs
        prev = np.zeros(obs.shape[:-1] + (self.action_dim,))
        prev[..., 1:, :] = actions[..., :-1, :]
        return np.concatenate([obs, prev], axis=-1)

    # -- forward

    def step(self, h: np.ndarray, x: np.ndarray):
        """One recurrent step on a batch: h (B, H), x (B, in_dim) -> (h', raw)."""
        w = self.weights()
        p = np.maximum(x @ w["pre.W"].T + w["pre.b"], 0.0)
        z = _sigmoid(p @ w["gru.Wz"].T + h @ w["gru.Uz"].T + w["gru.bz"])
        r = _sigmoid(p @ w["gru.Wr"].T + h @ w["gru.Ur"].T + w["gru.br"])
        n = np.tanh(p @ w["gru.Wn"].T + (r * h) @ w["gru.Un"].T + w["gru.bn"])
        h_new = (1.0 - z) * h + z * n
        raw = h_new @ w["out.W"].T + w["out.b"]
        return h_new, raw

    def forward_seq(self, X: np.ndarray, h0: np.ndarray | None = None):
        """X (B, T, in_dim) -> raw outputs (B, T, out_dim) plus a cache."""
        B, T, _ = X.shape
        H = self.hidden_size
        w = self.weights()
        Xt = np.ascontiguousarray(X.transpose(1, 0, 2))
        a = Xt @ w["pre.W"].T + w["pre.b"]
        p = np.maximum(a, 0.0)
        pz = p @ w["gru.Wz"].T + w["gru.bz"]
        pr = p @ w["gru.Wr"].T + w["gru.br"]
        pn = p @ w["gru.Wn"].T + w["gru.bn"]
        h = np.zeros((B, H)) if h0 is None else h0
        hs = np.empty((T + 1, B, H))
        hs[0] = h
        z = np.empty((T, B, H))
        r = np.empty((T, B, H))
        n = np.empty((T, B, H))
        Uz, Ur, Un = w["gru.Uz"].T, w["gru.Ur"].T, w["gru.Un"].T
        for t in range(T):
            z[t] = _sigmoid(pz[t] + h @ Uz)
            r[t] = _sigmoid(pr[t] + h @ Ur)
            n[t] = np.tanh(pn[t] + (r[t] * h) @ Un)
            h = (1.0 - z[t]) * h + z[t] * n[t]
            hs[t + 1] = h
        raw = hs[1:] @ w["out.W"].T + w["out.b"]
        cache = {"Xt": Xt, "a": a, "p": p, "z": z, "r": r, "n": n, "hs": hs}
        return np.ascontiguousarray(raw.transpose(1, 0, 2)), cache

    def backward_seq(self, draw: np.ndarray, cache, bptt_len: int | None = None) -> np.ndarray:
        """Gradient of ``sum(draw * raw)`` w.r.t. the parameters.  The hidden
        state gradient is cut every ``bptt_len`` steps."""
        w = self.weights()
        hs, z, r, n = cache["hs"], cache["z"], cache["r"], cache["n"]
        T, B, H = z.shape
        g = np.zeros(self.n_params)
        gv = {name: self.view(name, g) for name, _ in self.layout}
        dr_all = np.ascontiguousarray(draw.transpose(1, 0, 2))
        gv["out.W"] += _outer_sum(dr_all, hs[1:])
        gv["out.b"] += dr_all.sum((0, 1))
        dh_out = dr_all @ w["out.W"]
        dz_pre = np.empty((T, B, H))
        dr_pre = np.empty((T, B, H))
        dn_pre = np.empty((T, B, H))
        Uz, Ur, Un = w["gru.Uz"], w["gru.Ur"], w["gru.Un"]
        dh_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            if bptt_len and (t + 1) % bptt_len == 0 and t + 1 < T:
                dh_next = np.zeros_like(dh_next)
            hprev = hs[t]
            dh = dh_next + dh_out[t]
            zt, rt, nt = z[t], r[t], n[t]
            dn = dh * zt
            dhprev = dh * (1.0 - zt)
            dnp = dn * (1.0 - nt * nt)
            drh = dnp @ Un
            drp = drh * hprev * rt * (1.0 - rt)
            dzp = dh * (nt - hprev) * zt * (1.0 - zt)
            dhprev += drh * rt + dzp @ Uz + drp @ Ur
            dz_pre[t], dr_pre[t], dn_pre[t] = dzp, drp, dnp
            dh_next = dhprev
        hprev_all = hs[:-1]
        p = cache["p"]
        gv["gru.Uz"] += _outer_sum(dz_pre, hprev_all)
        gv["gru.Ur"] += _outer_sum(dr_pre, hprev_all)
        gv["gru.Un"] += _outer_sum(dn_pre, r * hprev_all)
        gv["gru.Wz"] += _outer_sum(dz_pre, p)
        gv["gru.Wr"] += _outer_sum(dr_pre, p)
        gv["gru.Wn"] += _outer_sum(dn_pre, p)
        gv["gru.bz"] += dz_pre.sum((0, 1))
        gv["gru.br"] += dr_pre.sum((0, 1))
        gv["gru.bn"] += dn_pre.sum((0, 1))
        dp = dz_pre @ w["gru.Wz"] + dr_pre @ w["gru.Wr"] + dn_pre @ w["gru.Wn"]
        da = dp * (cache["a"] > 0)
        gv["pre.W"] += _outer_sum(da, cache["Xt"])
        gv["pre.b"] += da.sum((0, 1))
        return g


def predict_step(net: PredictorNet, state: RecurrentState, obs, prev_action=None):
    """Advance one observer/victim predictor by one step."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (net.obs_dim,):
        raise DimensionMismatch(f"obs shape {obs.shape} != ({net.obs_dim},)")
    if state.hidden.shape != (net.hidden_size,):
        raise DimensionMismatch("recurrent state has the wrong size")
    x = obs
    if net.prev_action:
        pa = np.zeros(net.action_dim) if prev_action is None else np.asarray(prev_action, float)
        if pa.shape != (net.action_dim,):
            raise DimensionMismatch("prev_action has the wrong size")
        x = np.concatenate([obs, pa])
    h, raw = net.step(state.hidden[None, :], x[None, :])
    mu, L = net.head.params(raw)
    return RecurrentState(h[0]), GaussianParams(mu[0].copy(), LowerTriangular.from_dense(L[0]))


def nll(params: GaussianParams, action) -> float:
    """``2 * sum(log diag L) + ||L^{-1}(a - mu)||^2``: the Gaussian negative
    log-likelihood times two, without the ``d log(2 pi)`` constant."""
    action = np.asarray(action, dtype=float)
    if action.shape != params.mu.shape:
        raise DimensionMismatch(f"{action.shape} vs {params.mu.shape}")
    return (2.0 * float(np.log(params.chol.diagonal()).sum())
            + linalg.mahalanobis_sq(action, params.mu, params.chol))


# ---------------------------------------------------------------- training


def _stack(samples: Sequence[TrainingSample], net: PredictorNet):
    """Pad a list of episodes into (B, T, .) arrays plus per-step weights that
    average uniformly within each episode and then across episodes."""
    B = len(samples)
    T = max(len(s) for s in samples)
    X = np.zeros((B, T, net.in_dim))
    A = np.zeros((B, T, samples[0].actions.shape[1]))
    W = np.zeros((B, T))
    for b, s in enumerate(samples):
        n = len(s)
        X[b, :n] = net.build_inputs(s.obs, s.actions)
        A[b, :n] = s.actions
        W[b, :n] = 1.0 / (n * B)
    return X, A, W


def loss_and_grad(net: PredictorNet, samples: Sequence[TrainingSample],
                  bptt_len: int | None = None):
    """Mean per-step loss and its parameter gradient over a batch of episodes."""
    if not samples:
        raise ValueError("empty batch")
    X, A, W = _stack(samples, net)
    B, T, _ = X.shape
    raw, cache = net.forward_seq(X)
    loss, draw = net.head.loss_grad(raw.reshape(B * T, -1), A.reshape(B * T, -1))
    wflat = W.reshape(-1)
    total = float(wflat @ loss)
    draw = (draw * wflat[:, None]).reshape(raw.shape)
    grad = net.backward_seq(draw, cache, bptt_len)
    return total, grad


def grad_nll(net: PredictorNet, sample: TrainingSample, bptt_len: int | None = None) -> np.ndarray:
    if len(sample) == 0:
        raise ValueError("empty sample")
    return loss_and_grad(net, [sample], bptt_len)[1]


def mean_loss(net: PredictorNet, samples: Sequence[TrainingSample]) -> float:
    X, A, W = _stack(samples, net)
    B, T, _ = X.shape
    raw, _ = net.forward_seq(X)
    loss, _ = net.head.loss_grad(raw.reshape(B * T, -1), A.reshape(B * T, -1))
    return float(W.reshape(-1) @ loss)


def gradient_check(net: PredictorNet, sample: TrainingSample, eps: float = 1e-5,
                   analytic: np.ndarray | None = None) -> float:
    """Max over parameters of ``|analytic - numeric| / max(1, |numeric|)``."""
    if not 1e-8 < eps < 1e-3:
        raise ValueError("eps must lie in (1e-8, 1e-3)")
    if analytic is None:
        analytic = grad_nll(net, sample)
    theta = net.params
    worst = 0.0
    for k in range(net.n_params):
        plus = theta.copy()
        plus[k] += eps
        minus = theta.copy()
        minus[k] -= eps
        num = (mean_loss(net.copy(plus), [sample]) - mean_loss(net.copy(minus), [sample])) / (2 * eps)
        worst = max(worst, abs(analytic[k] - num) / max(1.0, abs(num)))
    return worst


def train(net: PredictorNet, data: Sequence[TrainingSample], cfg: TrainConfig, seed: int):
    """Momentum SGD on the mean per-step loss.  Returns a trained copy and the
    per-epoch mean training loss."""
    if not data:
        raise ValueError("no training data")
    rng = np.random.default_rng(seed)
    theta = net.params.copy()
    velocity = np.zeros_like(theta)
    work = net.copy()
    curve = []
    n = len(data)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = [data[k] for k in order[start:start + cfg.batch_size]]
            work.params = theta
            loss, grad = loss_and_grad(work, batch, cfg.bptt_len)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergenceDetected("non-finite loss; learning rate too high?")
            norm = float(np.linalg.norm(grad))
            if norm > cfg.clip_norm:
                grad = grad * (cfg.clip_norm / norm)
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            theta = theta + velocity
            epoch_loss += loss * len(batch)
            seen += len(batch)
        curve.append(epoch_loss / seen)
        if not np.isfinite(curve[-1]):
            raise DivergenceDetected("non-finite epoch loss")
    return net.copy(theta), curve
