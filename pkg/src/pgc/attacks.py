"""Adversarial action policies for one or more victim agents.

Kinds:

``rand``  uniform action in the victim's box.
``grad``  ``Proj(a - eps * sign(dQ/da))`` on the victim's own action, where
          ``Q`` is a one-step lookahead of the team reward.
``act``   linear policy ``clip(W o + b)`` on the victim's observation, trained
          by the cross-entropy method to minimise the team reward.
``dyn``   as ``act``, but the objective also charges ``lam * |z - m_z|`` for
          every observer of the victim, trading impact for stealth.
``null``  leaves the action untouched (useful as a calibration control).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import env as envmod
from .env import EnvConfig

KINDS = ("rand", "grad", "act", "dyn", "null")
TRAINABLE = ("act", "dyn")
NEVER = None  # t0 sentinel: no attack ever starts


class UnknownKind(ValueError):
    pass


class BudgetExhausted(RuntimeWarning):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    victims: tuple = (0,)
    t0: Optional[int] = 0
    epsilon: float = 0.2
    lam: float = 0.0
    policy_params: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown attack kind {self.kind!r}")
        victims = tuple(int(v) for v in self.victims)
        if not victims:
            raise ValueError("at least one victim is required")
        object.__setattr__(self, "victims", victims)
        if self.t0 is not None and self.t0 < 0:
            raise ValueError("t0 must be nonnegative")
        if self.epsilon < 0 or self.lam < 0:
            raise ValueError("epsilon and lam must be nonnegative")
        if self.policy_params is not None:
            object.__setattr__(self, "policy_params",
                               tuple(float(v) for v in self.policy_params))

    def validate(self, cfg: EnvConfig) -> "AttackSpec":
        if any(not 0 <= v < cfg.num_agents for v in self.victims):
            raise ValueError("victim id outside the agent set")
        if self.epsilon > 0.5 * (cfg.action_high - cfg.action_low):
            raise ValueError("epsilon exceeds half the action-box width")
        if self.kind in TRAINABLE and self.policy_params is None:
            raise ValueError(f"{self.kind} attack needs trained policy parameters")
        return self

    def active(self, t: int) -> bool:
        return self.t0 is not None and t >= self.t0

    def with_(self, **changes) -> "AttackSpec":
        return replace(self, **changes)


@dataclass
class CemConfig:
    population: int = 40
    elite_frac: float = 0.2
    iterations: int = 15
    episodes: int = 6
    init_std: float = 1.0
    min_std: float = 0.05

    def __post_init__(self):
        if not 0 < self.elite_frac < 1:
            raise ValueError("elite_frac must lie in (0, 1)")
        if min(self.population, self.iterations, self.episodes) < 1:
            raise ValueError("counts must be positive")
        if int(self.population * self.elite_frac) < 1:
            raise ValueError("population too small for the elite fraction")


# ---------------------------------------------------------------- primitives


def linear_policy_size(cfg: EnvConfig) -> int:
    return cfg.action_dim * cfg.obs_dim + cfg.action_dim


def linear_policy(cfg: EnvConfig, params: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """``clip(W o + b)``; ``params`` is (n,) or batched (B, n) matching obs (B, obs_dim)."""
    d, n = cfg.action_dim, cfg.obs_dim
    params = np.asarray(params, dtype=float)
    W = params[..., :d * n].reshape(params.shape[:-1] + (d, n))
    b = params[..., d * n:]
    return envmod.clip_action(cfg, np.einsum("...kn,...n->...k", W, obs) + b)


def rand_attack(low, high, rng=None, u=None) -> np.ndarray:
    """Uniform draw on the box; ``u`` optionally supplies pre-drawn U(0,1)."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    if u is None:
        u = rng.random(np.broadcast_shapes(low.shape, high.shape))
    return low + (high - low) * u


def q_surrogate(cfg: EnvConfig, positions: np.ndarray, goal: np.ndarray, victim: int,
                action: np.ndarray) -> np.ndarray:
    """Team reward one step ahead if the victim plays ``action`` and everybody
    else plays their noise-free scripted action.  Higher is better for the
    team.  Works on single states (K, d) or batches (B, K, d)."""
    obs = envmod.observe(cfg, positions, goal)
    joint = envmod.clip_action(cfg, envmod.scripted_mean(cfg, obs))
    joint[..., victim, :] = action
    nxt = envmod.transition(cfg, positions, joint)
    return -envmod.team_cost(cfg, nxt, goal)


def surrogate_gradient(cfg, positions, goal, victim, action, h: float = 1e-4) -> np.ndarray:
    action = np.asarray(action, dtype=float)
    grad = np.empty_like(action)
    for k in range(cfg.action_dim):
        plus, minus = action.copy(), action.copy()
        plus[..., k] += h
        minus[..., k] -= h
        grad[..., k] = (q_surrogate(cfg, positions, goal, victim, plus)
                        - q_surrogate(cfg, positions, goal, victim, minus)) / (2 * h)
    return grad


def grad_attack(a, grad_q, epsilon: float, low: float, high: float) -> np.ndarray:
    """Signed step against the value gradient, projected onto the box."""
    return np.clip(np.asarray(a, float) - epsilon * np.sign(grad_q), low, high)


def adversarial_actions(spec: AttackSpec, cfg: EnvConfig, t: int, obs: np.ndarray,
                        actions: np.ndarray, positions: np.ndarray, goal: np.ndarray,
                        uniforms: np.ndarray, policy_batch: np.ndarray | None = None) -> np.ndarray:
    """Batched attack application.  ``obs`` (B, K, n), ``actions`` (B, K, d),
    ``uniforms`` (B, K, d).  Returns the executed joint actions."""
    if not spec.active(t) or spec.kind == "null":
        return actions
    out = actions.copy()
    for v in spec.victims:
        if spec.kind == "rand":
            out[:, v] = rand_attack(cfg.action_low, cfg.action_high, u=uniforms[:, v])
        elif spec.kind == "grad":
            g = surrogate_gradient(cfg, positions, goal, v, actions[:, v])
            out[:, v] = grad_attack(actions[:, v], g, spec.epsilon, cfg.action_low, cfg.action_high)
        elif spec.kind in TRAINABLE:
            params = policy_batch if policy_batch is not None else np.asarray(spec.policy_params)
            out[:, v] = linear_policy(cfg, params, obs[:, v])
        else:
            raise UnknownKind(spec.kind)
    return out


def apply_attack(spec: AttackSpec, t: int, victim_obs, normal_action, context: dict) -> np.ndarray:
    """Single-victim, single-step form.  ``context`` carries ``cfg`` and,
    depending on the kind, ``rng`` or ``u`` (rand), ``positions``/``goal``/
    ``victim`` (grad)."""
    if spec.kind not in KINDS:
        raise UnknownKind(spec.kind)
    normal_action = np.asarray(normal_action, dtype=float)
    if not spec.active(t) or spec.kind == "null":
        return normal_action
    cfg = context["cfg"]
    if spec.kind == "rand":
        low = np.full(cfg.action_dim, cfg.action_low)
        high = np.full(cfg.action_dim, cfg.action_high)
        return rand_attack(low, high, rng=context.get("rng"), u=context.get("u"))
    if spec.kind == "grad":
        g = surrogate_gradient(cfg, context["positions"], context["goal"], context["victim"],
                               normal_action)
        return grad_attack(normal_action, g, spec.epsilon, cfg.action_low, cfg.action_high)
    return linear_policy(cfg, np.asarray(spec.policy_params), np.asarray(victim_obs, float))


# ---------------------------------------------------------------- training


def derive_seed(*parts) -> int:
    blob = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "little")


def adversarial_objective(rollout, spec: AttackSpec, cfg: EnvConfig) -> np.ndarray:
    """Per-episode quantity the adversary minimises:
    ``sum_t gamma^t (R_t + lam * sum_i |z^{iv}_t - m_z|)`` over attacked steps."""
    T = rollout.rewards.shape[1]
    start = 0 if spec.t0 is None else spec.t0
    disc = cfg.discount ** np.arange(T)
    per_step = rollout.rewards.copy()
    if spec.lam > 0:
        m_z = -cfg.action_dim / 2.0
        for v in spec.victims:
            dev = np.abs(rollout.z[:, :, v, :] - m_z)
            per_step += spec.lam * np.nansum(dev, axis=-1)
    return (per_step * disc)[:, start:].sum(1)


def cem_train(cfg: EnvConfig, kind: str, lam: float, cem: CemConfig, seed: int,
              bank=None, victims: Sequence[int] = (0,), t0: int = 0, log=None):
    """Cross-entropy search over linear victim policies.

    Candidates are scored on a fixed set of evaluation episodes (common random
    numbers), and the previous elites are re-entered into every population, so
    the elite mean objective can only go down from one iteration to the next.
    Returns (best parameters, per-iteration elite mean objective).
    """
    from .rollout import simulate

    if kind not in TRAINABLE:
        raise UnknownKind(f"{kind!r} is not a trainable attack")
    if kind == "dyn" and bank is None:
        raise ValueError("dyn attack training needs trained detectors")
    n = linear_policy_size(cfg)
    rng = np.random.default_rng(derive_seed("cem", seed))
    ep_seeds = [derive_seed("cem-episode", seed, e) for e in range(cem.episodes)]
    spec = AttackSpec(kind, tuple(victims), t0, lam=lam if kind == "dyn" else 0.0,
                      policy_params=tuple(np.zeros(n)))
    n_elite = int(cem.population * cem.elite_frac)
    mean = np.zeros(n)
    std = np.full(n, cem.init_std)
    elites = np.zeros((0, n))
    elite_scores = np.zeros(0)
    history = []
    for it in range(cem.iterations):
        fresh = mean + std * rng.standard_normal((cem.population - len(elites), n))
        cand = np.vstack([elites, fresh])
        scores = evaluate_candidates(cfg, spec, cand, ep_seeds, bank, simulate)
        order = np.argsort(scores, kind="stable")[:n_elite]
        elites, elite_scores = cand[order], scores[order]
        mean = elites.mean(0)
        std = np.maximum(elites.std(0), cem.min_std)
        history.append(float(elite_scores.mean()))
        if log is not None:
            log(it, history[-1], float(elite_scores[0]))
    return elites[0].copy(), history


def evaluate_candidates(cfg, spec, cand, ep_seeds, bank, simulate=None) -> np.ndarray:
    """Mean adversarial objective of each candidate parameter vector."""
    if simulate is None:
        from .rollout import simulate
    P, E = len(cand), len(ep_seeds)
    seeds = np.tile(np.asarray(ep_seeds), P)
    batch = np.repeat(cand, E, axis=0)
    use_bank = bank if spec.lam > 0 else None
    ro = simulate(cfg, seeds, spec, use_bank, policy_batch=batch)
    obj = adversarial_objective(ro, spec, cfg)
    return obj.reshape(P, E).mean(1)
