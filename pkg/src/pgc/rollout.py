"""Batched episode simulation with per-pair action scoring.

Every episode draws its randomness from its own seed (see
``env.draw_episode``), so a batch of episodes produces exactly the same
numbers as running them one at a time in the same chunk layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import env as envmod
from . import linalg
from .attacks import AttackSpec, adversarial_actions
from .baselines import CategoricalHead, categorical_scores
from .env import EnvConfig
from .predictor import PredictorNet


class MissingPredictor(KeyError):
    pass


@dataclass
class PredictorBank:
    """Trained predictors covering every observer/neighbour pair.

    ``nets`` is keyed by ``(observer, victim)``, or by ``victim`` alone when
    one network per victim is shared by all of its observers.  For
    categorical heads ``moments`` holds the clean-data score mean/std per key.
    """

    cfg: EnvConfig
    nets: dict
    shared: bool = False
    moments: dict = field(default_factory=dict)

    def key(self, observer: int, victim: int):
        return victim if self.shared else (observer, victim)

    def net_for(self, observer: int, victim: int) -> PredictorNet:
        try:
            return self.nets[self.key(observer, victim)]
        except KeyError:
            raise MissingPredictor(f"no predictor for pair ({observer}, {victim})") from None

    @property
    def head_kind(self) -> str:
        return next(iter(self.nets.values())).head.name

    def check(self):
        for i, j in envmod.pairs(self.cfg):
            self.net_for(i, j)
        return self

    def groups(self):
        """[(key, net, [(observer, victim), ...])] in deterministic order."""
        out = {}
        for i, j in envmod.pairs(self.cfg):
            out.setdefault(self.key(i, j), []).append((i, j))
        return [(k, self.nets[k], members) for k, members in sorted(out.items())]


@dataclass
class Rollout:
    seeds: np.ndarray
    positions: np.ndarray          # (B, T+1, K, d)
    goal: np.ndarray               # (B, d)
    obs: np.ndarray                # (B, T, K, n)
    actions: np.ndarray            # (B, T, K, d) executed
    rewards: np.ndarray            # (B, T)
    attack_active: np.ndarray      # (B, T, K) bool
    z: Optional[np.ndarray] = None  # (B, T, K_victim, K_observer), NaN where unobserved
    mu: Optional[np.ndarray] = None     # (B, T, Kv, Ko, d) gaussian heads only
    chol: Optional[np.ndarray] = None   # (B, T, Kv, Ko, d, d)

    @property
    def total_reward(self) -> np.ndarray:
        return self.rewards.sum(1)


def simulate(cfg: EnvConfig, seeds, attack: AttackSpec | None = None,
             bank: PredictorBank | None = None, policy_batch: np.ndarray | None = None,
             keep_params: bool = False) -> Rollout:
    """Run ``len(seeds)`` episodes side by side."""
    cfg.validate()
    if attack is not None:
        if attack.kind in ("act", "dyn") and policy_batch is None:
            attack.validate(cfg)
        elif attack.kind not in ("act", "dyn"):
            attack.validate(cfg)
    if bank is not None:
        bank.check()
    seeds = np.asarray(seeds, dtype=np.int64)
    B, K, d, T = len(seeds), cfg.num_agents, cfg.action_dim, cfg.horizon
    draws = [envmod.draw_episode(cfg, int(s)) for s in seeds]
    pos = np.stack([x[0] for x in draws])
    goal = np.stack([x[1] for x in draws])
    normals = np.stack([x[2] for x in draws])
    uniforms = np.stack([x[3] for x in draws])
    F = cfg.noise_factor()

    positions = np.empty((B, T + 1, K, d))
    positions[:, 0] = pos
    obs_all = np.empty((B, T, K, cfg.obs_dim))
    act_all = np.empty((B, T, K, d))
    rewards = np.empty((B, T))
    active = np.zeros((B, T, K), dtype=bool)

    scoring = _Scorer(cfg, bank, B, T, keep_params) if bank is not None else None
    for t in range(T):
        obs = envmod.observe(cfg, pos, goal)
        normal = envmod.clip_action(cfg, envmod.scripted_mean(cfg, obs) + normals[:, t] @ F.T)
        actions = normal
        if attack is not None:
            actions = adversarial_actions(attack, cfg, t, obs, normal, pos, goal,
                                          uniforms[:, t], policy_batch)
            if attack.active(t) and attack.kind != "null":
                active[:, t, list(attack.victims)] = True
        if scoring is not None:
            scoring.step(t, obs, actions)
        obs_all[:, t] = obs
        act_all[:, t] = actions
        pos = envmod.transition(cfg, pos, actions)
        positions[:, t + 1] = pos
        rewards[:, t] = -envmod.team_cost(cfg, pos, goal)

    ro = Rollout(seeds, positions, goal, obs_all, act_all, rewards, active)
    if scoring is not None:
        ro.z = scoring.z
        ro.mu, ro.chol = scoring.mu, scoring.chol
    return ro


class _Scorer:
    """Steps every predictor in the bank and scores executed actions."""

    def __init__(self, cfg, bank: PredictorBank, B, T, keep_params):
        self.cfg = cfg
        self.bank = bank
        K, d = cfg.num_agents, cfg.action_dim
        self.z = np.full((B, T, K, K), np.nan)
        self.keep = keep_params and bank.head_kind != "categorical"
        self.mu = np.full((B, T, K, K, d), np.nan) if self.keep else None
        self.chol = np.full((B, T, K, K, d, d), np.nan) if self.keep else None
        self.groups = []
        for key, net, members in bank.groups():
            perms = [envmod.pair_view_index(cfg, i, j) for i, j in members]
            h = np.zeros((B * len(members), net.hidden_size))
            self.groups.append([net, members, perms, h])
        self.prev = np.zeros((B, K, d))
        self.B = B

    def step(self, t, obs, actions):
        B = self.B
        for group in self.groups:
            net, members, perms, h = group
            xs = [obs[:, i][:, perm] for (i, j), perm in zip(members, perms)]
            if net.prev_action:
                xs = [np.concatenate([x, self.prev[:, j]], axis=-1)
                      for x, (i, j) in zip(xs, members)]
            h, raw = net.step(h, np.concatenate(xs, axis=0))
            group[3] = h
            targets = np.concatenate([actions[:, j] for i, j in members], axis=0)
            if isinstance(net.head, CategoricalHead):
                bins = net.head.quantizer.quantize(targets)
                z = categorical_scores(raw, bins)
            else:
                mu, L = net.head.params(raw)
                z = -0.5 * linalg.mahalanobis_sq_batch(targets, mu, L)
            for m, (i, j) in enumerate(members):
                sl = slice(m * B, (m + 1) * B)
                self.z[:, t, j, i] = z[sl]
                if self.keep:
                    self.mu[:, t, j, i] = mu[sl]
                    self.chol[:, t, j, i] = L[sl]
        self.prev = actions


def simulate_chunked(cfg: EnvConfig, seeds, attack=None, bank=None, chunk: int = 250,
                     workers: int = 1) -> Rollout:
    """``simulate`` over fixed-size chunks of seeds.  The chunk layout, not the
    worker count, determines the arithmetic, so results are identical for any
    ``workers``."""
    seeds = np.asarray(seeds, dtype=np.int64)
    parts = [seeds[k:k + chunk] for k in range(0, len(seeds), chunk)]
    if workers > 1 and len(parts) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_part, [(cfg, p, attack, bank) for p in parts]))
    else:
        results = [simulate(cfg, p, attack, bank) for p in parts]
    return concat_rollouts(results)


def _simulate_part(args):
    cfg, part, attack, bank = args
    return simulate(cfg, part, attack, bank)


def concat_rollouts(parts) -> Rollout:
    if len(parts) == 1:
        return parts[0]

    def cat(name):
        vals = [getattr(p, name) for p in parts]
        return None if vals[0] is None else np.concatenate(vals, axis=0)

    return Rollout(*(cat(n) for n in ("seeds", "positions", "goal", "obs", "actions",
                                      "rewards", "attack_active", "z", "mu", "chol")))
