"""Turning clean rollouts into trained predictor banks."""
from __future__ import annotations

import numpy as np

from . import env as envmod
from .attacks import derive_seed
from .baselines import Quantizer, make_discrete_net, score_moments
from .env import EnvConfig
from .predictor import GaussianHead, PredictorNet, TrainConfig, TrainingSample, train
from .rollout import PredictorBank, Rollout

HEADS = ("gaussian", "diagonal", "categorical")


def pair_samples(cfg: EnvConfig, ro: Rollout, observer: int, victim: int) -> list:
    perm = envmod.pair_view_index(cfg, observer, victim)
    obs = ro.obs[:, :, observer][:, :, perm]
    acts = ro.actions[:, :, victim]
    return [TrainingSample(o, a) for o, a in zip(obs, acts)]


def victim_samples(cfg: EnvConfig, ro: Rollout, victim: int) -> list:
    out = []
    for i in envmod.observers_of(cfg, victim):
        out.extend(pair_samples(cfg, ro, i, victim))
    return out


def new_net(cfg: EnvConfig, head: str, hidden: int, seed: int, prev_action=False,
            shared=False, levels: int = 3, diag_floor: float = 1e-3) -> PredictorNet:
    d = cfg.action_dim
    if head == "categorical":
        q = Quantizer.box(levels, d, cfg.action_low, cfg.action_high)
        return make_discrete_net(cfg.obs_dim, q, hidden, seed, prev_action, shared)
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}")
    return PredictorNet.initialized(
        cfg.obs_dim, d, hidden, seed,
        head=GaussianHead(d, diagonal=(head == "diagonal"), diag_floor=diag_floor),
        prev_action=prev_action, shared=shared)


def _train_one(args):
    cfg, key, samples, tcfg, seed, head, prev_action, shared, levels = args
    net = new_net(cfg, head, tcfg.hidden_size, derive_seed("init", seed, key),
                  prev_action, shared, levels, tcfg.diag_floor)
    trained, curve = train(net, samples, tcfg, derive_seed("train", seed, key))
    return key, trained, curve


def train_bank(cfg: EnvConfig, ro: Rollout, tcfg: TrainConfig, seed: int,
               head: str = "gaussian", shared: bool = False, prev_action: bool = False,
               levels: int = 3, validation: Rollout | None = None, workers: int = 1):
    """Train one predictor per pair (or per victim when ``shared``).  Returns
    the bank and the loss curve of each network."""
    jobs = []
    if shared:
        for j in range(cfg.num_agents):
            jobs.append((cfg, j, victim_samples(cfg, ro, j), tcfg, seed, head,
                         prev_action, True, levels))
    else:
        for i, j in envmod.pairs(cfg):
            jobs.append((cfg, (i, j), pair_samples(cfg, ro, i, j), tcfg, seed, head,
                         prev_action, False, levels))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(job) for job in jobs]
    nets = {key: net for key, net, _ in results}
    curves = {key: curve for key, _, curve in results}
    bank = PredictorBank(cfg, nets, shared)
    if head == "categorical":
        calib = validation if validation is not None else ro
        for key, net in nets.items():
            if shared:
                samples = victim_samples(cfg, calib, key)
            else:
                samples = pair_samples(cfg, calib, *key)
            bank.moments[key] = score_moments(net, samples)
    return bank, curves
