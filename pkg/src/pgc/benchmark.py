"""The full detection benchmark: collect clean data, train predictors, train
the learned attacks, evaluate every condition and summarize.

Episode seeds are fixed blocks offset by the run seed, so every condition of a
run sees the same attacked episodes (common random numbers across attacks)::

    training     base + [0, n)
    validation   base + 50_000 + [0, n)
    clean        base + 100_000 + [0, n)
    attacked     base + 200_000 + [0, n)

with ``base = 10_000_000 * seed``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .attacks import TRAINABLE, AttackSpec, cem_train, derive_seed
from .config import RunConfig
from .detector import DetectorConfig
from .evaluation import (ConditionResult, condition_roc, detection_times, episode_statistics,
                         impact_table, roc, run_condition, ttd_curve)
from .experiment import train_bank
from .rollout import PredictorBank, simulate_chunked

OFFSETS = {"train": 0, "validation": 50_000, "clean": 100_000, "attacked": 200_000}


def episode_seeds(seed: int, purpose: str, n: int) -> np.ndarray:
    return 10_000_000 * int(seed) + OFFSETS[purpose] + np.arange(n, dtype=np.int64)


def condition_name(spec: AttackSpec) -> str:
    name = spec.kind
    if spec.kind == "dyn":
        name += f"_lam{spec.lam:g}"
    if len(spec.victims) > 1 or spec.victims != (0,):
        name += "_v" + "-".join(str(v) for v in spec.victims)
    if spec.t0 not in (0,):
        name += f"_t{spec.t0}"
    return name


def collect(run: RunConfig, purpose: str = "train", n: int | None = None, workers: int = 1):
    if n is None:
        n = {"train": run.predictor.train_episodes,
             "validation": run.predictor.validation_episodes,
             "clean": run.evaluation.clean_episodes,
             "attacked": run.evaluation.attack_episodes}[purpose]
    return simulate_chunked(run.env, episode_seeds(run.seed, purpose, n),
                            chunk=run.evaluation.chunk, workers=workers)


def build_bank(run: RunConfig, train_ro=None, workers: int = 1, head: str | None = None,
               shared: bool | None = None):
    p = run.predictor
    head = p.head if head is None else head
    shared = p.shared if shared is None else shared
    if train_ro is None:
        train_ro = collect(run, "train", workers=workers)
    val = collect(run, "validation", workers=workers) if head == "categorical" else None
    return train_bank(run.env, train_ro, run.train, run.seed, head=head, shared=shared,
                      prev_action=p.prev_action, levels=p.levels, validation=val,
                      workers=workers)


def train_attack(run: RunConfig, spec: AttackSpec, bank: PredictorBank | None = None,
                 log=None) -> tuple:
    """CEM-train a learned attack; returns (spec with parameters, elite history)."""
    seed = derive_seed("attack", run.seed, spec.kind, spec.lam, *spec.victims)
    params, history = cem_train(run.env, spec.kind, spec.lam, run.cem, seed,
                                bank=bank, victims=spec.victims,
                                t0=0 if spec.t0 is None else spec.t0, log=log)
    return spec.with_(policy_params=tuple(params)), history


@dataclass
class BenchmarkResult:
    run: RunConfig
    bank: PredictorBank
    clean: ConditionResult
    conditions: dict                         # name -> ConditionResult
    attacks: dict                            # name -> AttackSpec (with trained params)
    histories: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    ttd: dict = field(default_factory=dict)
    impact: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)    # wall-clock seconds per stage

    @property
    def auc(self) -> dict:
        return {k: c.auc for k, c in self.curves.items()}

    def summary_arrays(self) -> dict:
        """Per-episode numbers that fully determine the report."""
        out = {"clean_reward": self.clean.total_reward}
        for name, cond in self.conditions.items():
            out[name + "_reward"] = cond.total_reward
            out[name + "_stat"] = episode_statistics(cond)
            out[name + "_clean_stat"] = episode_statistics(self.clean, cond.attack.victims)
        return out


def evaluate(run: RunConfig, bank: PredictorBank, attacks, workers: int = 1,
             det: DetectorConfig | None = None) -> BenchmarkResult:
    det = run.detector if det is None else det
    ev = run.evaluation
    clean = run_condition(run.env, bank, det, None, episode_seeds(run.seed, "clean",
                          ev.clean_episodes), "none", ev.chunk, workers)
    att_seeds = episode_seeds(run.seed, "attacked", ev.attack_episodes)
    res = BenchmarkResult(run, bank, clean, {}, {})
    betas = ev.betas()
    for spec in attacks:
        name = condition_name(spec)
        cond = run_condition(run.env, bank, det, spec, att_seeds, name, ev.chunk, workers)
        res.conditions[name] = cond
        res.attacks[name] = spec
        res.curves[name] = condition_roc(clean, cond, betas)
        res.ttd[name] = ttd_curve(clean, cond, betas)
    res.impact = impact_table([clean, *res.conditions.values()])
    return res


def run_benchmark(run: RunConfig, workers: int = 1, log=None) -> BenchmarkResult:
    """Everything end to end from the config alone."""
    clock = time.perf_counter
    t = clock()
    bank, _ = build_bank(run, workers=workers)
    timings = {"predictors": clock() - t}
    t = clock()
    trained, histories = [], {}
    for spec in run.attacks:
        if spec.kind in TRAINABLE and spec.policy_params is None:
            spec, hist = train_attack(run, spec, bank if spec.kind == "dyn" else None, log)
            histories[condition_name(spec)] = hist
        trained.append(spec)
    timings["attacks"] = clock() - t
    t = clock()
    res = evaluate(run, bank, trained, workers)
    timings["evaluation"] = clock() - t
    res.histories = histories
    res.timings = timings
    return res
