"""Episode orchestration and detection metrics (ROC/AUC, time to detection,
attack impact).

Labeling is per episode: an attacked episode is a true positive if the team
decision on the monitored victim(s) fires at any step; a clean episode is a
false positive if the same decision fires.  The decision statistic of a pair
at step ``t`` is ``max(c+, c-)`` (CUSUM) or the window metric, and because
alarms latch, "fires at threshold beta" is equivalent to "the running maximum
of the statistic exceeds beta".  Storing per-step statistics therefore gives
the whole ROC curve without re-running episodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attacks import AttackSpec
from .detector import DetectorConfig, first_crossing, window_metric_trace
from .env import EnvConfig
from .rollout import PredictorBank, simulate_chunked


class EmptySet(ValueError):
    pass


class NoTruePositives(ValueError):
    pass


def log_beta_grid(n: int = 50, lo: float = 0.1, hi: float = 100.0) -> np.ndarray:
    return np.geomspace(lo, hi, n)


@dataclass
class EpisodeResult:
    attacked: bool
    t0: Optional[int]
    detection_time: Optional[int]
    observer_alarms: dict
    total_reward: float
    seed: int


@dataclass
class ConditionResult:
    """All episodes of one evaluation condition (clean, or one attack)."""

    name: str
    attack: Optional[AttackSpec]
    seeds: np.ndarray
    total_reward: np.ndarray       # (N,)
    z: np.ndarray                  # (N, T, K_victim, K_observer), NaN if unobserved
    ref_mean: np.ndarray           # (K, K) reference score mean per pair
    ref_std: np.ndarray            # (K, K)
    det: DetectorConfig
    _cusum_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def attacked(self) -> bool:
        return self.attack is not None and self.attack.kind != "none"

    @property
    def t0(self):
        return None if self.attack is None else self.attack.t0

    def cusum(self):
        """c+ and c- traces (N, T, K, K), cached per drift value."""
        w = self.det.w
        if w not in self._cusum_cache:
            self._cusum_cache[w] = self._cusum(w)
        return self._cusum_cache[w]

    def _cusum(self, w):
        z_std = (self.z - self.ref_mean) / self.ref_std
        N, T = z_std.shape[:2]
        cp = np.empty_like(z_std)
        cm = np.empty_like(z_std)
        a = np.zeros(z_std.shape[:1] + z_std.shape[2:])
        b = np.zeros_like(a)
        for t in range(T):
            a = np.maximum(0.0, a + z_std[:, t] - w)
            b = np.maximum(0.0, b - z_std[:, t] - w)
            cp[:, t], cm[:, t] = a, b
        return cp, cm

    def stat_trace(self) -> np.ndarray:
        """Per-step decision statistic (N, T, K, K); -inf for unobserved pairs."""
        if self.det.mode == "cusum":
            cp, cm = self.cusum()
            stat = np.maximum(cp, cm)
        else:
            zt = np.moveaxis(self.z, 1, 0)
            stat = np.moveaxis(
                window_metric_trace(zt, self.det.window_len, self.ref_mean, self.ref_std), 0, 1)
        return np.where(np.isnan(self.z), -np.inf, stat)

    def episode(self, k: int, victims: Sequence[int] | None = None) -> EpisodeResult:
        """Concrete decisions for episode ``k`` at the configured thresholds."""
        victims = _victims(self, victims)
        alarms = {}
        if self.det.mode == "cusum":
            cp, cm = self.cusum()
            hit = (cp[k] > self.det.beta_plus) | (cm[k] > self.det.beta_minus)
        else:
            hit = self.stat_trace()[k] > self.det.beta_plus
        hit &= ~np.isnan(self.z[k])
        team = []
        for v in victims:
            per = {}
            for i in range(hit.shape[2]):
                if np.isnan(self.z[k, 0, v, i]):
                    continue
                col = hit[:, v, i]
                per[i] = int(np.argmax(col)) if col.any() else None
            alarms[v] = per
            times = sorted(t for t in per.values() if t is not None)
            team.append(times[self.det.u - 1] if len(times) >= self.det.u else None)
        det_time = None if any(t is None for t in team) else max(team)
        return EpisodeResult(self.attacked, self.t0, det_time, alarms,
                             float(self.total_reward[k]), int(self.seeds[k]))


def _victims(cond: ConditionResult, victims):
    if victims is not None:
        return tuple(victims)
    if cond.attack is None:
        raise ValueError("clean condition: pass the monitored victims explicitly")
    return cond.attack.victims


def reference_moments(cfg: EnvConfig, bank: PredictorBank):
    K = cfg.num_agents
    if bank.head_kind == "categorical":
        mean = np.zeros((K, K))
        std = np.ones((K, K))
        for (i, j) in [(i, j) for i in range(K) for j in range(K) if i != j]:
            try:
                key = bank.key(i, j)
            except KeyError:
                continue
            if key in bank.moments:
                mean[j, i], std[j, i] = bank.moments[key]
        return mean, std
    d = cfg.action_dim
    return np.full((K, K), -d / 2.0), np.full((K, K), math.sqrt(d / 2.0))


def run_condition(cfg: EnvConfig, bank: PredictorBank, det: DetectorConfig,
                  attack: AttackSpec | None, seeds, name: str | None = None,
                  chunk: int = 250, workers: int = 1) -> ConditionResult:
    if det.mode == "cusum" and bank.head_kind == "categorical":
        raise ValueError("categorical scores have no analytic moments; use window mode")
    ro = simulate_chunked(cfg, seeds, attack, bank, chunk=chunk, workers=workers)
    mean, std = reference_moments(cfg, bank)
    return ConditionResult(name or (attack.kind if attack else "none"), attack,
                           np.asarray(seeds), ro.total_reward, ro.z, mean, std, det)


def run_episode(cfg, bank, det, attack, episode_seed) -> EpisodeResult:
    cond = run_condition(cfg, bank, det, attack, [episode_seed])
    victims = attack.victims if attack is not None else tuple(range(cfg.num_agents))
    return cond.episode(0, victims)


# ---------------------------------------------------------------- statistics


def episode_statistics(cond: ConditionResult, victims: Sequence[int] | None = None,
                       u: int | None = None) -> np.ndarray:
    """Per-episode team statistic: the team flags every monitored victim iff
    this value exceeds beta."""
    victims = _victims(cond, victims)
    u = cond.det.u if u is None else u
    peak = cond.stat_trace().max(axis=1)            # (N, K_v, K_o)
    per_victim = []
    for v in victims:
        obs = np.sort(peak[:, v, :], axis=1)[:, ::-1]
        if u > np.isfinite(obs[0]).sum():
            raise ValueError(f"quorum {u} exceeds the number of observers of {v}")
        per_victim.append(obs[:, u - 1])
    return np.min(np.stack(per_victim), axis=0)


def detection_times(cond: ConditionResult, beta: float, victims=None, u=None) -> np.ndarray:
    """Team detection step per episode at a joint threshold, -1 if never."""
    victims = _victims(cond, victims)
    u = cond.det.u if u is None else u
    stat = cond.stat_trace()
    out = np.full(len(stat), -1)
    T = stat.shape[1]
    team = []
    for v in victims:
        first = first_crossing(np.moveaxis(stat[:, :, v, :], 1, 0), beta)  # (N, K_o)
        first = np.where(first < 0, T + 1, first)
        first = np.sort(first, axis=1)[:, u - 1]
        team.append(first)
    t = np.max(np.stack(team), axis=0)
    out[t <= T] = t[t <= T]
    return out


@dataclass
class RocCurve:
    points: list            # [(beta, fpr, tpr)], beta ascending
    auc: float

    def fpr(self):
        return np.array([p[1] for p in self.points])

    def tpr(self):
        return np.array([p[2] for p in self.points])


def roc(clean_stats, attacked_stats, betas=None) -> RocCurve:
    """ROC over a threshold grid.  The AUC integrates the exact empirical
    curve (every observed statistic used as a threshold, trapezoidal rule),
    so it does not depend on the grid resolution."""
    clean = np.asarray(clean_stats, dtype=float)
    att = np.asarray(attacked_stats, dtype=float)
    if clean.size == 0 or att.size == 0:
        raise EmptySet("both clean and attacked sets must be nonempty")
    betas = log_beta_grid() if betas is None else np.sort(np.asarray(betas, float))
    points = [(float(b), float((clean > b).mean()), float((att > b).mean())) for b in betas]
    return RocCurve(points, auc_exact(clean, att))


def auc_exact(clean, att) -> float:
    thr = np.unique(np.concatenate([clean, att]))
    fpr = np.concatenate([[1.0], [(clean > b).mean() for b in thr]])
    tpr = np.concatenate([[1.0], [(att > b).mean() for b in thr]])
    order = np.lexsort((tpr, fpr))
    fpr, tpr = fpr[order], tpr[order]
    fpr = np.concatenate([[0.0], fpr])
    tpr = np.concatenate([[0.0], tpr])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_pairwise(clean, att) -> float:
    """Brute-force AUC: fraction of (clean, attacked) pairs ordered correctly,
    ties counting one half."""
    clean = np.asarray(clean, float)[:, None]
    att = np.asarray(att, float)[None, :]
    return float(((att > clean) + 0.5 * (att == clean)).mean())


def condition_roc(clean: ConditionResult, attacked: ConditionResult, betas=None,
                  victims=None, u=None) -> RocCurve:
    victims = _victims(attacked, victims)
    return roc(episode_statistics(clean, victims, u),
               episode_statistics(attacked, victims, u), betas)


def time_to_detection(cond: ConditionResult, beta: float, victims=None, u=None) -> float:
    """Mean steps from attack onset to team detection, over detected episodes."""
    t = detection_times(cond, beta, victims, u)
    hit = t >= 0
    if not hit.any():
        raise NoTruePositives(f"no detections at beta={beta}")
    t0 = cond.t0 or 0
    return float((t[hit] - t0).mean())


def ttd_curve(clean: ConditionResult, attacked: ConditionResult, betas=None,
              victims=None, u=None) -> list:
    """[(beta, fpr, ttd or None)] for plotting time to detection against FPR."""
    victims = _victims(attacked, victims)
    betas = log_beta_grid() if betas is None else betas
    cstat = episode_statistics(clean, victims, u)
    rows = []
    for b in betas:
        try:
            ttd = time_to_detection(attacked, b, victims, u)
        except NoTruePositives:
            ttd = None
        rows.append((float(b), float((cstat > b).mean()), ttd))
    return rows


def impact_table(conditions) -> dict:
    """Mean and standard error of total team reward per condition."""
    out = {}
    for cond in conditions:
        r = np.asarray(cond.total_reward, float)
        se = float(r.std(ddof=1) / math.sqrt(len(r))) if len(r) > 1 else float("nan")
        out[cond.name] = {"mean": float(r.mean()), "se": se, "n": int(len(r))}
    return out


TRACE_COLUMNS = ("t", "observer", "victim", "z", "z_std", "c_plus", "c_minus", "alarmed_side")


def score_trace_rows(cond: ConditionResult, k: int) -> list:
    """One row per (t, observer, victim) of episode ``k`` in CUSUM mode.
    ``alarmed_side`` is the latched side at the configured thresholds, empty
    before the first alarm of that pair."""
    cp, cm = cond.cusum()
    z = cond.z[k]
    z_std = (z - cond.ref_mean) / cond.ref_std
    T, K = z.shape[0], z.shape[1]
    latched = {}
    rows = []
    for t in range(T):
        for j in range(K):
            for i in range(K):
                if np.isnan(z[t, j, i]):
                    continue
                if (i, j) not in latched:
                    if cp[k, t, j, i] > cond.det.beta_plus:
                        latched[i, j] = "plus"
                    elif cm[k, t, j, i] > cond.det.beta_minus:
                        latched[i, j] = "minus"
                rows.append((t, i, j, float(z[t, j, i]), float(z_std[t, j, i]),
                             float(cp[k, t, j, i]), float(cm[k, t, j, i]),
                             latched.get((i, j), "")))
    return rows


def export_score_trace(path, cond: ConditionResult, k: int):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(score_trace_rows(cond, k))
