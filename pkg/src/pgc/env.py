"""Synthetic cooperative environments with continuous actions.

Two kinds of team task are provided:

``formation2d``
    K agents in the plane move towards a shared goal while staying together.
    Action ``a_i`` in a box, dynamics ``p_i' = p_i + step_size * a_i``.
``line1d``
    the same task on a line (one-dimensional actions).

Agents follow scripted stochastic policies whose action distribution is known
in closed form, ``N(gain * (g - p_i) + cohesion_i, noise_cov)`` before clipping,
which is what makes predictor calibration testable.

Observation layout of agent ``i`` (length ``d * (2 + n_neighbours)``)::

    [ p_i | p_j - p_i for j in neighbours(i), ascending id | g - p_i ]

All functions accept either a single episode (positions ``(K, d)``) or a batch
(``(B, K, d)``) through broadcasting.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .linalg import NotPositiveDefinite, cholesky

KINDS = ("formation2d", "line1d")
ACTION_DIM = {"formation2d": 2, "line1d": 1}
DEFAULT_HORIZON = {"formation2d": 50, "line1d": 60}


class InvalidConfig(ValueError):
    pass


class OutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "formation2d"
    num_agents: int = 5
    horizon: int | None = None
    action_low: float = -1.0
    action_high: float = 1.0
    noise_std: float = 0.5
    noise_corr: float = 0.8
    noise_cov: tuple | None = None
    gain: float = 0.3
    cohesion_ratio: float = 0.2
    step_size: float = 0.1
    spacing: float = 0.5
    formation_weight: float = 0.25
    init_extent: float = 1.0
    goal_extent: float = 0.5
    discount: float = 1.0
    observability: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.horizon is None and self.kind in DEFAULT_HORIZON:
            object.__setattr__(self, "horizon", DEFAULT_HORIZON[self.kind])
        if self.noise_cov is not None:
            object.__setattr__(self, "noise_cov",
                               tuple(tuple(float(v) for v in row) for row in self.noise_cov))

    @property
    def action_dim(self) -> int:
        return ACTION_DIM[self.kind]

    @property
    def obs_dim(self) -> int:
        return self.action_dim * (2 + len(observable_neighbors(self, 0)))

    def covariance(self) -> np.ndarray:
        d = self.action_dim
        if self.noise_cov is not None:
            return np.array(self.noise_cov, dtype=float)
        cov = np.full((d, d), self.noise_corr * self.noise_std ** 2)
        np.fill_diagonal(cov, self.noise_std ** 2)
        return cov

    def noise_factor(self) -> np.ndarray:
        return _noise_factor(self.covariance().tobytes(), self.action_dim)

    def validate(self) -> "EnvConfig":
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown environment kind {self.kind!r}")
        if self.num_agents < 3:
            raise InvalidConfig("need at least 3 agents")
        if self.horizon is None or self.horizon < 10:
            raise InvalidConfig("horizon must be at least 10")
        if not self.action_low < self.action_high:
            raise InvalidConfig("empty action box")
        if self.observability not in ("ring", "full"):
            raise InvalidConfig(f"unknown observability {self.observability!r}")
        if not 0 < self.discount <= 1:
            raise InvalidConfig("discount must lie in (0, 1]")
        if self.gain <= 0 or self.step_size <= 0:
            raise InvalidConfig("gain and step_size must be positive")
        cov = self.covariance()
        if cov.shape != (self.action_dim, self.action_dim):
            raise InvalidConfig("noise_cov has the wrong shape")
        try:
            cholesky(cov)
        except NotPositiveDefinite as exc:
            raise InvalidConfig(f"noise_cov is not positive definite: {exc}") from None
        return self

    def with_(self, **changes) -> "EnvConfig":
        return replace(self, **changes)


@lru_cache(maxsize=64)
def _noise_factor(cov_bytes: bytes, d: int) -> np.ndarray:
    cov = np.frombuffer(cov_bytes).reshape(d, d)
    return cholesky(cov).dense()


@dataclass
class EnvState:
    positions: np.ndarray
    goal: np.ndarray
    t: int = 0


# ---------------------------------------------------------------- topology


def observable_neighbors(cfg: EnvConfig, agent: int) -> tuple:
    """Agents whose actions ``agent`` observes, ascending."""
    K = cfg.num_agents
    if not 0 <= agent < K:
        raise IndexError(f"agent {agent} out of range")
    if cfg.observability == "ring":
        return tuple(sorted({(agent - 1) % K, (agent + 1) % K}))
    return tuple(j for j in range(K) if j != agent)


def observers_of(cfg: EnvConfig, victim: int) -> tuple:
    return tuple(i for i in range(cfg.num_agents) if victim in observable_neighbors(cfg, i))


def pairs(cfg: EnvConfig) -> list:
    """All (observer, neighbour) pairs."""
    return [(i, j) for i in range(cfg.num_agents) for j in observable_neighbors(cfg, i)]


def neighbor_table(cfg: EnvConfig) -> np.ndarray:
    return np.array([observable_neighbors(cfg, i) for i in range(cfg.num_agents)], dtype=np.int64)


def pair_view_index(cfg: EnvConfig, observer: int, victim: int) -> np.ndarray:
    """Column permutation of the observer's observation that moves the
    victim's relative-position block in front of the other neighbours.

    The permuted vector carries exactly the same information; it only makes
    the input layout independent of which observer is looking, which is what
    lets one predictor per victim be shared across observers.
    """
    d = cfg.action_dim
    nbrs = list(observable_neighbors(cfg, observer))
    if victim not in nbrs:
        raise ValueError(f"agent {victim} is not observable by {observer}")
    order = [victim] + [j for j in nbrs if j != victim]
    cols = list(range(d))
    for j in order:
        k = nbrs.index(j)
        cols.extend(range(d + k * d, d + (k + 1) * d))
    n = len(nbrs)
    cols.extend(range(d + n * d, d + n * d + d))
    return np.array(cols, dtype=np.int64)


# ---------------------------------------------------------------- dynamics


def episode_rng(cfg: EnvConfig, episode_seed: int) -> np.random.Generator:
    return np.random.default_rng([int(cfg.seed), int(episode_seed)])


def draw_episode(cfg: EnvConfig, episode_seed: int):
    """All randomness an episode consumes, drawn up front in a fixed order:
    initial positions, goal, standard-normal policy noise (T, K, d) and
    uniform attack draws (T, K, d)."""
    rng = episode_rng(cfg, episode_seed)
    K, d, T = cfg.num_agents, cfg.action_dim, cfg.horizon
    positions = rng.uniform(-cfg.init_extent, cfg.init_extent, (K, d))
    goal = rng.uniform(-cfg.goal_extent, cfg.goal_extent, d)
    normals = rng.standard_normal((T, K, d))
    uniforms = rng.random((T, K, d))
    return positions, goal, normals, uniforms


def observe(cfg: EnvConfig, positions: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Per-agent observations, shape (..., K, obs_dim)."""
    nb = neighbor_table(cfg)
    own = positions
    rel = positions[..., nb, :] - positions[..., :, None, :]
    rel = rel.reshape(rel.shape[:-2] + (-1,))
    to_goal = goal[..., None, :] - positions
    return np.concatenate([own, rel, to_goal], axis=-1)


def reset(cfg: EnvConfig, episode_seed: int):
    cfg.validate()
    positions, goal, _, _ = draw_episode(cfg, episode_seed)
    state = EnvState(positions, goal, 0)
    return state, observe(cfg, positions, goal)


def team_cost(cfg: EnvConfig, positions: np.ndarray, goal: np.ndarray) -> np.ndarray:
    K = cfg.num_agents
    dist = np.linalg.norm(positions - goal[..., None, :], axis=-1).mean(-1)
    iu, ju = np.triu_indices(K, 1)
    gaps = np.linalg.norm(positions[..., iu, :] - positions[..., ju, :], axis=-1)
    formation = np.abs(gaps - cfg.spacing).mean(-1)
    return dist + cfg.formation_weight * formation


def check_bounds(cfg: EnvConfig, actions: np.ndarray, tol: float = 1e-9):
    if np.any(actions < cfg.action_low - tol) or np.any(actions > cfg.action_high + tol):
        raise OutOfBounds("action outside the action box")


def transition(cfg: EnvConfig, positions: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return positions + cfg.step_size * actions


def step(cfg: EnvConfig, state: EnvState, joint: np.ndarray):
    """Apply a joint action; returns (state', observations, team reward, done)."""
    joint = np.asarray(joint, dtype=float)
    check_bounds(cfg, joint)
    positions = transition(cfg, state.positions, joint)
    reward = -team_cost(cfg, positions, state.goal)
    new = EnvState(positions, state.goal, state.t + 1)
    return new, observe(cfg, positions, state.goal), reward, new.t >= cfg.horizon


# ---------------------------------------------------------------- policies


def clip_action(cfg: EnvConfig, a: np.ndarray) -> np.ndarray:
    return np.clip(a, cfg.action_low, cfg.action_high)


def scripted_mean(cfg: EnvConfig, obs: np.ndarray) -> np.ndarray:
    """Pre-noise action computed from an agent's own observation."""
    d = cfg.action_dim
    goal_rel = obs[..., -d:]
    rel = obs[..., d:-d]
    rel = rel.reshape(rel.shape[:-1] + (-1, d))
    return cfg.gain * goal_rel + cfg.cohesion_ratio * cfg.gain * rel.mean(-2)


def scripted_policy(cfg: EnvConfig, agent: int, obs, rng=None, normals=None) -> np.ndarray:
    """Sample the scripted action for ``agent``; noise comes from ``rng`` or
    from pre-drawn standard normals."""
    obs = np.asarray(obs, dtype=float)
    mean = scripted_mean(cfg, obs)
    if normals is None:
        if rng is None:
            return clip_action(cfg, mean)
        normals = rng.standard_normal(mean.shape)
    noise = normals @ cfg.noise_factor().T
    return clip_action(cfg, mean + noise)


def analytic_mean(cfg: EnvConfig, positions: np.ndarray, goal: np.ndarray, agent: int) -> np.ndarray:
    """Ground-truth pre-clip mean action of ``agent`` from the full state."""
    nbrs = list(observable_neighbors(cfg, agent))
    p = positions[..., agent, :]
    cohesion = (positions[..., nbrs, :] - p[..., None, :]).mean(-2)
    return cfg.gain * (goal - p) + cfg.cohesion_ratio * cfg.gain * cohesion
