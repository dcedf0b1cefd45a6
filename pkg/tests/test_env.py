import numpy as np
import pytest
from hypothesis import given, strategies as st

from pgc import env
from pgc.env import EnvConfig, InvalidConfig, OutOfBounds

CFG = EnvConfig()


def test_reset_is_deterministic():
    a, oa = env.reset(CFG, 11)
    b, ob = env.reset(CFG, 11)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(oa, ob)
    c, _ = env.reset(CFG, 12)
    assert not np.array_equal(a.positions, c.positions)


def test_base_seed_changes_episodes():
    a, _ = env.reset(CFG, 3)
    b, _ = env.reset(CFG.with_(seed=1), 3)
    assert not np.array_equal(a.positions, b.positions)


def test_observation_length():
    _, obs = env.reset(CFG, 0)
    assert obs.shape == (5, 2 + 2 * 4 + 2)
    ring = CFG.with_(observability="ring")
    _, obs = env.reset(ring, 0)
    assert obs.shape == (5, 2 + 2 * 2 + 2)


def test_observation_layout():
    state, obs = env.reset(CFG, 4)
    p, g = state.positions, state.goal
    o = obs[2]
    np.testing.assert_allclose(o[:2], p[2])
    for k, j in enumerate(env.observable_neighbors(CFG, 2)):
        np.testing.assert_allclose(o[2 + 2 * k:4 + 2 * k], p[j] - p[2])
    np.testing.assert_allclose(o[-2:], g - p[2])


@pytest.mark.parametrize("bad", [dict(horizon=0), dict(num_agents=2), dict(kind="maze"),
                                 dict(noise_cov=((1.0, 2.0), (2.0, 1.0))), dict(discount=0.0),
                                 dict(observability="star"), dict(action_low=1.0)])
def test_invalid_configs(bad):
    with pytest.raises(InvalidConfig):
        env.reset(CFG.with_(**bad), 0)


def test_default_horizons():
    assert EnvConfig().horizon == 50
    assert EnvConfig(kind="line1d").horizon == 60
    assert EnvConfig(kind="line1d").action_dim == 1


def test_zero_action_keeps_positions():
    state, _ = env.reset(CFG, 1)
    new, _, reward, done = env.step(CFG, state, np.zeros((5, 2)))
    np.testing.assert_array_equal(new.positions, state.positions)
    assert reward == pytest.approx(-env.team_cost(CFG, state.positions, state.goal))
    assert not done


def test_moving_toward_goal_improves_reward():
    state, _ = env.reset(CFG, 2)
    joint = np.zeros((5, 2))
    _, _, r0, _ = env.step(CFG, state, joint)
    to_goal = state.goal - state.positions[0]
    joint[0] = to_goal / np.linalg.norm(to_goal)
    _, _, r1, _ = env.step(CFG, state, joint)
    assert r1 > r0


def test_done_at_horizon():
    state, _ = env.reset(CFG, 0)
    done = False
    for _ in range(CFG.horizon):
        assert not done
        state, _, _, done = env.step(CFG, state, np.zeros((5, 2)))
    assert done and state.t == CFG.horizon


def test_step_rejects_out_of_box_actions():
    state, _ = env.reset(CFG, 0)
    with pytest.raises(OutOfBounds):
        env.step(CFG, state, np.full((5, 2), 1.5))


def test_policy_fixed_point():
    p = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    obs = env.observe(CFG, p, np.zeros(2))
    np.testing.assert_allclose(env.scripted_policy(CFG, 0, obs[0]), [0.0, 0.0], atol=1e-15)


def test_policy_noise_correlation():
    cfg = CFG.with_(noise_std=0.1)
    obs = env.observe(cfg, np.zeros((5, 2)), np.zeros(2))
    r = np.random.default_rng(0)
    a = np.stack([env.scripted_policy(cfg, 0, obs[0], r) for _ in range(10_000)])
    assert np.abs(a).max() < 1.0  # pre-clipping regime
    assert abs(np.corrcoef(a.T)[0, 1] - 0.8) < 0.03


def test_policy_clips_to_box():
    obs = env.observe(CFG, np.zeros((5, 2)), np.array([100.0, -100.0]))
    np.testing.assert_array_equal(env.scripted_policy(CFG, 0, obs[0]), [1.0, -1.0])


def test_neighbors_examples():
    ring = EnvConfig(observability="ring")
    assert set(env.observable_neighbors(ring, 0)) == {4, 1}
    assert env.observable_neighbors(EnvConfig(num_agents=4), 2) == (0, 1, 3)


@pytest.mark.parametrize("obs_mode", ["ring", "full"])
@pytest.mark.parametrize("K", range(3, 11))
def test_every_agent_is_observed(K, obs_mode):
    cfg = EnvConfig(num_agents=K, observability=obs_mode)
    watched = set()
    for i in range(K):
        nb = env.observable_neighbors(cfg, i)
        assert i not in nb
        watched.update(nb)
    assert watched == set(range(K))


@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 10_000))
def test_pair_view_is_a_permutation_with_victim_first(i, j, seed):
    if i == j:
        return
    state, obs = env.reset(CFG, seed)
    perm = env.pair_view_index(CFG, i, j)
    assert sorted(perm) == list(range(CFG.obs_dim))
    v = obs[i][perm]
    np.testing.assert_allclose(v[2:4], state.positions[j] - state.positions[i])


@given(st.integers(0, 10_000), st.integers(0, 4), st.integers(0, 4))
def test_victim_mean_is_computable_from_observer_view(seed, i, j):
    # full observability: the observer reconstructs every position
    if i == j:
        return
    state, obs = env.reset(CFG, seed)
    o = obs[i]
    pos = np.empty((5, 2))
    pos[i] = o[:2]
    for k, n in enumerate(env.observable_neighbors(CFG, i)):
        pos[n] = o[:2] + o[2 + 2 * k:4 + 2 * k]
    goal = o[:2] + o[-2:]
    np.testing.assert_allclose(env.analytic_mean(CFG, pos, goal, j),
                               env.analytic_mean(CFG, state.positions, state.goal, j),
                               atol=1e-12)
    np.testing.assert_allclose(env.scripted_mean(CFG, obs[j]),
                               env.analytic_mean(CFG, state.positions, state.goal, j),
                               atol=1e-12)


def test_draw_order_is_fixed():
    pos, goal, normals, uniforms = env.draw_episode(CFG, 9)
    r = np.random.default_rng([0, 9])
    np.testing.assert_array_equal(pos, r.uniform(-1, 1, (5, 2)))
    np.testing.assert_array_equal(goal, r.uniform(-0.5, 0.5, 2))
    np.testing.assert_array_equal(normals, r.standard_normal((50, 5, 2)))
    np.testing.assert_array_equal(uniforms, r.random((50, 5, 2)))
