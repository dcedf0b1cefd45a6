import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from pgc import env
from pgc.attacks import (AttackSpec, CemConfig, UnknownKind, adversarial_objective,
                         apply_attack, cem_train, evaluate_candidates, grad_attack,
                         linear_policy_size, q_surrogate, rand_attack, surrogate_gradient)
from pgc.env import EnvConfig
from pgc.rollout import simulate

CFG = EnvConfig(noise_std=0.55)
SMALL_CEM = CemConfig(population=20, iterations=6, episodes=4)


# ---------------------------------------------------------------- rand


def test_rand_mean_and_box():
    r = np.random.default_rng(0)
    a = np.stack([rand_attack([-1, -1], [1, 1], r) for _ in range(10_000)])
    assert np.all(np.abs(a.mean(0)) < 0.03)
    assert a.min() >= -1 and a.max() <= 1


def test_rand_degenerate_box():
    r = np.random.default_rng(0)
    np.testing.assert_array_equal(rand_attack([0.3], [0.3], r), [0.3])


def test_rand_chi_square_uniformity():
    a = rand_attack(np.full(2, -1.0), np.full(2, 1.0), u=np.random.default_rng(5).random((100_000, 2)))
    for k in range(2):
        counts, _ = np.histogram(a[:, k], bins=20, range=(-1, 1))
        assert stats.chisquare(counts).pvalue > 0.01


# ---------------------------------------------------------------- grad


def test_grad_examples():
    a = np.array([0.3, -0.2])
    np.testing.assert_array_equal(grad_attack(a, [1.0, -1.0], 0.0, -1, 1), a)
    np.testing.assert_allclose(grad_attack([0, 0], [1.0, -1.0], 0.1, -1, 1), [-0.1, 0.1])
    np.testing.assert_array_equal(grad_attack([-1.0, 1.0], [1.0, -1.0], 0.1, -1, 1), [-1, 1])


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(-5, 5), st.floats(-5, 5),
       st.floats(0, 0.05))
def test_grad_sign_symmetry(a0, a1, g0, g1, eps):
    a, g = np.array([a0, a1]), np.array([g0, g1])
    hurt = grad_attack(a, g, eps, -1, 1)
    help_ = grad_attack(a, -g, eps, -1, 1)
    np.testing.assert_allclose(hurt + help_, 2 * a, atol=1e-12)
    assert np.abs(hurt - a).max() <= eps + 1e-12


def test_surrogate_prefers_moving_toward_goal():
    state, _ = env.reset(CFG, 3)
    to_goal = state.goal - state.positions[1]
    toward = to_goal / np.linalg.norm(to_goal)
    q_toward = q_surrogate(CFG, state.positions, state.goal, 1, toward)
    q_away = q_surrogate(CFG, state.positions, state.goal, 1, -toward)
    assert q_toward > q_away


def test_surrogate_symmetric_tie():
    # victim at the goal, alone on the axis: mirror-image moves score equally
    cfg = EnvConfig(formation_weight=0.0)
    p = np.array([[0.0, 0.0], [0.5, 0.5], [-0.5, 0.5], [0.5, -0.5], [-0.5, -0.5]])
    g = np.zeros(2)
    assert q_surrogate(cfg, p, g, 0, np.array([0.3, 0.0])) == pytest.approx(
        q_surrogate(cfg, p, g, 0, np.array([-0.3, 0.0])), abs=1e-15)


def test_surrogate_continuity():
    state, _ = env.reset(CFG, 8)
    a = np.array([0.1, -0.2])
    base = q_surrogate(CFG, state.positions, state.goal, 2, a)
    for h in (1e-3, 1e-4, 1e-5, 1e-6):
        assert abs(q_surrogate(CFG, state.positions, state.goal, 2, a + h) - base) < 10 * h


def test_surrogate_gradient_matches_analytic_direction():
    state, _ = env.reset(CFG, 4)
    g = surrogate_gradient(CFG, state.positions, state.goal, 0, np.zeros(2))
    assert g.shape == (2,) and np.all(np.isfinite(g))


# ---------------------------------------------------------------- application


def test_before_onset_returns_normal_action():
    spec = AttackSpec("rand", (0,), t0=5)
    a = np.array([0.123456789, -0.5])
    out = apply_attack(spec, 4, None, a, {"cfg": CFG, "rng": np.random.default_rng(0)})
    assert out.tobytes() == a.tobytes()


def test_never_sentinel():
    spec = AttackSpec("rand", (0,), t0=None)
    a = np.array([0.2, 0.1])
    for t in (0, 10, 10**6):
        np.testing.assert_array_equal(apply_attack(spec, t, None, a, {"cfg": CFG}), a)


def test_unknown_kind():
    with pytest.raises(UnknownKind):
        AttackSpec("flip")


def test_spec_validation():
    with pytest.raises(ValueError):
        AttackSpec("grad", epsilon=1.5).validate(CFG)
    with pytest.raises(ValueError):
        AttackSpec("rand", (7,)).validate(CFG)
    with pytest.raises(ValueError):
        AttackSpec("act").validate(CFG)
    with pytest.raises(ValueError):
        AttackSpec("rand", ())
    assert AttackSpec("grad").epsilon == pytest.approx(0.1 * (CFG.action_high - CFG.action_low))


def test_two_victims_draw_independently():
    ro = simulate(CFG, np.arange(10_000), AttackSpec("rand", (1, 3)))
    a, b = ro.actions[:, 0, 1], ro.actions[:, 0, 3]
    for k in range(2):
        assert abs(np.corrcoef(a[:, k], b[:, k])[0, 1]) < 0.03
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("kind", ["rand", "grad", "act"])
def test_adversarial_actions_stay_in_box(kind):
    params = None
    if kind == "act":
        params = tuple(np.random.default_rng(0).normal(0, 5, linear_policy_size(CFG)))
    ro = simulate(CFG, np.arange(50), AttackSpec(kind, (0, 2), policy_params=params))
    assert ro.actions.min() >= CFG.action_low and ro.actions.max() <= CFG.action_high
    assert ro.attack_active[:, :, [0, 2]].all() and not ro.attack_active[:, :, 1].any()


# ---------------------------------------------------------------- cem


def test_cem_elite_objective_non_increasing_and_reproducible():
    p1, h1 = cem_train(CFG, "act", 0.0, SMALL_CEM, 3)
    p2, h2 = cem_train(CFG, "act", 0.0, SMALL_CEM, 3)
    np.testing.assert_array_equal(p1, p2)
    assert h1 == h2
    assert all(b <= a for a, b in zip(h1, h1[1:]))


def test_cem_rejects_untrainable_kinds():
    with pytest.raises(UnknownKind):
        cem_train(CFG, "rand", 0.0, SMALL_CEM, 0)
    with pytest.raises(ValueError):
        cem_train(CFG, "dyn", 1.0, SMALL_CEM, 0)


def test_cem_config_validation():
    for bad in (dict(elite_frac=1.0), dict(population=0), dict(population=3, elite_frac=0.2)):
        with pytest.raises(ValueError):
            CemConfig(**bad)


def test_act_attack_hurts_the_team():
    params, _ = cem_train(CFG, "act", 0.0, SMALL_CEM, 0)
    seeds = np.arange(500_000, 500_200)
    clean = simulate(CFG, seeds).total_reward.mean()
    hit = simulate(CFG, seeds, AttackSpec("act", policy_params=tuple(params))).total_reward.mean()
    assert hit < 1.3 * clean  # rewards are negative: at least 30% worse


def test_dyn_with_zero_lambda_matches_act(desk_bank):
    r = np.random.default_rng(0)
    cand = r.normal(0, 1, (5, linear_policy_size(CFG)))
    seeds = [11, 12, 13]
    act = evaluate_candidates(CFG, AttackSpec("act", policy_params=tuple(cand[0])), cand,
                              seeds, None)
    dyn = evaluate_candidates(CFG, AttackSpec("dyn", lam=0.0, policy_params=tuple(cand[0])),
                              cand, seeds, desk_bank)
    np.testing.assert_array_equal(act, dyn)


def test_objective_adds_detectability_term(desk_bank):
    spec = AttackSpec("dyn", lam=2.0, t0=10, policy_params=tuple(np.zeros(linear_policy_size(CFG))))
    ro = simulate(CFG, [1, 2], spec, desk_bank)
    dev = np.nansum(np.abs(ro.z[:, 10:, 0, :] + 1.0), axis=(1, 2))
    np.testing.assert_allclose(adversarial_objective(ro, spec, CFG),
                               ro.rewards[:, 10:].sum(1) + 2.0 * dev, rtol=1e-12)


def test_large_lambda_hides_the_attack(desk_bank):
    act, _ = cem_train(CFG, "act", 0.0, CemConfig(), 0)
    dyn, _ = cem_train(CFG, "dyn", 10.0, CemConfig(), 0, bank=desk_bank)
    seeds = np.arange(600_000, 600_200)

    def mean_dev(kind, params, lam):
        ro = simulate(CFG, seeds, AttackSpec(kind, lam=lam, policy_params=tuple(params)), desk_bank)
        return np.nanmean(np.abs(ro.z[:, :, 0, :] + 1.0))

    assert mean_dev("dyn", dyn, 10.0) <= 0.75 * mean_dev("act", act, 0.0)
