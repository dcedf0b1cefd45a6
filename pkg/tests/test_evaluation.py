import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pgc.attacks import AttackSpec
from pgc.detector import DetectorConfig
from pgc.env import EnvConfig
from pgc.evaluation import (TRACE_COLUMNS, EmptySet, NoTruePositives, auc_exact, auc_pairwise,
                            condition_roc, detection_times, episode_statistics,
                            export_score_trace, impact_table, log_beta_grid, roc,
                            run_condition, run_episode, time_to_detection, ttd_curve)
from pgc.report import read_csv, write_report

CFG = EnvConfig(noise_std=0.55)
DET = DetectorConfig(w=0.5)
stat_lists = st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=40)


@pytest.fixture(scope="module")
def conditions(desk_bank):
    clean = run_condition(CFG, desk_bank, DET, None, np.arange(700_000, 700_200))
    rand = run_condition(CFG, desk_bank, DET, AttackSpec("rand", (0,), t0=10),
                         np.arange(800_000, 800_200))
    grad = run_condition(CFG, desk_bank, DET, AttackSpec("grad", (0,)),
                         np.arange(800_000, 800_200))
    return clean, rand, grad


# ---------------------------------------------------------------- roc / auc


def test_hand_auc():
    assert auc_exact([1, 2], [1.5, 3]) == 0.75
    assert auc_pairwise([1, 2], [1.5, 3]) == 0.75


def test_separable_auc():
    assert roc([0.1, 0.2, 0.3], [1.0, 2.0]).auc == 1.0


def test_identical_distributions_give_half():
    r = np.random.default_rng(0)
    assert abs(roc(r.exponential(size=500), r.exponential(size=500)).auc - 0.5) < 0.05


def test_empty_sets_rejected():
    with pytest.raises(EmptySet):
        roc([], [1.0])


@given(stat_lists, stat_lists)
def test_exact_auc_equals_pairwise_count(clean, att):
    assert auc_exact(clean, att) == pytest.approx(auc_pairwise(clean, att), abs=1e-12)
    assert 0.0 <= auc_exact(clean, att) <= 1.0


@given(stat_lists, stat_lists)
def test_roc_rates_monotone_in_beta(clean, att):
    c = roc(clean, att)
    assert np.all(np.diff(c.fpr()) <= 0) and np.all(np.diff(c.tpr()) <= 0)


def test_beta_grid():
    g = log_beta_grid()
    assert len(g) == 50 and g[0] == pytest.approx(0.1) and g[-1] == pytest.approx(100)
    assert np.allclose(np.diff(np.log(g)), np.log(1000) / 49)


# ---------------------------------------------------------------- ttd / impact


class _Fixed:
    """Condition stand-in with hand-set detection times."""


def test_ttd_examples(monkeypatch):
    import pgc.evaluation as ev
    cond = _Fixed()
    cond.t0 = 5
    monkeypatch.setattr(ev, "detection_times", lambda *a, **k: np.array([9]))
    assert time_to_detection(cond, 1.0) == 4
    monkeypatch.setattr(ev, "detection_times", lambda *a, **k: np.array([5, 7, -1]))
    assert time_to_detection(cond, 1.0) == 1
    monkeypatch.setattr(ev, "detection_times", lambda *a, **k: np.array([-1, -1]))
    with pytest.raises(NoTruePositives):
        time_to_detection(cond, 1.0)


def test_impact_table_shape(conditions):
    clean, rand, _ = conditions
    tab = impact_table([clean, rand])
    assert set(tab) == {"none", "rand"}
    assert tab["none"]["n"] == 200
    assert tab["none"]["mean"] > tab["rand"]["mean"]
    assert impact_table([clean, rand]) == tab


# ---------------------------------------------------------------- on real traces


def test_sufficient_statistic_matches_rerun(conditions, desk_bank):
    clean, rand, _ = conditions
    r = np.random.default_rng(0)
    cstat = episode_statistics(clean, (0,))
    astat = episode_statistics(rand)
    for beta in r.uniform(0.1, 30, 20):
        det = DET.with_beta(beta)
        for cond, stat in ((clean, cstat), (rand, astat)):
            cond.det = det
            fired = np.array([cond.episode(k, (0,)).detection_time is not None
                              for k in range(len(cond.seeds))])
            np.testing.assert_array_equal(fired, stat > beta)
            cond.det = DET


def test_detection_times_agree_with_episode_results(conditions):
    _, rand, _ = conditions
    rand.det = DET.with_beta(4.0)
    t = detection_times(rand, 4.0)
    for k in range(20):
        dt = rand.episode(k).detection_time
        assert t[k] == (-1 if dt is None else dt)
    rand.det = DET


def test_ttd_non_increasing_as_beta_falls(conditions):
    clean, rand, _ = conditions
    betas = log_beta_grid(12, 0.5, 20)
    # per episode: a lower threshold detects no later, and detects whatever a higher one does
    times = [detection_times(rand, b) for b in betas]
    for lo, hi in zip(times, times[1:]):
        both = (lo >= 0) & (hi >= 0)
        assert np.all(lo[both] <= hi[both])
        assert np.all((hi >= 0) <= (lo >= 0))
    rows = ttd_curve(clean, rand, betas)
    assert [b for b, _, _ in rows] == list(betas)


def test_quorum_two_never_earlier(conditions):
    _, _, grad = conditions
    for beta in (1.0, 3.0, 8.0):
        t1 = detection_times(grad, beta, u=1)
        t2 = detection_times(grad, beta, u=2)
        assert np.all((t2 < 0) | ((t1 >= 0) & (t2 >= t1)))


def test_run_episode_high_threshold_never_fires(desk_bank):
    res = run_episode(CFG, desk_bank, DET.with_beta(1e9), None, 5)
    assert res.detection_time is None and not res.attacked


def test_run_episode_is_deterministic(desk_bank):
    a = run_episode(CFG, desk_bank, DET, AttackSpec("rand"), 17)
    b = run_episode(CFG, desk_bank, DET, AttackSpec("rand"), 17)
    assert a == b


def test_rand_detected_quickly_at_low_fpr(conditions, desk_bank):
    clean, _, _ = conditions
    rand0 = run_condition(CFG, desk_bank, DET, AttackSpec("rand"), np.arange(900_000, 900_200))
    cstat = episode_statistics(clean, (0,))
    beta = float(np.quantile(cstat, 0.95))
    assert np.mean(cstat > beta) <= 0.05
    assert time_to_detection(rand0, beta) < 10


def test_score_trace_export(conditions, tmp_path):
    clean, _, _ = conditions
    p = tmp_path / "trace.csv"
    export_score_trace(p, clean, 0)
    rows = p.read_text().splitlines()
    assert rows[0].split(",") == list(TRACE_COLUMNS)
    assert len(rows) == 1 + 50 * 20


# ---------------------------------------------------------------- report


def test_empty_report_is_valid_json(tmp_path):
    s = write_report(tmp_path, {})
    blob = json.loads((tmp_path / "summary.json").read_text())
    assert blob["auc"] == {} and s["auc"] == {}
    assert read_csv(tmp_path / "roc.csv") == []


def test_report_csv_round_trip(conditions, tmp_path):
    clean, rand, grad = conditions
    curves = {"rand": condition_roc(clean, rand), "grad": condition_roc(clean, grad)}
    write_report(tmp_path, curves, {"grad": ttd_curve(clean, grad)},
                 impact_table([clean, rand, grad]), cfg_hash="abc")
    rows = read_csv(tmp_path / "auc.csv")
    for row in rows:
        assert float(row["auc"]) == pytest.approx(curves[row["condition"]].auc, abs=1e-12)
    pts = [r for r in read_csv(tmp_path / "roc.csv") if r["condition"] == "grad"]
    assert [float(r["tpr"]) for r in pts] == list(curves["grad"].tpr())
    assert "config=abc" in (tmp_path / "roc_grad.svg").read_text()
    total = sum(f.stat().st_size for f in tmp_path.iterdir())
    assert total < 5_000_000
