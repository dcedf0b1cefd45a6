import json

import numpy as np
import pytest

from pgc import cli

SMOKE = "configs/smoke.toml"


def run(*args):
    return cli.main(list(args))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    common = ["--config", SMOKE, "--out", str(out)]
    assert run("collect", *common) == 0
    assert run("train-predictor", *common) == 0
    assert run("train-attack", "--kind", "act", *common) == 0
    assert run("train-attack", "--kind", "dyn", "--lam", "0.5", *common) == 0
    assert run("evaluate", *common) == 0
    return out


def test_outputs_exist(pipeline):
    assert len(list((pipeline / "traces").glob("*.jsonl"))) == 40
    assert len(list((pipeline / "models").glob("pair_*.json"))) == 20
    summary = json.loads((pipeline / "report" / "summary.json").read_text())
    assert set(summary["auc"]) == {"rand", "act", "dyn_lam0.5"}
    for f in ("roc.csv", "auc.csv", "ttd.csv", "impact.csv", "roc_act.svg"):
        assert (pipeline / "report" / f).exists()


def test_every_output_carries_hash_and_version(pipeline):
    h = json.loads((pipeline / "report" / "summary.json").read_text())["config_hash"]
    files = [next((pipeline / "traces").glob("*.jsonl")), pipeline / "models" / "pair_0_1.json",
             pipeline / "attacks" / "act.json", pipeline / "attacks" / "act.log",
             pipeline / "report" / "roc.csv", pipeline / "models" / "training.json"]
    from pgc import __version__
    for f in files:
        text = f.read_text()
        assert h in text and __version__ in text, f


def test_attack_log_is_non_increasing(pipeline):
    lines = [l for l in (pipeline / "attacks" / "act.log").read_text().splitlines()
             if not l.startswith("#")]
    elite = [float(l.split()[1]) for l in lines]
    assert len(elite) == 3
    assert all(b <= a for a, b in zip(elite, elite[1:]))


def test_rerun_is_byte_identical(pipeline, tmp_path):
    common = ["--config", SMOKE, "--out", str(tmp_path)]
    assert run("collect", *common) == 0
    for f in (pipeline / "traces").glob("*.jsonl"):
        assert (tmp_path / "traces" / f.name).read_bytes() == f.read_bytes()
    assert run("train-predictor", "--workers", "2", *common) == 0
    for f in (pipeline / "models").glob("*.json"):
        assert (tmp_path / "models" / f.name).read_bytes() == f.read_bytes()


def test_report_regenerates_identically(pipeline):
    before = (pipeline / "report" / "roc.csv").read_bytes()
    assert run("report", "--config", SMOKE, "--out", str(pipeline)) == 0
    assert (pipeline / "report" / "roc.csv").read_bytes() == before


def test_sharing_writes_one_model_per_victim(pipeline, tmp_path):
    (tmp_path / "traces").symlink_to(pipeline / "traces")
    assert run("train-predictor", "--share-params", "--config", SMOKE, "--out", str(tmp_path)) == 0
    assert sorted(f.name for f in (tmp_path / "models").glob("victim_*.json")) == [
        f"victim_{j}.json" for j in range(5)]


def test_diagonal_flag_tags_models(pipeline, tmp_path):
    (tmp_path / "traces").symlink_to(pipeline / "traces")
    assert run("train-predictor", "--diagonal-only", "--config", SMOKE, "--out", str(tmp_path)) == 0
    blob = json.loads((tmp_path / "models" / "pair_0_1.json").read_text())
    assert blob["tag"] == "ipgc"


def test_zero_episodes_is_a_warning(tmp_path, caplog):
    assert run("collect", "--episodes", "0", "--config", SMOKE, "--out", str(tmp_path)) == 0
    assert not (tmp_path / "traces").exists()
    assert "zero episodes" in caplog.text


def test_exit_codes(tmp_path):
    out = ["--out", str(tmp_path)]
    assert run("train-attack", "--kind", "rand", "--config", SMOKE, *out) == 2
    assert run("train-attack", "--kind", "dyn", "--config", SMOKE, *out) == 3
    assert run("train-predictor", "--config", SMOKE, *out) == 3
    assert run("evaluate", "--config", SMOKE, *out) == 3
    assert run("report", "--config", SMOKE, *out) == 3
    bad = tmp_path / "bad.toml"
    bad.write_text("[env]\nnoise = 1\n")
    assert run("collect", "--config", str(bad), *out) == 2
    assert run("collect", "--workers", "0", "--config", SMOKE, *out) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    from pgc.predictor import DivergenceDetected

    def boom(*a, **k):
        raise DivergenceDetected("nan")

    monkeypatch.setattr(cli, "cmd_collect", boom)
    assert run("collect", "--config", SMOKE, "--out", str(tmp_path)) == 4


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env_out"))
    assert run("collect", "--episodes", "2", "--config", SMOKE) == 0
    assert len(list((tmp_path / "env_out" / "traces").glob("*.jsonl"))) == 2


def test_seed_flag_changes_episodes(tmp_path):
    assert run("collect", "--episodes", "1", "--seed", "7", "--config", SMOKE,
               "--out", str(tmp_path)) == 0
    (f,) = (tmp_path / "traces").glob("*.jsonl")
    assert f.name == f"ep_{70_000_000:09d}.jsonl"
