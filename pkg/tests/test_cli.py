import csv
import json

import pytest

from gridgame import pipeline
from gridgame.cli import main

SMALL = {
    "attacker": {"meta_iters": 5, "n_tasks": 2},
    "defender": {"pop_size": 6, "generations": 2},
    "montecarlo": {"trials": 20, "top_m": 2},
}


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("run")
    code = main(["run", "--config", str(small_config), "--out", str(out)])
    return code, out


def test_validate_bundled(capsys):
    assert main(["validate"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["buses"] == 69 and summary["ties"] == 5
    assert summary["converged"] and summary["min_voltage_pu"] > 0.92


def test_missing_case_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    assert main(["validate", "--case", str(missing)]) != 0
    assert str(missing) in capsys.readouterr().err
    assert main(["run", "--case", str(missing), "--out", str(tmp_path / "o")]) != 0


def test_unknown_config_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"defender": {"popsize": 3}}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "popsize" in capsys.readouterr().err


def test_run_writes_artifacts(small_run):
    code, out = small_run
    assert code == 0
    doc = json.loads((out / "results.json").read_text())
    for key in ("attack_ranking", "defenses", "stackelberg", "recommendation", "runtime_seconds"):
        assert key in doc
    assert doc["stackelberg"]["leader"]["w"] == [0.6, 0.1, 0.3]
    for name in ("attack_ranking.csv", "load_served.csv", "voltage_profile.csv", "tie_usage.csv",
                 "attack_ranking.svg", "load_served.svg", "voltage_profile.svg", "tie_usage.svg", "runtime.json"):
        assert (out / name).exists(), name


def test_csv_numbers_come_from_results(small_run):
    _, out = small_run
    doc = json.loads((out / "results.json").read_text())
    with open(out / "load_served.csv") as fh:
        rows = list(csv.DictReader(fh))
    per_attack = doc["defenses"]["per_attack"]
    assert len(rows) == len(per_attack)
    for row, rec in zip(rows, per_attack):
        assert float(row["post_attack_pct"]) == pytest.approx(rec["post_attack"]["load_served_pct"])
        assert float(row["post_defense_pct"]) == pytest.approx(rec["post_defense"]["load_served_pct"])


def test_resume_skips_finished_stages(small_run, small_config, monkeypatch):
    _, out = small_run
    before = (out / "results.json").read_bytes()

    def boom(*args, **kwargs):
        raise AssertionError("stage should have been resumed")

    monkeypatch.setattr(pipeline, "stage_attack", boom)
    monkeypatch.setattr(pipeline, "stage_defend", boom)
    assert main(["run", "--config", str(small_config), "--out", str(out), "--resume"]) == 0
    assert (out / "results.json").read_bytes() == before


def test_stage_failure_reports_stage(tmp_path, small_config, monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise FloatingPointError("non-finite metric")

    monkeypatch.setattr(pipeline, "stage_attack", broken)
    assert main(["attack-rank", "--config", str(small_config), "--out", str(tmp_path), "--fresh"]) == 2
    assert "attack" in capsys.readouterr().err
