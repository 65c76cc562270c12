import csv
import json
import math
import os

import numpy as np
import pytest

from pmasym.cli import (CenterPolicy, ExperimentConfig, ValidationError, emit, lemma_suite, main, nonincreasing,
                        parse_config, report_from_json, report_to_json, run, run_eps, sweep_trends,
                        verify_report)
from pmasym.profiles import DomainError


def small_config(**kw):
    return ExperimentConfig(eps_list=(0.2,), **kw)


@pytest.fixture(scope="module")
def report_02():
    return run(small_config())


def test_parse_config_defaults_and_overrides(tmp_path):
    cfg = parse_config("eps_list = 0.3, 0.2\nbeta = 2\nforcing = 0, 1, 0.5  # quadratic\ncenter_policy = Scan(3)\n")
    assert cfg.eps_list == (0.3, 0.2) and cfg.beta == 2.0
    assert cfg.center_policy == CenterPolicy("Scan", n=3)
    assert cfg.forcing.coeffs == (0.0, 1.0, 0.5)
    assert parse_config("").eps_list == (0.2, 0.1, 0.05)
    data = tmp_path / "f.txt"
    data.write_text("0 0\n0.5 0.5\n1 1\n")
    assert parse_config(f"forcing = sampled:{data}").forcing.form == "sampled"


@pytest.mark.parametrize("text", ["eps_list = 0.1, 0.2", "eps_list = 1.5", "x0 = 1.2", "beta = -1",
                                  "bogus = 1", "center_policy = Nowhere", "forcing = 1",
                                  "position_search = maybe", "seed = -3"])
def test_parse_config_validation(text):
    with pytest.raises(ValidationError):
        parse_config(text)


def test_center_policy_round_trip():
    for text in ("Fixed(0.25)", "MidStep", "AtJump", "Scan(5)"):
        assert str(CenterPolicy.parse(text)) == text


def test_trend_examples():
    rep = {"records": [{"cubic_fit": {"sup_error": 0.0}}] * 3}
    t = sweep_trends(rep)["cubic_sup_error"]
    assert t["nonincreasing"] and t["bounded"] and t["sequence"] == [0.0, 0.0, 0.0]
    rep = {"records": [{"cubic_fit": {"sup_error": x}} for x in (3.0, 2.0, 1.0)]}
    assert sweep_trends(rep)["cubic_sup_error"]["nonincreasing"]
    assert not nonincreasing([1.0, 1.2])
    assert nonincreasing([1.0, 1.09])
    assert not nonincreasing([1.0, math.nan])
    with pytest.raises(DomainError):
        sweep_trends({"records": [{}, {}]})


def test_one_record_report(report_02):
    assert len(report_02["records"]) == 1
    rec = report_02["records"][0]
    for key in ("eps", "omega", "converged", "energy", "original_energy", "candidates", "solution",
                "staircase_fit", "step_geometry", "flatness", "offset", "jump_decomposition"):
        assert rec[key] is not None
    assert rec["converged"]
    assert report_02["trends"] is None


def test_one_record_all_fields_populated():
    rep = run(ExperimentConfig(eps_list=(0.1,)))
    rec = rep["records"][0]
    assert rec["converged"]
    for key in ("cubic_fit", "per_jump", "Lambda_gap", "staircase_fit", "flatness"):
        assert rec[key] is not None
    assert all(v is not None for v in rec["cubic_fit"].values())


def test_json_round_trip(report_02):
    text = report_to_json(report_02)
    back = report_from_json(text)
    assert report_to_json(back) == text
    assert back["records"][0]["energy"] == report_02["records"][0]["energy"]


def test_determinism(report_02):
    assert report_to_json(run(small_config())) == report_to_json(report_02)


def test_self_verifying(report_02):
    assert verify_report(report_02) == []
    bad = json.loads(report_to_json(report_02))
    bad["records"][0]["energy"]["total"] *= 1 + 1e-9
    assert len(verify_report(report_from_json(json.dumps(bad)))) == 1


def test_emit_empty(tmp_path):
    rep = {"schema_version": 1, "config": ExperimentConfig().to_dict(), "records": []}
    emit(rep, str(tmp_path))
    for name in ("records.csv", "candidates.csv"):
        with open(tmp_path / name) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 and rows[0]
    assert not [p for p in os.listdir(tmp_path) if p.startswith("plot_")]


def test_emit_one_record(report_02, tmp_path):
    files = emit(report_02, str(tmp_path))
    plots = sorted(p for p in os.listdir(tmp_path) if p.startswith("plot_"))
    assert len(plots) == 3
    with open(tmp_path / "records.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and float(rows[0]["eps"]) == 0.2
    with open(tmp_path / "report.json") as fh:
        assert fh.read() == report_to_json(report_02)
    assert len(files) == 6


def test_emit_io_error(report_02, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit(report_02, str(blocker / "sub"))


def test_midstep_center():
    rec = run_eps(ExperimentConfig(eps_list=(0.05,), center_policy=CenterPolicy("MidStep")), 0.05)
    assert rec["staircase_fit"]["kind"] == "Hor"
    assert abs(rec["staircase_fit"]["tau0"]) < 1


def test_atjump_center():
    rec = run_eps(ExperimentConfig(eps_list=(0.05,), center_policy=CenterPolicy("AtJump")), 0.05)
    cf = rec["cubic_fit"]
    assert all(cf[k] is not None and math.isfinite(cf[k])
               for k in ("sup_error", "deriv_sup_error", "second_deriv_L2_error"))
    assert rec["Lambda_gap"] <= 0.25


@pytest.mark.parametrize("name", ["cubic", "subadd", "loglip", "lower-bound", "cLJ", "transition"])
def test_lemma_suites(name):
    assert lemma_suite(name, seed=7)["violations"] == 0


def test_main_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["lemma", "transition"]) == 0
    assert main(["sweep", "--eps", "0.1,0.2", "--out", out]) == 2
    cfg = tmp_path / "c.txt"
    cfg.write_text("nonsense = 1\n")
    assert main(["solve", "--config", str(cfg)]) == 2
    assert main(["report", "--out", str(tmp_path / "missing")]) == 2
    assert main(["solve", "--eps", "0.2", "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "solution_eps0.2.txt"))
    assert main(["blowup", "--eps", "0.2", "--out", out,
                 "--solution", os.path.join(out, "solution_eps0.2.txt")]) == 0
    assert main(["report", "--out", out]) == 0
    with pytest.raises(SystemExit):
        main(["lemma", "nope"])


def test_threads_do_not_change_report(report_02):
    assert report_to_json(run(small_config(threads=3))) == report_to_json(report_02)
