from __future__ import annotations

import json

import pytest

from conftest import FIRE_TO_TARGET, bundled_text
from fdsynth.cli import build_parser, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--format", "json")
    return code, json.loads(out) if out else None, err


@pytest.fixture
def model_file(tmp_path):
    p = tmp_path / "fire.fdctmc"
    p.write_text(FIRE_TO_TARGET)
    return p


def test_validate_ok(capsys, model_file):
    code, rep, _ = run_json(capsys, "validate", str(model_file))
    assert code == 0
    assert rep["valid"] and rep["states"] == 2 and rep["schema"] == "fdsynth/validate/1"


def test_validate_bad_probabilities(capsys, tmp_path):
    p = tmp_path / "bad.fdctmc"
    p.write_text(FIRE_TO_TARGET.replace("--f-> (s'=1);", "--f-> 0.9 : (s'=1);"))
    code, out, err = run(capsys, "validate", str(p))
    assert code == 1
    assert "probabilities sum to 0.9" in err
    assert "line 7" in err


def test_parse_error_has_line_and_column(capsys, tmp_path):
    p = tmp_path / "bad.fdctmc"
    p.write_text(FIRE_TO_TARGET.replace("init 0;", "init 0"))
    code, _, err = run(capsys, "exp-reward", str(p))
    assert code == 1
    assert f"{p}:7:" in err


def test_validate_reports_restriction_violation(capsys, tmp_path):
    p = tmp_path / "r4.fdctmc"
    p.write_text(FIRE_TO_TARGET.replace("const double c = 0.1;", "const double c = 0.0;"))
    code, _, err = run(capsys, "validate", str(p))
    assert code == 1 and "R4" in err
    assert run(capsys, "validate", str(p), "--reward-only")[0] == 0


def test_exp_reward_json(capsys, model_file):
    code, rep, _ = run_json(capsys, "exp-reward", str(model_file), "--epsilon", "0.005")
    assert code == 0
    assert rep["value"] == pytest.approx(1.1)
    assert rep["schema"] == "fdsynth/exp-reward/1"


def test_exp_reward_delay_and_const_overrides(capsys, model_file):
    _, rep, _ = run_json(capsys, "exp-reward", str(model_file), "--delay", "f=2.5", "--const", "c=1")
    assert rep["value"] == pytest.approx(3.5)


def test_bundled_model_by_name(capsys):
    code, rep, _ = run_json(capsys, "exp-reward", "dpm2")
    assert code == 0 and rep["value"] == pytest.approx(0.818065995897513, rel=1e-12)


def test_text_and_json_report_identical_numbers(capsys, model_file):
    _, rep, _ = run_json(capsys, "exp-reward", str(model_file))
    _, text, _ = run(capsys, "exp-reward", str(model_file))
    assert f"value: {rep['value']!r}" in text.splitlines()


def test_synthesize_dpm2_reports_both_delays(capsys, tmp_path):
    code, rep, _ = run_json(capsys, "synthesize", "dpm2", "--epsilon", "0.05", "--figures", str(tmp_path))
    assert code == 0
    assert set(rep["delays"]) == {"f1", "f2"}
    assert rep["value"] <= rep["valUpper"]
    assert set(rep["actionCounts"]) == {"f1", "f2"}
    assert {"delays", "value", "valUpper", "bounds", "actionCounts", "iterations"} <= set(rep)
    assert "timings" not in rep
    for ev in ("f1", "f2"):
        assert (tmp_path / f"synthesize_{ev}.png").stat().st_size > 0
        assert (tmp_path / f"synthesize_{ev}.csv").read_text().startswith("delay,expected_reward")


def test_budget_failure_exit_code(capsys):
    code, _, err = run(capsys, "synthesize", "retry", "--epsilon", "0.01", "--budget", "10")
    assert code == 2 and "budget" in err


def test_bench_transient_counts(capsys, tmp_path):
    code, rep, _ = run_json(capsys, "bench-transient", "--delta", "0.1", "--steps", "1000", "--rate", "1", "--kappa", "0.01", "--figures", str(tmp_path))
    assert code == 0
    assert rep["products"]["iterative"] == 3000
    assert rep["products"]["naive"] == 66265
    assert rep["products"]["naive"] >= 10 * rep["products"]["iterative"]
    assert rep["density"]["precomputed"] > rep["density"]["P"]
    assert rep["maxConservationDefect"] <= 1e-12
    assert (tmp_path / "bench_transient.png").exists()


def test_bench_single_step(capsys):
    _, rep, _ = run_json(capsys, "bench-transient", "--steps", "1")
    p = rep["products"]
    assert p["naive"] == p["iterative"] == p["precomputedSetup"]


def test_bench_on_model_event(capsys):
    code, rep, _ = run_json(capsys, "bench-transient", "dpm2", "--event", "f2", "--steps", "50")
    assert code == 0 and rep["rate"] == pytest.approx(1.39)


def test_simulate_is_byte_identical(capsys, tmp_path):
    args = ("simulate", "sleep", "--runs", "2000", "--seed", "7", "--format", "json")
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert a == b
    rep = json.loads(a)
    assert set(rep) >= {"mean", "stdError", "runs", "truncatedRuns", "schema"}


def test_simulate_trace_and_figures(capsys, tmp_path):
    trace = tmp_path / "t.csv"
    code, _, _ = run(capsys, "simulate", "retry", "--runs", "100", "--trace", str(trace), "--figures", str(tmp_path / "f"))
    assert code == 0
    assert trace.read_text().startswith("step,state,event,dwell,reward")
    assert (tmp_path / "f" / "simulate_trace.png").exists()


def test_missing_file(capsys):
    code, _, err = run(capsys, "validate", "/nonexistent/model.fdctmc")
    assert code == 1 and "no such model" in err


def test_epsilon_out_of_range_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synthesize", "dpm2", "--epsilon", "2"])
    assert exc.value.code == 1


def test_model_without_target_refused(capsys, tmp_path):
    p = tmp_path / "nt.fdctmc"
    p.write_text(bundled_text("retry").replace('label "target" = r=3;', ""))
    code, _, err = run(capsys, "exp-reward", str(p))
    assert code == 1 and "target" in err


def test_threads_default_from_environment(monkeypatch):
    monkeypatch.setenv("FDSYNTH_THREADS", "3")
    args = build_parser().parse_args(["synthesize", "dpm2"])
    assert args.threads == 3
