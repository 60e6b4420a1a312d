import csv
import json
import math

import pytest

from fcltlab import report
from fcltlab.main import main


def _run(*argv) -> int:
    with pytest.raises(SystemExit) as exc:
        main(list(argv))
    return exc.value.code


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_exact_two_state_parity(tmp_path):
    out = tmp_path / "exact"
    assert _run("exact", "--model", "two-state", "--f", "parity", "--out", str(out)) == 0
    data = _report(out)
    assert abs(data["sigma2"] - 1.0) <= 1e-12
    assert abs(data["fractional_formula"]["sigma2"] - 1.0) <= 1e-12
    assert all(c["passed"] for c in data["checks"].values())
    # TV(t=1, x=0) against the closed-form kernel
    assert abs(data["tv"]["curve"][0][-1] - 0.5 * math.exp(-2.0)) <= 1e-10
    assert (out / "summary.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == manifest["config"]["seed"]
    assert len(manifest["config_hash"]) == 64
    assert "numpy" in manifest["versions"]


def test_exact_birth_death_tilt(tmp_path):
    out = tmp_path / "bd"
    assert _run("exact", "--model", "birth-death(3)", "--f", "1,0,-1", "--out", str(out)) == 0
    assert _report(out)["sigma2"] == pytest.approx(4 / 3, rel=1e-10)


def test_exact_non_reversible_cycle(tmp_path):
    out = tmp_path / "cycle"
    assert _run("exact", "--model", "cycle(4)", "--f", "linear", "--out", str(out)) == 0
    data = _report(out)
    assert not data["reversible"]
    assert data["fractional_formula"] is None
    assert data["sigma2"] > 0


def test_exact_model_file_with_f(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"Q": [[-1, 1], [1, -1]], "f": [1, -1]}))
    out = tmp_path / "file"
    assert _run("exact", "--model", str(path), "--out", str(out)) == 0
    assert _report(out)["sigma2"] == pytest.approx(1.0)


@pytest.mark.parametrize("model", ["birth-death(5)", "birth-death(10)", "cycle(5)"])
def test_exact_passes_on_builtin_models(tmp_path, model):
    out = tmp_path / "builtin"
    assert _run("exact", "--model", model, "--f", "linear", "--out", str(out)) == 0
    assert _report(out)["checks"]["resolvent_identity"]["passed"]


def test_exact_text_report_aligned(tmp_path):
    out = tmp_path / "text"
    assert _run("exact", "--out", str(out)) == 0
    lines = (out / "report.txt").read_text().splitlines()
    header, rule = lines[2], lines[3]
    assert header.split() == ["invariant", "max", "limit", "passed"]
    # every column starts where the header column starts
    starts = [i for i, c in enumerate(rule) if c == "-" and (i == 0 or rule[i - 1] == " ")]
    for line in lines[4:]:
        assert all(i == 0 or line[i - 1] == " " for i in starts if i < len(line))


def test_exact_malformed_q_file(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"Q": [[-1, 1], [1, -1, 0]]}))
    assert _run("exact", "--model", str(path), "--out", str(tmp_path / "o")) == 1
    assert "row 1" in capsys.readouterr().err


@pytest.mark.parametrize("args", [["--model", "birth-death(0)"], ["--model", "cycle(1)"]])
def test_exact_too_few_states(tmp_path, capsys, args):
    assert _run("exact", *args, "--out", str(tmp_path / "o")) == 1
    err = capsys.readouterr().err
    assert "at least 2 states" in err
    assert "Unexpected" not in err


def test_exact_single_state_file(tmp_path, capsys):
    path = tmp_path / "one.json"
    path.write_text(json.dumps({"Q": [[0]]}))
    assert _run("exact", "--model", str(path), "--out", str(tmp_path / "o")) == 1
    err = capsys.readouterr().err
    assert "at least 2 states" in err
    assert "Unexpected" not in err


def test_exact_non_ergodic_model_file(tmp_path):
    path = tmp_path / "split.json"
    path.write_text(json.dumps({"Q": [[0, 0], [0, 0]]}))
    assert _run("exact", "--model", str(path), "--out", str(tmp_path / "o")) == 1


def test_exact_unattainable_tolerance_fails(tmp_path, capsys):
    assert _run("exact", "--model", "birth-death(4)", "--tol", "1e-30", "--out", str(tmp_path / "o")) == 2
    assert "exceeds" in capsys.readouterr().err


def test_simulate_replicates_zero(tmp_path):
    assert _run("simulate", "--replicates", "0", "--out", str(tmp_path / "o")) == 1


def test_simulate_too_few_replicates(tmp_path):
    assert _run("simulate", "--replicates", "20", "--n", "10", "--out", str(tmp_path / "o")) == 1


def _simulate(out, *extra):
    return _run("simulate", "--model", "birth-death(3)", "--f", "1,0,-1", "--n", "10,100",
                "--replicates", "100", "--seed", "7", "--out", str(out), *extra)


def test_simulate_outputs(tmp_path):
    out = tmp_path / "sim"
    assert _simulate(out, "--dump-replicates", "2") == 0
    data = _report(out)
    assert data["sigma2"] == pytest.approx(4 / 3)
    assert data["checks"]["pathwise_identity"]["passed"]
    assert [ns["n"] for ns in data["stats"]["per_n"]] == [10, 100]
    assert data["verdict"] in ("pass", "fail")
    with open(out / "summary.csv") as f:
        rows = list(csv.DictReader(f))
    assert [row["n"] for row in rows] == ["10", "100"]
    assert all(row["mean_pass"] in ("True", "False") for row in rows)
    assert [m["n"] for m in data["stationarity"]] == [10, 100]
    dumps = sorted(p.name for p in (out / "replicates").iterdir())
    assert dumps == ["n100_r0.csv", "n100_r1.csv", "n10_r0.csv", "n10_r1.csv"]
    with open(out / "replicates" / "n10_r1.csv") as f:
        dumped = list(csv.DictReader(f))
    assert list(dumped[0]) == ["t", "I", "Lambda", "A"]
    assert len(dumped) == 101
    text = (out / "report.txt").read_text().splitlines()
    assert text[0] == "fcltlab simulate"
    assert text[2].split()[:3] == ["n", "lambda_n", "t"]
    assert set(text[3]) <= {"-", " "}
    assert text[4].split()[0] == "10"


def test_simulate_is_deterministic(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert _simulate(a) == 0
    assert _simulate(b) == 0
    assert _simulate(c, "--workers", "2") == 0
    first = (a / "report.json").read_bytes()
    assert first == (b / "report.json").read_bytes()
    assert first == (c / "report.json").read_bytes()
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_simulate_with_trace(tmp_path):
    out = tmp_path / "trace"
    assert _simulate(out, "--trace-epsilon", "0.05") == 0
    trace = _report(out)["trace"]
    assert trace["ell"] >= 100
    assert len(trace["rows"]) == 2


def _suite_config(tmp_path, **keys):
    path = tmp_path / "suite.json"
    path.write_text(json.dumps({"suite_models": 4, "suite_draws": 5, "suite_max_states": 12, **keys}))
    return str(path)


def test_verify_random_suite(tmp_path):
    out = tmp_path / "verify"
    assert _run("verify", "--config", _suite_config(tmp_path), "--out", str(out)) == 0
    data = _report(out)
    assert len(data["models"]) == 4
    for name in ("frep", "operator_norm", "resolvent_identity", "sqrt_lambda_bound",
                 "sigma2_lambda_gap", "yosida", "abel_constant"):
        assert data["checks"][name]["passed"], name


def test_verify_fixed_size_family(tmp_path):
    out = tmp_path / "verify30"
    assert _run("verify", "--config", _suite_config(tmp_path, suite_models=2),
                "--model", "random-reversible(30)", "--out", str(out)) == 0
    assert {m["m"] for m in _report(out)["models"]} == {30}


def test_verify_two_state_closed_forms(tmp_path):
    out = tmp_path / "verify2"
    assert _run("verify", "--config", _suite_config(tmp_path, suite_max_states=2),
                "--out", str(out)) == 0
    data = _report(out)
    assert {m["m"] for m in data["models"]} == {2}
    assert data["checks"]["two_state_closed_form"]["passed"]


def test_verify_unattainable_tolerance(tmp_path):
    assert _run("verify", "--config", _suite_config(tmp_path), "--tol", "1e-30",
                "--out", str(tmp_path / "o")) == 2


def test_check_dependencies():
    assert _run("--check") == 0


def test_history_roundtrip(tmp_path, capsys):
    main(["--history"])
    assert "No history yet." in capsys.readouterr().out
    assert _run("exact", "--out", str(tmp_path / "o")) == 0
    main(["--history"])
    assert "exact" in capsys.readouterr().out


def test_no_history_flag(tmp_path):
    assert _run("exact", "--no-history", "--out", str(tmp_path / "o")) == 0
    assert not report._HISTORY_FILE.exists()


def test_missing_subcommand():
    assert _run() == 1
