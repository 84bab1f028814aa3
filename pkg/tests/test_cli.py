import json

import pandas as pd
import pytest

import dcsbm as dc
from dcsbm.cli import main


def _run(capsys, *args):
    code = main(["--threads", "1"] + [str(arg) for arg in args])
    out, err = capsys.readouterr()
    return code, out, err


def _payload(out):
    return json.loads(out.strip().splitlines()[-1])


def _error(err):
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture()
def suite(tmp_path, capsys):
    code, out, _ = _run(
        capsys,
        "--output-dir", tmp_path,
        "--seed", 4,
        "generate", "--suite", "custom", "--n", 6, "--K", 2, "--strength", "high", "--replicates", 2,
    )
    assert code == 0
    return _payload(out)


def test_generate(tmp_path, suite):
    assert suite["instances"] == 2
    assert suite["manifest"] == str(tmp_path / "custom" / "manifest.csv")

    manifest = pd.read_csv(suite["manifest"])
    assert manifest["id"].tolist() == ["custom-0000", "custom-0001"]
    assert (tmp_path / "custom" / "custom-0000.inst").exists()


def test_solve_exact(tmp_path, capsys, suite, brute_force):
    instance = tmp_path / "custom" / "custom-0000.inst"
    code, out, _ = _run(capsys, "--output-dir", tmp_path, "solve", instance)

    assert code == 0
    payload = _payload(out)
    assert payload["status"] == "optimal"
    assert payload["gap"] == 0.0
    assert payload["objective"] == pytest.approx(brute_force(dc.read_instance(instance))[0], abs=1e-9)

    solution = dc.read_solution(payload["solution"])
    assert solution.status is dc.SolveStatus.OPTIMAL
    assert pd.read_csv(payload["results"])["method"].tolist() == ["exact"]


def test_solve_em(tmp_path, capsys, suite):
    instance = tmp_path / "custom" / "custom-0001.inst"
    code, out, _ = _run(
        capsys, "--output-dir", tmp_path, "solve", "--method", "em-ls2", "--trials", 3, "--no-timing", instance
    )

    assert code == 0
    payload = _payload(out)
    assert payload["status"] == "feasible"
    assert payload["gap"] is None

    results = pd.read_csv(payload["results"])
    assert results["trial"].tolist() == [0, 1, 2]
    assert (results["time_ms"] == 0).all()
    assert payload["objective"] == pytest.approx(results["objective"].min())


def test_solve_reads_defaults_from_a_config_file(tmp_path, capsys, suite):
    config = tmp_path / "dcsbm.yaml"
    config.write_text("solve:\n  method: em-ls1\n  trials: 2\n")

    code, out, _ = _run(
        capsys, "--config", config, "--output-dir", tmp_path, "solve", tmp_path / "custom" / "custom-0000.inst"
    )

    assert code == 0
    results = pd.read_csv(_payload(out)["results"])
    assert results["method"].tolist() == ["em-ls1", "em-ls1"]


def test_config_must_be_a_mapping(tmp_path, capsys):
    config = tmp_path / "dcsbm.yaml"
    config.write_text("- solve\n- bench\n")

    code, _, err = _run(capsys, "--config", config, "generate")

    assert code == 2
    assert _error(err)["error"] == "ConfigError"


def test_missing_instance(tmp_path, capsys):
    code, out, err = _run(capsys, "solve", tmp_path / "nope.inst")

    assert code == 2
    assert out == ""
    assert "nope.inst" in _error(err)["message"]


def test_garbage_instance(tmp_path, capsys):
    path = tmp_path / "garbage.inst"
    path.write_text("not an instance\n")

    code, _, err = _run(capsys, "--output-dir", tmp_path, "solve", path)

    assert code == 1
    assert _error(err)["error"] == "ParseError"


def test_export_milp(tmp_path, capsys, suite):
    model = tmp_path / "model.lp"
    code, out, _ = _run(capsys, "export-milp", "--breakpoints", 4, tmp_path / "custom" / "custom-0000.inst", model)

    assert code == 0
    payload = _payload(out)
    assert model.exists()
    assert payload["cuts"] == str(tmp_path / "model.lp.cuts")
    assert payload["variables"] > 0 and payload["constraints"] > 0


def test_export_milp_needs_a_breakpoint(tmp_path, capsys, suite):
    code, _, err = _run(
        capsys, "export-milp", "--breakpoints", 0, tmp_path / "custom" / "custom-0000.inst", tmp_path / "m.lp"
    )

    assert code == 2
    error = _error(err)
    assert error["error"] == "ConfigError"
    assert "breakpoints=0 must be at least 1" in error["message"]
    assert not (tmp_path / "m.lp").exists()

    code, _, err = _run(
        capsys, "export-milp", "--epsilon", 0, tmp_path / "custom" / "custom-0000.inst", tmp_path / "m.lp"
    )
    assert code == 2
    assert "epsilon" in _error(err)["message"]


def test_eval_agreement(tmp_path, capsys, suite):
    instance = tmp_path / "custom" / "custom-0000.inst"
    _run(capsys, "--output-dir", tmp_path, "solve", instance)

    code, out, _ = _run(capsys, "eval", "agreement", tmp_path / "custom-0000.sol", instance)
    assert code == 0
    assert 0.5 <= _payload(out)["agreement"] <= 1.0

    code, out, _ = _run(capsys, "eval", "agreement", instance, instance)
    assert _payload(out)["agreement"] == 1.0


def test_eval_gap(tmp_path, capsys, suite):
    _run(capsys, "--output-dir", tmp_path, "solve", "--method", "em-ls1", "--trials", 3, tmp_path / "custom" / "custom-0000.inst")

    code, out, _ = _run(capsys, "--output-dir", tmp_path, "eval", "gap", tmp_path / "custom-0000.csv")

    assert code == 0
    payload = _payload(out)
    assert payload["rows"] == 3
    assert payload["flagged"] == 0

    gaps = pd.read_csv(tmp_path / "gaps.csv")
    assert gaps["gap_pct"].min() == 0.0


def test_eval_gap_rejects_a_malformed_table(tmp_path, capsys):
    table = tmp_path / "r.csv"
    table.write_text("a,b\n1,2\n")

    code, out, err = _run(capsys, "--output-dir", tmp_path, "eval", "gap", table)

    assert code == 1
    assert out == ""
    error = _error(err)
    assert error["error"] == "ParseError"
    assert "missing columns" in error["message"]
    assert not (tmp_path / "gaps.csv").exists()


def test_bench(tmp_path, capsys, suite):
    output = tmp_path / "bench"
    code, out, _ = _run(
        capsys,
        "--output-dir", output,
        "bench", "--manifest", suite["manifest"], "--methods", "exact,em-ls1", "--trials", 2, "--no-plots",
    )

    assert code == 0
    payload = _payload(out)
    assert payload["tables"] == ["agreement", "exact", "heuristics"]
    assert payload["plots"] == []

    results = pd.read_csv(output / "results.csv")
    assert len(results) == 2 * (1 + 2)
    assert set(results["method"]) == {"exact", "em-ls1"}

    trends = json.loads((output / "trends.json").read_text())
    assert trends["ls2_minus_ls1_gap"] is None
    assert set(trends["strength_correlation"]) == {"K2-n6"}


def test_bench_rejects_unknown_methods(tmp_path, capsys, suite):
    code, _, err = _run(capsys, "--output-dir", tmp_path, "bench", "--manifest", suite["manifest"], "--methods", "exact,tabu")

    assert code == 2
    assert "--methods" in _error(err)["message"]


def test_help(capsys):
    code, out, _ = _run(capsys, "--help")

    assert code == 0
    assert "Maximum-likelihood community detection" in out


def test_single_thread_runs_are_byte_identical(tmp_path, capsys):
    config = tmp_path / "dcsbm.yaml"
    config.write_text("generate:\n  custom:\n    - {n: 6, K: 2, strength: high}\n    - {n: 7, K: 2, omega-in: 0.9, omega-out: 0.1}\n")

    outputs = [tmp_path / "first", tmp_path / "second"]
    for output in outputs:
        code, _, _ = _run(
            capsys,
            "--config", config,
            "--output-dir", output,
            "--seed", 8,
            "bench", "--suite", "custom", "--replicates", 2, "--trials", 3, "--no-timing", "--no-plots",
        )
        assert code == 0

    first = sorted(path.relative_to(outputs[0]) for path in outputs[0].rglob("*") if path.is_file())
    second = sorted(path.relative_to(outputs[1]) for path in outputs[1].rglob("*") if path.is_file())

    assert first == second
    assert len(first) > 5
    assert [name for name in first if (outputs[0] / name).read_bytes() != (outputs[1] / name).read_bytes()] == []
