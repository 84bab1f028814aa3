import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

import dcsbm as dc
from dcsbm.evaluation import (
    RESULT_COLUMNS,
    AgreementRecord,
    MethodResult,
    aggregate,
    gap_frame,
    gap_percent,
    results_from_frame,
    trend_report,
    write_plots,
)
from dcsbm.generator import suite_configs, write_suite


def test_agreement_example():
    est = dc.Assignment([0, 0, 1, 1], 2)
    truth = dc.Assignment([0, 1, 1, 1], 2)

    assert dc.agreement(est, truth) == 0.75
    assert AgreementRecord.of(est, truth).agreement == 0.75


@given(st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=12), st.permutations(range(6)))
def test_agreement_ignores_label_names(labels, permutation):
    a = dc.Assignment(labels, 6)
    relabeled = dc.Assignment([permutation[label] for label in labels], 6)

    assert dc.agreement(relabeled, a) == 1.0


def test_agreement_with_many_groups():
    truth = dc.Assignment([0, 1, 2, 3, 4, 5, 5], 6)
    est = dc.Assignment([5, 4, 3, 2, 1, 0, 1], 6)

    assert dc.agreement(est, truth) == pytest.approx(6 / 7)


def test_agreement_with_different_group_counts():
    assert dc.agreement(dc.Assignment([0, 0, 0, 0], 1), dc.Assignment([0, 0, 1, 1], 2)) == 0.5


def test_agreement_size_mismatch():
    with pytest.raises(dc.InvariantError):
        dc.agreement(dc.Assignment([0, 1], 2), dc.Assignment([0, 1, 1], 2))


def test_gap_percent():
    assert gap_percent(110.0, 100.0) == pytest.approx(10.0)
    assert gap_percent(100.0, 100.0) == 0.0

    with pytest.raises(dc.InvariantError):
        gap_percent(1.0, 0.0)


def _result(instance_id, method, objective, trial=0, **kwargs):
    return MethodResult(instance_id=instance_id, method=method, objective=objective, labels=(0, 1, 1), trial=trial, **kwargs)


def test_compute_gaps():
    results = [
        _result("a", "exact", 100.0, status="optimal", gap=0.0),
        _result("a", "em-ls1", 100.0, trial=0),
        _result("a", "em-ls1", 110.0, trial=1),
        _result("b", "exact", 50.0, status="time-limit", gap=4.0),
        _result("b", "em-ls2", 48.0),
    ]
    gaps = {(r.instance_id, r.method, r.trial): r for r in dc.compute_gaps(results)}

    assert gaps[("a", "exact", 0)].gap_pct == 0.0
    assert gaps[("a", "em-ls1", 0)].gap_pct == 0.0
    assert gaps[("a", "em-ls1", 1)].gap_pct == pytest.approx(10.0)
    # exact rows keep their own bound gap even when a heuristic found better
    assert gaps[("b", "exact", 0)].gap_pct == 4.0
    assert gaps[("b", "em-ls2", 0)].bks == 48.0
    assert not any(r.flagged for r in gaps.values())


def test_negative_reference_is_flagged():
    records = dc.compute_gaps([_result("a", "em-ls1", -10.0), _result("a", "em-ls2", -12.0)])

    assert all(record.flagged for record in records)


def test_rows_survive_a_frame():
    result = _result(
        "a", "em-ls2", 12.5, trial=3, bound=10.0, gap=1.0, iterations=4, converged=False, wall_time=0.25, agreement=0.5
    )
    frame = pd.DataFrame([result.to_row()], columns=RESULT_COLUMNS)

    assert frame.loc[0, "labels"] == "1 2 2"
    assert frame.loc[0, "time_ms"] == 250.0
    assert results_from_frame(frame) == [result]


def test_frames_without_result_columns():
    with pytest.raises(dc.ParseError, match="missing columns"):
        results_from_frame(pd.DataFrame({"a": [1], "b": [2]}))

    with pytest.raises(dc.ParseError, match="missing columns"):
        aggregate(pd.DataFrame({"id": ["a", "b", "c"]}), _manifest())


def test_bad_result_row_names_its_line():
    frame = _results()
    frame["objective"] = frame["objective"].astype(object)
    frame.loc[1, "objective"] = "lots"

    with pytest.raises(dc.ParseError, match="line 3") as excinfo:
        results_from_frame(frame)

    assert excinfo.value.line == 3


def _manifest():
    return pd.DataFrame(
        {
            "id": ["a", "b", "c"],
            "path": ["a.inst", "b.inst", "c.inst"],
            "suite": ["s1"] * 3,
            "n": [8, 8, 10],
            "K": [2, 2, 2],
            "omega_in": [0.9, 0.6, 0.9],
            "omega_out": [0.1, 0.4, 0.1],
            "strength": [None, None, None],
        }
    )


def _results():
    rows = [
        _result("a", "exact", 100.0, status="optimal", gap=0.0, nodes=10, agreement=1.0),
        _result("a", "em-ls1", 100.0, trial=0, agreement=1.0),
        _result("a", "em-ls1", 110.0, trial=1, agreement=0.5),
        _result("b", "exact", 80.0, status="time-limit", gap=5.0, nodes=30, agreement=0.75),
        _result("b", "em-ls1", 88.0, trial=0, agreement=0.5),
        _result("b", "em-ls1", 80.0, trial=1, agreement=0.625),
        _result("c", "exact", 50.0, status="optimal", gap=0.0, nodes=20, agreement=1.0),
        _result("c", "em-ls1", 55.0, trial=0, agreement=0.9),
        _result("c", "em-ls1", 60.0, trial=1, agreement=0.8),
    ]
    return pd.DataFrame([row.to_row() for row in rows], columns=RESULT_COLUMNS)


def test_aggregate():
    tables = aggregate(_results(), _manifest())

    assert set(tables) == {"exact", "heuristics", "agreement"}

    exact = tables["exact"].set_index(["n", "omega_in"])
    assert exact.loc[(8, 0.9), "opt"] == 1
    assert exact.loc[(8, 0.6), "opt"] == 0
    assert exact.loc[(8, 0.6), "gap"] == 5.0
    assert exact.loc[(10, 0.9), "nodes"] == 20

    heuristics = tables["heuristics"].set_index(["n", "omega_in"])
    assert heuristics.loc[(8, 0.9), "gap"] == pytest.approx(5.0)
    assert heuristics.loc[(8, 0.6), "gap"] == pytest.approx(5.0)
    assert heuristics.loc[(10, 0.9), "gap"] == pytest.approx(15.0)
    assert "strength" not in tables["heuristics"]

    agreement = tables["agreement"].set_index(["n", "omega_in"])
    assert agreement.loc[(8, 0.9), "em-ls1"] == pytest.approx(0.75)
    # the exact row wins the tie on instance b
    assert agreement.loc[(8, 0.6), "bks"] == pytest.approx(0.75)
    assert agreement.loc[(10, 0.9), "exact"] == 1.0


def test_aggregate_needs_every_instance():
    results = _results()

    with pytest.raises(dc.InvariantError):
        aggregate(results[results["id"] != "c"], _manifest())


def test_gap_frame():
    frame = gap_frame(_results())

    assert len(frame) == 9
    assert set(frame.columns) >= {"instance_id", "method", "gap_pct", "bks", "flagged"}


def test_trend_report():
    report = trend_report(_results(), _manifest())

    assert set(report.separation_correlation) == {8, 10}
    assert report.separation_correlation[8] == pytest.approx(1.0)
    assert math.isnan(report.separation_correlation[10])
    assert report.strength_correlation == {}
    assert report.ls2_minus_ls1_gap is None
    assert report.exact_minus_heuristic_agreement == pytest.approx(np.mean([0.25, 0.1875, 0.15]))


def test_write_plots(tmp_path):
    paths = write_plots(_results(), _manifest(), tmp_path)

    assert [path.name for path in paths] == ["agreement_vs_n.png", "time_by_method.png"]
    assert all(path.stat().st_size > 0 for path in paths)


def test_run_benchmark(tmp_path, brute_force):
    entries = suite_configs("custom", 1, replicates=2, custom=[{"n": 6, "K": 2, "strength": "high"}])
    write_suite(entries, tmp_path / "suite")

    budgets = dc.BenchmarkBudgets(time_limit=30, trials=3, no_timing=True)
    tables = dc.run_benchmark(tmp_path / "suite" / "manifest.csv", ["exact", "em-ls2"], budgets, tmp_path / "out")

    results = tables["results"]
    assert len(results) == 2 * (1 + 3)
    assert (results["time_ms"] == 0).all()
    assert results["agreement"].between(0, 1).all()

    for name in ("results", "exact", "heuristics", "agreement"):
        assert (tmp_path / "out" / "{}.csv".format(name)).exists()

    for instance_id, rows in results.groupby("id"):
        inst = dc.read_instance(tmp_path / "suite" / "{}.inst".format(instance_id))
        best = rows.loc[rows["method"] == "exact", "objective"].iloc[0]

        assert best == pytest.approx(brute_force(inst)[0], abs=1e-9)
        assert (rows["objective"] >= best - 1e-9).all()


def test_run_benchmark_rejects_unknown_methods(tmp_path):
    with pytest.raises(dc.InvariantError):
        dc.run_benchmark(tmp_path / "manifest.csv", ["simulated-annealing"], dc.BenchmarkBudgets(), tmp_path)


@pytest.fixture(scope="module")
def desk_benchmark(tmp_path_factory):
    """Exact and both local searches on the n <= 10 S1 desk cells and the K=2 n=10 S2 desk cells."""
    root = tmp_path_factory.mktemp("desk")

    entries = [entry for entry in suite_configs("s1-desk", 5, replicates=2) if entry.config.n <= 10]
    entries += [
        entry for entry in suite_configs("s2-desk", 6, replicates=6) if entry.config.K == 2 and entry.config.n == 10
    ]
    write_suite(entries, root / "suite")

    budgets = dc.BenchmarkBudgets(time_limit=60, trials=8, no_timing=True)
    tables = dc.run_benchmark(root / "suite" / "manifest.csv", ["exact", "em-ls1", "em-ls2"], budgets, root / "out")
    return tables["results"], pd.read_csv(root / "suite" / "manifest.csv")


def test_desk_suite_is_solved_to_optimality(desk_benchmark):
    results, manifest = desk_benchmark
    exact_rows = results[results["method"] == "exact"]

    assert len(exact_rows) == len(manifest) == 48 + 18
    assert (exact_rows["status"] == "optimal").all()
    assert (exact_rows["gap"] == 0).all()


def test_desk_suite_trends(desk_benchmark):
    report = trend_report(*desk_benchmark)

    assert set(report.separation_correlation) == {8, 10}
    assert np.mean(list(report.separation_correlation.values())) > 0
    assert set(report.strength_correlation) == {(2, 10)}
    assert report.strength_correlation[(2, 10)] > 0

    assert report.ls2_minus_ls1_gap <= 0
    assert report.exact_minus_heuristic_agreement >= 0
