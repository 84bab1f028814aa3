import itertools
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.stats import spearmanr

from dcsbm import em, exact
from dcsbm.bases import Base
from dcsbm.exceptions import InvariantError, ParseError
from dcsbm.fields import Flag, Float, Integer
from dcsbm.instance import Assignment, read_instance
from dcsbm.utils import atomic_write

__all__ = (
    "agreement",
    "AgreementRecord",
    "GapRecord",
    "MethodResult",
    "BenchmarkBudgets",
    "gap_percent",
    "compute_gaps",
    "results_from_frame",
    "run_benchmark",
    "aggregate",
    "trend_report",
    "TrendReport",
    "gap_frame",
    "truth_agreement",
    "write_csv",
    "write_plots",
    "METHODS",
)

logger = logging.getLogger(__name__)

EXACT_METHODS = ("exact", "exact-nosbc")
HEURISTIC_METHODS = tuple(variant.value for variant in em.EmVariant)
METHODS = EXACT_METHODS + HEURISTIC_METHODS

PERMUTATION_LIMIT = 4
FULL_TIME_LIMIT = 600.0
CELL_KEYS = ("K", "n", "omega_in", "omega_out", "strength")
STRENGTH_RANK = {"low": 0, "medium": 1, "high": 2}

RESULT_COLUMNS = [
    "id",
    "method",
    "trial",
    "objective",
    "status",
    "bound",
    "gap",
    "nodes",
    "iterations",
    "converged",
    "time_ms",
    "agreement",
    "labels",
]


def _confusion(est: Assignment, truth: Assignment):
    K = max(est.K, truth.K)
    matrix = np.zeros((K, K), dtype=np.int64)
    np.add.at(matrix, (est.labels, truth.labels), 1)
    return matrix


def agreement(est: Assignment, truth: Assignment) -> float:
    """
    Fraction of vertices on which the two labelings agree under the best
    relabeling of ``est``.
    """
    if est.n != truth.n:
        raise InvariantError("cannot compare {} labels with {}".format(est.n, truth.n))
    if est.n == 0:
        return 1.0

    matrix = _confusion(est, truth)
    K = matrix.shape[0]

    if K <= PERMUTATION_LIMIT:
        rows = np.arange(K)
        best = max(int(matrix[rows, list(perm)].sum()) for perm in itertools.permutations(range(K)))
    else:
        rows, cols = linear_sum_assignment(matrix, maximize=True)
        best = int(matrix[rows, cols].sum())

    return best / est.n


@dataclass(frozen=True)
class AgreementRecord:
    estimated: Assignment
    truth: Assignment
    agreement: float

    @classmethod
    def of(cls, estimated: Assignment, truth: Assignment):
        return cls(estimated=estimated, truth=truth, agreement=agreement(estimated, truth))


def gap_percent(objective, reference) -> float:
    """``100 (OBJ - BKS) / BKS``."""
    if reference == 0:
        raise InvariantError("the gap is undefined for a best-known objective of 0")
    return 100.0 * (objective - reference) / reference


@dataclass(frozen=True)
class GapRecord:
    instance_id: str
    method: str
    trial: int
    objective: float
    bks: float
    gap_pct: float
    # the relative gap changes meaning when the reference is negative
    flagged: bool = False


@dataclass
class MethodResult:
    """One row of the long results table."""

    instance_id: str
    method: str
    objective: float
    labels: tuple
    trial: int = 0
    status: str = "feasible"
    bound: float = math.nan
    gap: float = math.nan
    nodes: int = 0
    iterations: int = 0
    converged: bool = True
    wall_time: float = 0.0
    agreement: float = math.nan

    def to_row(self):
        return {
            "id": self.instance_id,
            "method": self.method,
            "trial": self.trial,
            "objective": self.objective,
            "status": self.status,
            "bound": self.bound,
            "gap": self.gap,
            "nodes": self.nodes,
            "iterations": self.iterations,
            "converged": self.converged,
            "time_ms": 1000.0 * self.wall_time,
            "agreement": self.agreement,
            "labels": " ".join(str(label + 1) for label in self.labels),
        }

    @classmethod
    def from_row(cls, row):
        labels = str(row["labels"]).split() if isinstance(row["labels"], str) else []
        return cls(
            instance_id=str(row["id"]),
            method=str(row["method"]),
            objective=float(row["objective"]),
            labels=tuple(int(label) - 1 for label in labels),
            trial=int(row["trial"]),
            status=str(row["status"]),
            bound=float(row["bound"]),
            gap=float(row["gap"]),
            nodes=int(row["nodes"]),
            iterations=int(row["iterations"]),
            converged=bool(row["converged"]),
            wall_time=float(row["time_ms"]) / 1000.0,
            agreement=float(row["agreement"]),
        )


def _require_columns(frame: pd.DataFrame):
    missing = [column for column in RESULT_COLUMNS if column not in frame.columns]
    if missing:
        raise ParseError("results table is missing columns {}".format(missing))


def results_from_frame(frame: pd.DataFrame) -> List[MethodResult]:
    _require_columns(frame)
    results = []

    # line 1 is the header
    for line, row in enumerate(frame.to_dict("records"), start=2):
        try:
            results.append(MethodResult.from_row(row))
        except (TypeError, ValueError) as e:
            raise ParseError("bad results row: {}".format(e), line=line) from None

    return results


def compute_gaps(results: Iterable[MethodResult]) -> List[GapRecord]:
    """
    Heuristic rows get their gap to the instance's best-known objective, the
    lowest objective any row reports for it. Exact rows keep their own
    upper/lower bound gap.
    """
    records = []
    ordered = sorted(results, key=lambda r: r.instance_id)

    for instance_id, rows in itertools.groupby(ordered, key=lambda r: r.instance_id):
        rows = list(rows)
        bks = min(row.objective for row in rows)

        for row in rows:
            if row.method in EXACT_METHODS:
                gap = row.gap
            else:
                gap = gap_percent(row.objective, bks)

            records.append(
                GapRecord(
                    instance_id=instance_id,
                    method=row.method,
                    trial=row.trial,
                    objective=row.objective,
                    bks=bks,
                    gap_pct=gap,
                    flagged=bks < 0,
                )
            )

    return records


class BenchmarkBudgets(Base):
    time_limit = Float().min(0).default(60.0)
    trials = Integer().min(1).default(50)
    estep_time_limit = Float().min(0).default(60.0)
    seed = Integer().min(0).default(0)
    threads = Integer().min(1).default(1)
    full_budgets = Flag().default(False)
    no_timing = Flag().default(False)

    @property
    def exact_time_limit(self):
        return FULL_TIME_LIMIT if self.full_budgets else self.time_limit


# -- running --------------------------------------------------------------------------------


def truth_agreement(inst, labels):
    if inst.ground_truth is None:
        return math.nan
    return agreement(Assignment(labels, inst.K), inst.ground_truth)


def _run_method(instance_id, inst, method, budgets: BenchmarkBudgets) -> List[MethodResult]:
    if method in EXACT_METHODS:
        config = exact.ExactConfig(
            time_limit=budgets.exact_time_limit,
            use_sbc=method == "exact",
            seed=budgets.seed,
        )
        report = exact.solve_exact(inst, config)
        labels = tuple(report.assignment.labels.tolist())

        return [
            MethodResult(
                instance_id=instance_id,
                method=method,
                objective=report.objective,
                labels=labels,
                status=report.status.value,
                bound=report.bound,
                gap=100.0 * report.gap,
                nodes=report.nodes,
                wall_time=report.wall_time,
                agreement=truth_agreement(inst, labels),
            )
        ]

    config = em.EmConfig(
        variant=method,
        trials=budgets.trials,
        seed=budgets.seed,
        estep_time_limit=budgets.estep_time_limit,
    )
    trials, _ = em.run_trials(inst, config)

    return [
        MethodResult(
            instance_id=instance_id,
            method=method,
            objective=trial.objective,
            labels=tuple(trial.assignment.labels.tolist()),
            trial=index,
            iterations=trial.iterations,
            converged=trial.converged,
            wall_time=trial.wall_time,
            agreement=truth_agreement(inst, trial.assignment.labels),
        )
        for index, trial in enumerate(trials)
    ]


def _bench_instance(job):
    instance_id, path, methods, budgets = job
    inst = read_instance(path)
    rows = []

    for method in methods:
        logger.info("%s: running %s", instance_id, method)
        rows.extend(_run_method(instance_id, inst, method, budgets))

    return rows


def write_csv(frame: pd.DataFrame, path):
    with atomic_write(path, "w", encoding="utf-8", newline="") as handle:
        frame.to_csv(handle, index=False, lineterminator="\n")


def run_benchmark(manifest_path, methods, budgets: BenchmarkBudgets, output_dir) -> Dict[str, pd.DataFrame]:
    """
    Run ``methods`` on every instance of a suite manifest and write
    ``results.csv`` plus the summary tables into ``output_dir``.
    """
    unknown = sorted(set(methods) - set(METHODS))
    if unknown:
        raise InvariantError("unknown methods {}, expected some of {}".format(unknown, list(METHODS)))

    manifest_path = Path(manifest_path)
    manifest = pd.read_csv(manifest_path)
    output_dir = Path(output_dir)

    jobs = [
        (row["id"], manifest_path.parent / row["path"], list(methods), budgets)
        for row in manifest.to_dict("records")
    ]
    logger.info("benchmark: %d instances x %d methods", len(jobs), len(methods))

    if budgets.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=budgets.threads) as pool:
            batches = list(pool.map(_bench_instance, jobs))
    else:
        batches = [_bench_instance(job) for job in jobs]

    rows = [result.to_row() for batch in batches for result in batch]
    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)

    if budgets.no_timing:
        results["time_ms"] = 0.0

    results = results.sort_values(["id", "method", "trial"], kind="stable").reset_index(drop=True)
    write_csv(results, output_dir / "results.csv")

    tables = aggregate(results, manifest)
    for name, table in tables.items():
        write_csv(table, output_dir / "{}.csv".format(name))

    return dict(results=results, **tables)


# -- folding --------------------------------------------------------------------------------


def _cell_keys(manifest: pd.DataFrame):
    return [key for key in CELL_KEYS if key in manifest and manifest[key].notna().any()]


def gap_frame(results: pd.DataFrame) -> pd.DataFrame:
    records = compute_gaps(results_from_frame(results))
    return pd.DataFrame([asdict(record) for record in records])


def _bks_rows(results: pd.DataFrame) -> pd.DataFrame:
    """Per instance, the row holding the best objective; exact rows win ties."""
    ranked = results.assign(_exact=~results["method"].isin(EXACT_METHODS))
    ranked = ranked.sort_values(["id", "objective", "_exact", "method", "trial"], kind="stable")
    return ranked.groupby("id", sort=True).head(1).drop(columns="_exact")


def aggregate(results: pd.DataFrame, manifest: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    """
    Fold the long results table into the per-cell summaries:

    * ``exact``: optimal count, mean gap, mean time and mean nodes per exact method,
    * ``heuristics``: mean gap and mean time per EM variant,
    * ``agreement``: mean agreement with the ground truth per method and of the BKS.
    """
    _require_columns(results)
    missing = sorted(set(manifest["id"]) - set(results["id"]))
    if missing:
        raise InvariantError("no results for manifest rows {}".format(missing))

    keys = _cell_keys(manifest)
    cells = manifest[["id"] + keys]

    gaps = gap_frame(results).rename(columns={"instance_id": "id"})
    merged = results.merge(gaps[["id", "method", "trial", "gap_pct", "flagged"]], on=["id", "method", "trial"])
    merged = merged.merge(cells, on="id")

    tables = {}

    exact_rows = merged[merged["method"].isin(EXACT_METHODS)]
    tables["exact"] = (
        exact_rows.assign(optimal=exact_rows["status"] == "optimal")
        .groupby(keys + ["method"], dropna=False, sort=True)
        .agg(
            instances=("id", "nunique"),
            opt=("optimal", "sum"),
            gap=("gap_pct", "mean"),
            time_ms=("time_ms", "mean"),
            nodes=("nodes", "mean"),
        )
        .reset_index()
    )

    heuristic_rows = merged[merged["method"].isin(HEURISTIC_METHODS)]
    tables["heuristics"] = (
        heuristic_rows.groupby(keys + ["method"], dropna=False, sort=True)
        .agg(
            instances=("id", "nunique"),
            gap=("gap_pct", "mean"),
            time_ms=("time_ms", "mean"),
            flagged=("flagged", "any"),
        )
        .reset_index()
    )

    per_method = (
        merged.groupby(keys + ["method"], dropna=False, sort=True)["agreement"].mean().unstack("method")
    )
    bks = _bks_rows(results).merge(cells, on="id")
    per_method["bks"] = bks.groupby(keys, dropna=False, sort=True)["agreement"].mean()
    per_method.columns.name = None
    tables["agreement"] = per_method.reset_index()

    return tables


@dataclass
class TrendReport:
    separation_correlation: Dict[int, float]
    strength_correlation: Dict[tuple, float]
    ls2_minus_ls1_gap: Optional[float]
    exact_minus_heuristic_agreement: Optional[float]


def _spearman(x, y):
    with warnings.catch_warnings():
        # constant inputs give nan, which is what we want to report
        warnings.simplefilter("ignore")
        result = spearmanr(x, y)
    return float(result[0])


def trend_report(results: pd.DataFrame, manifest: pd.DataFrame) -> TrendReport:
    _require_columns(results)
    bks = _bks_rows(results).merge(manifest, on="id")

    separation = {}
    if "omega_in" in bks and bks["omega_in"].notna().any():
        s1 = bks[bks["omega_in"].notna()]
        for n, group in s1.groupby("n", sort=True):
            separation[int(n)] = _spearman((group["omega_in"] - group["omega_out"]).abs(), group["agreement"])

    strength = {}
    if "strength" in bks and bks["strength"].notna().any():
        s2 = bks[bks["strength"].notna()]
        for (K, n), group in s2.groupby(["K", "n"], sort=True):
            strength[(int(K), int(n))] = _spearman(group["strength"].map(STRENGTH_RANK), group["agreement"])

    gaps = gap_frame(results)
    mean_gaps = gaps.groupby(["instance_id", "method"])["gap_pct"].mean().unstack("method")

    ls2_minus_ls1 = None
    if {"em-ls1", "em-ls2"} <= set(mean_gaps.columns):
        ls2_minus_ls1 = float((mean_gaps["em-ls2"] - mean_gaps["em-ls1"]).mean())

    exact_minus_heuristic = None
    heuristic = results[results["method"].isin(HEURISTIC_METHODS)]
    if not heuristic.empty:
        per_instance = heuristic.groupby("id")["agreement"].mean()
        reference = bks.set_index("id")["agreement"]
        exact_minus_heuristic = float((reference - per_instance).dropna().mean())

    return TrendReport(
        separation_correlation=separation,
        strength_correlation=strength,
        ls2_minus_ls1_gap=ls2_minus_ls1,
        exact_minus_heuristic_agreement=exact_minus_heuristic,
    )


def write_plots(results: pd.DataFrame, manifest: pd.DataFrame, output_dir) -> List[Path]:
    """Agreement against n and mean time per method against n, as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    merged = results.merge(manifest[["id", "n"]], on="id")
    paths = []

    for column, filename, ylabel, log in (
        ("agreement", "agreement_vs_n.png", "mean agreement", False),
        ("time_ms", "time_by_method.png", "mean time (ms)", True),
    ):
        table = merged.groupby(["n", "method"], sort=True)[column].mean().unstack("method")

        fig, ax = plt.subplots(figsize=(6, 4))
        for method in table.columns:
            ax.plot(table.index, table[method], marker="o", label=method)

        ax.set_xlabel("n")
        ax.set_ylabel(ylabel)
        if log and (table > 0).all().all():
            ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()

        path = output_dir / filename
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    return paths
