import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import click
import pandas as pd
import yaml
from rich.console import Console
from rich.logging import RichHandler

from dcsbm import em, evaluation, exact, generator, relaxation
from dcsbm.bases import Base
from dcsbm.exceptions import ConfigError, DcsbmException, InvariantError, ParseError
from dcsbm.fields import Float, Integer, Of
from dcsbm.instance import read_instance, read_solution, write_solution
from dcsbm.utils import atomic_write

__all__ = ("cli", "main", "run", "CliConfig", "ExportConfig")

logger = logging.getLogger(__name__)

SUITE_NAMES = ["s1", "s1-desk", "s2", "s2-desk", "custom"]
SOLVE_METHODS = ["exact"] + [variant.value for variant in em.EmVariant]


class CliConfig(Base):
    seed = Integer().min(0).default(0)
    threads = Integer().min(1).default(1)
    output_dir = Of(str, Path).default(".")
    verbosity = Integer().between(0, 2).default(0)

    @property
    def output_path(self):
        return Path(self.output_dir)


class ExportConfig(Base):
    breakpoints = Integer().min(1).default(relaxation.DEFAULT_BREAKPOINTS)
    epsilon = Float().positive().default(relaxation.DEFAULT_EPSILON)


def _configure_logging(verbosity):
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    handler = RichHandler(console=Console(stderr=True), show_path=False)

    root = logging.getLogger("dcsbm")
    root.handlers[:] = [handler]
    root.setLevel(level)


def _normalize_keys(mapping):
    normalized = {}

    for key, value in mapping.items():
        if isinstance(value, dict):
            # subcommand sections keep their names
            normalized[key] = _normalize_keys(value)
        else:
            normalized[str(key).replace("-", "_")] = value

    return normalized


def _load_config(ctx, param, value):
    if value is None:
        return None

    try:
        with open(value, encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except yaml.YAMLError as e:
        raise ConfigError("could not parse {}: {}".format(value, e)) from None

    if not isinstance(data, dict):
        raise ConfigError("{} must hold a mapping".format(value))

    data = _normalize_keys(data)
    ctx.default_map = data
    ctx.meta["dcsbm.config"] = data
    return value


def _emit(payload):
    click.echo(json.dumps(payload, sort_keys=True))


def _switch(value):
    return value == "on"


@click.group(context_settings=dict(help_option_names=["-h", "--help"]))
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    callback=_load_config,
    is_eager=True,
    expose_value=False,
    help="YAML file with defaults for any flag, nested per subcommand.",
)
@click.option("--seed", type=int, default=0, show_default=True, help="Root seed for every random draw.")
@click.option(
    "--threads",
    type=int,
    default=lambda: os.cpu_count() or 1,
    show_default="machine parallelism",
    help="Worker processes; 1 gives bitwise-reproducible reports.",
)
@click.option("--output-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
@click.pass_context
def cli(ctx, seed, threads, output_dir, verbose):
    """Maximum-likelihood community detection for the degree-corrected block model."""
    ctx.obj = CliConfig(seed=seed, threads=threads, output_dir=output_dir, verbosity=min(verbose, 2))
    _configure_logging(ctx.obj.verbosity)


# -- generate -------------------------------------------------------------------------------


@cli.command()
@click.option("--suite", type=click.Choice(SUITE_NAMES), default="s1-desk", show_default=True)
@click.option("--replicates", type=int, default=generator.REPLICATES, show_default=True)
@click.option("--reject-isolated/--allow-isolated", default=True, show_default=True)
@click.option("--reject-empty-truth/--allow-empty-truth", default=True, show_default=True)
@click.option("--n", "n", type=int, help="custom suite: number of vertices.")
@click.option("--K", "K", type=int, help="custom suite: number of communities.")
@click.option("--omega-in", type=float, help="custom suite: S1-style diagonal level.")
@click.option("--omega-out", type=float, help="custom suite: S1-style off-diagonal level.")
@click.option("--strength", type=click.Choice([s.value for s in generator.Strength]), help="custom suite: S2 level.")
@click.pass_context
def generate(ctx, suite, replicates, reject_isolated, reject_empty_truth, n, K, omega_in, omega_out, strength):
    """Generate a suite of instances and its manifest.csv."""
    config = ctx.obj
    custom = None

    if suite == "custom":
        custom = ctx.find_root().meta.get("dcsbm.config", {}).get("generate", {}).get("custom")

        if n is not None:
            cell = dict(n=n, K=K if K is not None else 2)
            if strength is not None:
                cell["strength"] = strength
            else:
                cell.update(omega_in=omega_in, omega_out=omega_out)
            custom = [cell]

    entries = generator.suite_configs(
        suite,
        config.seed,
        replicates=replicates,
        reject_isolated=reject_isolated,
        reject_empty_truth=reject_empty_truth,
        custom=custom,
    )
    target = config.output_path / suite
    manifest = generator.write_suite(entries, target)

    _emit({"manifest": str(target / "manifest.csv"), "instances": len(manifest)})


# -- solve ----------------------------------------------------------------------------------


def _solve_exact(inst, instance_id, options, config):
    exact_config = exact.ExactConfig(
        time_limit=options["time_limit"],
        vertex_order=options["vertex_order"],
        use_sbc=_switch(options["sbc"]),
        warm_start=options["warm_start"],
        threads=config.threads,
        seed=config.seed,
        trace=options["trace"],
    )
    report = exact.solve_exact(inst, exact_config)
    labels = tuple(report.assignment.labels.tolist())

    result = evaluation.MethodResult(
        instance_id=instance_id,
        method="exact" if exact_config.use_sbc else "exact-nosbc",
        objective=report.objective,
        labels=labels,
        status=report.status.value,
        bound=report.bound,
        gap=100.0 * report.gap,
        nodes=report.nodes,
        wall_time=report.wall_time,
        agreement=evaluation.truth_agreement(inst, labels),
    )
    return report.solution(), [result]


def _solve_em(inst, instance_id, options, config):
    em_config = em.EmConfig(
        variant=options["method"],
        trials=options["trials"],
        seed=config.seed,
        estep_time_limit=options["estep_time_limit"],
        threads=config.threads,
    )
    trials, summary = em.run_trials(inst, em_config, bks=options["bks"])

    results = []
    for index, trial in enumerate(trials):
        labels = tuple(trial.assignment.labels.tolist())
        results.append(
            evaluation.MethodResult(
                instance_id=instance_id,
                method=em_config.variant.value,
                objective=trial.objective,
                labels=labels,
                trial=index,
                gap=math.nan if options["bks"] is None else evaluation.gap_percent(trial.objective, options["bks"]),
                iterations=trial.iterations,
                converged=trial.converged,
                wall_time=trial.wall_time,
                agreement=evaluation.truth_agreement(inst, labels),
            )
        )

    return trials[summary.best_trial].solution(), results


@cli.command()
@click.argument("instance", type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(SOLVE_METHODS), default="exact", show_default=True)
@click.option("--time-limit", type=float, default=60.0, show_default=True, help="Exact solver limit in seconds.")
@click.option("--trials", type=int, default=50, show_default=True, help="EM restarts.")
@click.option("--sbc", type=click.Choice(["on", "off"]), default="on", show_default=True)
@click.option(
    "--vertex-order", type=click.Choice([o.value for o in exact.VertexOrder]), default="degree", show_default=True
)
@click.option("--estep-time-limit", type=float, default=60.0, show_default=True, help="em-exact E-step limit.")
@click.option("--warm-start/--no-warm-start", default=True, show_default=True)
@click.option("--trace", type=click.Path(dir_okay=False), help="JSON-lines progress trace of the exact search.")
@click.option("--bks", type=float, help="Reference objective for EM gaps.")
@click.option("--no-timing", is_flag=True, help="Write zero for every time field.")
@click.pass_context
def solve(ctx, instance, **options):
    """Solve one instance; writes <stem>.sol and <stem>.csv into the output directory."""
    config = ctx.obj
    inst = read_instance(instance)
    instance_id = Path(instance).stem

    if options["method"] == "exact":
        solution, results = _solve_exact(inst, instance_id, options, config)
    else:
        solution, results = _solve_em(inst, instance_id, options, config)

    frame = pd.DataFrame([result.to_row() for result in results], columns=evaluation.RESULT_COLUMNS)
    if options["no_timing"]:
        frame["time_ms"] = 0.0

    solution_path = config.output_path / "{}.sol".format(instance_id)
    csv_path = config.output_path / "{}.csv".format(instance_id)
    write_solution(solution, solution_path)
    evaluation.write_csv(frame, csv_path)

    best = results[0] if options["method"] == "exact" else min(results, key=lambda r: r.objective)
    _emit(
        {
            "objective": solution.objective,
            "status": solution.status.value,
            "gap": None if math.isnan(best.gap) else best.gap,
            "solution": str(solution_path),
            "results": str(csv_path),
        }
    )


# -- export-milp ----------------------------------------------------------------------------


@cli.command("export-milp")
@click.argument("instance", type=click.Path(exists=True, dir_okay=False))
@click.argument("model", type=click.Path(dir_okay=False))
@click.option("--breakpoints", type=int, default=relaxation.DEFAULT_BREAKPOINTS, show_default=True)
@click.option("--epsilon", type=float, default=relaxation.DEFAULT_EPSILON, show_default=True)
@click.option("--sbc", type=click.Choice(["on", "off"]), default="on", show_default=True)
def export_milp(instance, model, breakpoints, epsilon, sbc):
    """Write the MILP in LP format plus the <model>.cuts separation recipe."""
    options = ExportConfig(breakpoints=breakpoints, epsilon=epsilon)

    inst = read_instance(instance)
    bounds = relaxation.build_bounds(inst.graph)
    points = relaxation.initial_breakpoints(bounds, options.breakpoints)
    problem = relaxation.export_milp(inst, bounds, points, options.epsilon, _switch(sbc), model)

    _emit(
        {
            "model": str(model),
            "cuts": str(relaxation.recipe_path(model)),
            "variables": len(problem.variables()),
            "constraints": len(problem.constraints),
        }
    )


# -- eval -----------------------------------------------------------------------------------


@cli.group("eval")
def evaluate():
    """Agreement and gap metrics on existing outputs."""


def _labels_from(path):
    """Labels of a solution file, or the ground truth of an instance file."""
    try:
        return read_solution(path).assignment
    except ParseError:
        inst = read_instance(path)

    if inst.ground_truth is None:
        raise InvariantError("{} has no ground truth".format(path))
    return inst.ground_truth


@evaluate.command("agreement")
@click.argument("estimate", type=click.Path(exists=True, dir_okay=False))
@click.argument("truth", type=click.Path(exists=True, dir_okay=False))
def eval_agreement(estimate, truth):
    """Agreement between an estimated labeling and the truth (solution or instance files)."""
    _emit({"agreement": evaluation.agreement(_labels_from(estimate), _labels_from(truth))})


def _read_results(path):
    try:
        return pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ParseError("{}: {}".format(path, e)) from None


@evaluate.command("gap")
@click.argument("results", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def eval_gap(ctx, results):
    """Gaps to the best-known objective for a results CSV; writes gaps.csv."""
    frame = evaluation.gap_frame(_read_results(results))
    path = ctx.obj.output_path / "gaps.csv"
    evaluation.write_csv(frame, path)

    _emit({"gaps": str(path), "rows": len(frame), "flagged": int(frame["flagged"].sum()) if len(frame) else 0})


# -- bench ----------------------------------------------------------------------------------


def _methods(value):
    methods = [method.strip() for method in value.split(",") if method.strip()]
    unknown = [method for method in methods if method not in evaluation.METHODS]

    if not methods or unknown:
        raise click.BadParameter(
            "expected a comma-separated subset of {}".format(",".join(evaluation.METHODS)),
            param_hint="--methods",
        )
    return methods


@cli.command()
@click.option("--suite", type=click.Choice(SUITE_NAMES), default="s1-desk", show_default=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), help="Use an existing suite.")
@click.option("--methods", default="exact,em-ls1,em-ls2", show_default=True)
@click.option("--replicates", type=int, default=generator.REPLICATES, show_default=True)
@click.option("--time-limit", type=float, default=60.0, show_default=True)
@click.option("--trials", type=int, default=50, show_default=True)
@click.option("--estep-time-limit", type=float, default=60.0, show_default=True)
@click.option("--full-budgets", is_flag=True, help="600 s exact time limit.")
@click.option("--no-timing", is_flag=True, help="Write zero for every time field.")
@click.option("--plots/--no-plots", default=True, show_default=True)
@click.pass_context
def bench(ctx, suite, manifest, methods, replicates, time_limit, trials, estep_time_limit, full_budgets, no_timing, plots):
    """Run methods over a suite and write results.csv, summary tables and plots."""
    config = ctx.obj
    methods = _methods(methods)
    output = config.output_path

    if manifest is None:
        custom = ctx.find_root().meta.get("dcsbm.config", {}).get("generate", {}).get("custom")
        entries = generator.suite_configs(suite, config.seed, replicates=replicates, custom=custom)
        generator.write_suite(entries, output / "instances")
        manifest = output / "instances" / "manifest.csv"

    budgets = evaluation.BenchmarkBudgets(
        time_limit=time_limit,
        trials=trials,
        estep_time_limit=estep_time_limit,
        seed=config.seed,
        threads=config.threads,
        full_budgets=full_budgets,
        no_timing=no_timing,
    )
    tables = evaluation.run_benchmark(manifest, methods, budgets, output)

    manifest_frame = pd.read_csv(manifest)
    trends = evaluation.trend_report(tables["results"], manifest_frame)
    with atomic_write(output / "trends.json", "w", encoding="utf-8") as handle:
        payload = asdict(trends)
        payload["strength_correlation"] = {
            "K{}-n{}".format(*key): value for key, value in trends.strength_correlation.items()
        }
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")

    written = []
    if plots:
        written = [str(path) for path in evaluation.write_plots(tables["results"], manifest_frame, output)]

    _emit({"results": str(output / "results.csv"), "tables": sorted(set(tables) - {"results"}), "plots": written})


# -- entry points ---------------------------------------------------------------------------


def _report(error, message):
    click.echo(json.dumps({"error": error, "message": message}), err=True)


def main(argv=None) -> int:
    try:
        result = cli.main(args=argv, prog_name="dcsbm", standalone_mode=False)
    except click.ClickException as e:
        _report(e.__class__.__name__, e.format_message())
        return e.exit_code
    except click.Abort:
        _report("Abort", "aborted")
        return 1
    except ConfigError as e:
        _report(e.__class__.__name__, str(e))
        return 2
    except (DcsbmException, OSError) as e:
        logger.debug("command failed", exc_info=True)
        _report(e.__class__.__name__, str(e))
        return 1

    # --help and friends return their exit code instead of None
    return result if isinstance(result, int) else 0


def run():
    sys.exit(main())
