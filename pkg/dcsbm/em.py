import enum
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import xlogy

from dcsbm.bases import Base
from dcsbm.exceptions import DegenerateGraphError, TimeLimitReached
from dcsbm.fields import Choice, Float, Integer
from dcsbm.instance import AffinityMatrix, Assignment, Instance, Solution, SolveStatus
from dcsbm.likelihood import (
    BlockStats,
    _optimal_omega,
    constant_term,
    m_step,
    move_delta,
    profile_log_likelihood,
    vertex_links,
)
from dcsbm.utils import derive_seed, make_rng

__all__ = (
    "EmVariant",
    "EmConfig",
    "TrialResult",
    "TrialSummary",
    "em_ls1",
    "em_ls2",
    "em_exact",
    "run_trial",
    "run_trials",
)

logger = logging.getLogger(__name__)

MOVE_THRESHOLD = 1e-12
CONVERGENCE_THRESHOLD = 1e-9


class EmVariant(str, enum.Enum):
    LS1 = "em-ls1"
    LS2 = "em-ls2"
    EXACT = "em-exact"


class EmConfig(Base):
    variant = Choice(EmVariant).default(EmVariant.LS2)
    trials = Integer().min(1).default(50)
    seed = Integer().min(0).default(0)
    max_relocations = Integer().min(1).default(10_000)
    estep_time_limit = Float().min(0).default(60.0)
    threads = Integer().min(1).default(1)


@dataclass
class TrialResult:
    assignment: Assignment
    omega: AffinityMatrix
    objective: float
    iterations: int
    wall_time: float
    converged: bool
    history: List[float] = field(default_factory=list)

    def solution(self) -> Solution:
        return Solution(
            objective=self.objective, status=SolveStatus.FEASIBLE, assignment=self.assignment, omega=self.omega
        )


@dataclass
class TrialSummary:
    mean_objective: float
    min_objective: float
    mean_wall_time: float
    best_trial: int
    mean_gap: Optional[float] = None


def _require_edges(inst):
    if inst.graph.m == 0:
        raise DegenerateGraphError("EM needs a graph with at least one edge")


def _random_labels(inst: Instance, rng):
    return rng.integers(0, inst.K, size=inst.graph.n).astype(np.int64)


def _objective(g, stats, constant):
    return -(profile_log_likelihood(g, stats) + constant)


class _Trial:
    """Bookkeeping shared by the variants: labels, block statistics and the history."""

    def __init__(self, inst: Instance, rng, config: EmConfig):
        _require_edges(inst)

        self.inst = inst
        self.graph = inst.graph
        self.config = config
        self.constant = constant_term(self.graph)
        self.started = time.perf_counter()

        self.labels = _random_labels(inst, rng)
        self.stats = BlockStats.from_assignment(self.graph, Assignment(self.labels, inst.K))
        self.objective = _objective(self.graph, self.stats, self.constant)
        self.history = [self.objective]
        self.omega = None
        self.iterations = 0
        self.relocations = 0
        self.converged = True

    def relocate(self, vertex, source, target, links):
        self.stats.move(
            source, target, links, int(self.graph.adj[vertex, vertex]), int(self.graph.degrees[vertex])
        )
        self.labels[vertex] = target
        self.relocations += 1

    @property
    def exhausted(self):
        return self.relocations >= self.config.max_relocations

    def record(self):
        """Close an outer iteration; returns True while the objective still improves."""
        self.iterations += 1
        current = _objective(self.graph, self.stats, self.constant)
        improvement = self.objective - current

        self.objective = current
        self.history.append(current)

        logger.debug("iteration %d objective %.9g", self.iterations, current)
        return improvement > CONVERGENCE_THRESHOLD

    def result(self) -> TrialResult:
        assignment = Assignment(self.labels.copy(), self.inst.K)
        stats = BlockStats.from_assignment(self.graph, assignment)

        return TrialResult(
            assignment=assignment,
            omega=m_step(self.graph, assignment),
            objective=_objective(self.graph, stats, self.constant),
            iterations=self.iterations,
            wall_time=time.perf_counter() - self.started,
            converged=self.converged,
            history=self.history,
        )


def _fixed_affinity_gains(trial: _Trial, omega, vertex, links):
    """Vertex ``vertex``'s contribution to the core under each label, with the affinity matrix fixed."""
    g = trial.graph
    degree = float(g.degrees[vertex])
    source = trial.labels[vertex]

    others = trial.stats.kappa.astype(float)
    others[source] -= degree
    expected = degree * others / (2.0 * g.m)

    loops = float(g.adj[vertex, vertex])
    diagonal = np.diag(omega)
    self_term = 0.5 * (xlogy(loops, diagonal) - g.expected[vertex, vertex] * diagonal)

    with np.errstate(divide="ignore", invalid="ignore"):
        return xlogy(links[None, :].astype(float), omega).sum(axis=1) - omega @ expected + self_term


def em_ls1(inst: Instance, rng, config: Optional[EmConfig] = None) -> TrialResult:
    config = config or EmConfig(variant=EmVariant.LS1)
    trial = _Trial(inst, rng, config)
    K = inst.K

    while True:
        trial.omega = omega = _optimal_omega(trial.graph, trial.stats)
        moved = True

        while moved and not trial.exhausted:
            moved = False

            for vertex in range(trial.graph.n):
                links = vertex_links(trial.graph, trial.labels, vertex, K)
                gains = _fixed_affinity_gains(trial, omega, vertex, links)

                for target in range(K):
                    source = int(trial.labels[vertex])
                    if target != source and gains[target] - gains[source] > MOVE_THRESHOLD:
                        trial.relocate(vertex, source, target, links)
                        moved = True

        if not trial.record():
            break
        if trial.exhausted:
            trial.converged = False
            break

    return trial.result()


def em_ls2(inst: Instance, rng, config: Optional[EmConfig] = None) -> TrialResult:
    config = config or EmConfig(variant=EmVariant.LS2)
    trial = _Trial(inst, rng, config)
    g, K = trial.graph, inst.K

    while True:
        moved = False

        for vertex in range(g.n):
            links = vertex_links(g, trial.labels, vertex, K)
            loops, degree = int(g.adj[vertex, vertex]), int(g.degrees[vertex])

            for target in range(K):
                source = int(trial.labels[vertex])
                if target == source:
                    continue

                if move_delta(g, trial.stats, source, target, links, loops, degree) > MOVE_THRESHOLD:
                    trial.relocate(vertex, source, target, links)
                    moved = True

        improving = trial.record()

        if trial.exhausted:
            trial.converged = False
            break
        if not moved or not improving:
            break

    return trial.result()


def em_exact(inst: Instance, rng, config: Optional[EmConfig] = None) -> TrialResult:
    from dcsbm.exact import ExactConfig, VertexOrder, solve_estep_exact

    config = config or EmConfig(variant=EmVariant.EXACT)
    trial = _Trial(inst, rng, config)
    estep = ExactConfig(time_limit=config.estep_time_limit, vertex_order=VertexOrder.INPUT)

    while True:
        current = Assignment(trial.labels.copy(), inst.K)
        omega = m_step(trial.graph, current)

        try:
            found = solve_estep_exact(inst, omega, estep, start=current)
        except TimeLimitReached as stop:
            found = stop.best or current
            trial.converged = False

        trial.labels = found.labels.copy()
        trial.stats = BlockStats.from_assignment(trial.graph, found)

        if not trial.record() or not trial.converged:
            break
        if trial.iterations >= config.max_relocations:
            trial.converged = False
            break

    return trial.result()


VARIANTS = {
    EmVariant.LS1: em_ls1,
    EmVariant.LS2: em_ls2,
    EmVariant.EXACT: em_exact,
}


def run_trial(inst: Instance, config: EmConfig, index: int) -> TrialResult:
    """Trial ``index`` alone, as run_trials would run it."""
    rng = make_rng(derive_seed(config.seed, index))
    return VARIANTS[config.variant](inst, rng, config)


def _run_trial_job(job):
    return run_trial(*job)


def _gap(objective, reference):
    if reference is None or reference == 0:
        return math.nan
    return 100.0 * (objective - reference) / reference


def run_trials(inst: Instance, config: EmConfig, bks: Optional[float] = None):
    """
    Run ``config.trials`` independent restarts; returns the results in trial order
    and a TrialSummary. ``bks`` is the reference objective for the mean gap.
    """
    _require_edges(inst)
    logger.info("running %d %s trials on n=%d K=%d", config.trials, config.variant.value, inst.graph.n, inst.K)

    jobs = [(inst, config, index) for index in range(config.trials)]

    if config.threads > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_run_trial_job, jobs))
    else:
        results = [_run_trial_job(job) for job in jobs]

    objectives = np.array([result.objective for result in results])
    summary = TrialSummary(
        mean_objective=float(objectives.mean()),
        min_objective=float(objectives.min()),
        mean_wall_time=float(np.mean([result.wall_time for result in results])),
        best_trial=int(np.argmin(objectives)),
        mean_gap=None if bks is None else float(np.mean([_gap(o, bks) for o in objectives])),
    )

    logger.info("best trial %d objective %.9g", summary.best_trial, summary.min_objective)
    return results, summary
