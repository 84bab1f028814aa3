import enum
import json
import logging
import math
import multiprocessing
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from dcsbm import em
from dcsbm.bases import Base
from dcsbm.exceptions import DegenerateGraphError, InvariantError, TimeLimitReached
from dcsbm.fields import Choice, Flag, Float, Integer, Of
from dcsbm.instance import AffinityMatrix, Assignment, Instance, Solution, SolveStatus, canonicalize
from dcsbm.likelihood import BlockStats, constant_term, m_step, profile_log_likelihood
from dcsbm.relaxation import build_bounds
from dcsbm.utils import WARM_START_KEY, derive_seed, make_rng

__all__ = (
    "VertexOrder",
    "ExactConfig",
    "SearchNode",
    "SolveReport",
    "solve_exact",
    "solve_estep_exact",
    "prefix_node",
    "search_order",
)

logger = logging.getLogger(__name__)

PRUNE_TOLERANCE = 1e-9
CLOCK_EVERY = 256
TRACE_EVERY = 4096


class VertexOrder(str, enum.Enum):
    DEGREE = "degree"
    INPUT = "input"


class ExactConfig(Base):
    time_limit = Float().min(0).default(60.0)
    vertex_order = Choice(VertexOrder).default(VertexOrder.DEGREE)
    use_sbc = Flag().default(True)
    warm_start = Flag().default(True)
    threads = Integer().min(1).default(1)
    seed = Integer().min(0).default(0)
    trace = Of(str, Path).optional()


@dataclass
class SearchNode:
    """A partial labeling of the first ``len(prefix)`` vertices in search order."""

    prefix: tuple
    groups_used: int
    stats: BlockStats
    lower_bound: float


@dataclass
class SolveReport:
    assignment: Assignment
    omega: AffinityMatrix
    objective: float
    bound: float
    gap: float
    status: SolveStatus
    nodes: int
    wall_time: float

    def solution(self) -> Solution:
        return Solution(
            objective=self.objective, status=self.status, assignment=self.assignment, omega=self.omega
        )


def search_order(inst: Instance, order: VertexOrder):
    if order == VertexOrder.INPUT:
        return np.arange(inst.graph.n)
    # stable: equal degrees keep index order
    return np.argsort(-inst.graph.degrees, kind="stable")


def _prefix_sums(values, order):
    """``S[d] = sum of values[i, j]`` over ordered pairs within the first d vertices of ``order``."""
    sums = np.zeros(order.size + 1)

    for depth, v in enumerate(order.tolist()):
        previous = order[:depth]
        sums[depth + 1] = sums[depth] + 2.0 * values[v, previous].sum() + values[v, v]

    return sums


class _Interrupted(Exception):
    def __init__(self, outstanding):
        self.outstanding = outstanding


class _Search:
    """
    Shared depth-first machinery. Subclasses define the per-child bound through
    ``_place``/``_unplace``/``_assigned_value`` and the frontier remainder.
    """

    def __init__(self, inst: Instance, order, candidates_fn, deadline, shared=None):
        self.graph = inst.graph
        self.K = inst.K
        self.n = inst.graph.n
        self.order = np.asarray(order)
        self.candidates_fn = candidates_fn
        self.deadline = deadline
        self.shared = shared

        self.labels = np.full(self.n, -1, dtype=np.int64)
        self.isolated = self.graph.degrees == 0
        self.best_value = math.inf
        self.best_labels = None
        self.nodes = 0
        self.frames = []
        self._entries = 0
        self.on_improve = None
        self.on_tick = None

    # -- incumbent ---------------------------------------------------------------------

    def incumbent(self):
        if self.shared is not None:
            return min(self.best_value, self.shared.value)
        return self.best_value

    def offer(self, value, labels):
        if value < self.best_value:
            self.best_value = value
            self.best_labels = labels.copy()

            if self.shared is not None:
                with self.shared.get_lock():
                    if value < self.shared.value:
                        self.shared.value = value

            if self.on_improve:
                self.on_improve(self)

    # -- bounds of the open tree -------------------------------------------------------

    def outstanding(self, current=None):
        bounds = [bound for frame in self.frames for _, bound in frame]
        if current is not None:
            bounds.append(current)
        return min(bounds, default=math.inf)

    # -- search ------------------------------------------------------------------------

    def candidates(self, vertex, used):
        if self.isolated[vertex]:
            return [0]
        return self.candidates_fn(used)

    def run(self, depth=0, used=0):
        self._descend(depth, used)

    def _tick(self, depth):
        self._entries += 1

        if self._entries % CLOCK_EVERY == 0:
            if self.on_tick and self._entries % TRACE_EVERY == 0:
                self.on_tick(self)

            if time.perf_counter() > self.deadline:
                raise _Interrupted(self.outstanding(self._assigned_value() + self.remainder(depth)))

    def _descend(self, depth, used):
        self._tick(depth)

        if depth == self.n:
            self.offer(self._assigned_value(), self.labels)
            return

        vertex = int(self.order[depth])
        context = self._context(vertex)
        options = self.candidates(vertex, used)
        children = []

        for label in options:
            self._place(vertex, label, context)
            bound = self._assigned_value() + self.remainder(depth + 1)
            self._unplace(vertex, label, context)

            if bound < self.incumbent() - PRUNE_TOLERANCE:
                children.append((label, bound))

        branching = len(options) > 1
        frame = deque(children)
        self.frames.append(frame)

        try:
            while frame:
                label, bound = frame.popleft()

                if bound >= self.incumbent() - PRUNE_TOLERANCE:
                    continue

                if branching:
                    self.nodes += 1

                self._place(vertex, label, context)
                try:
                    self._descend(depth + 1, max(used, label + 1))
                finally:
                    self._unplace(vertex, label, context)
        finally:
            self.frames.pop()

    def assign_prefix(self, prefix):
        """Fix the first ``len(prefix)`` vertices of the order; returns the groups used."""
        used = 0

        for depth, label in enumerate(prefix):
            vertex = int(self.order[depth])
            self._place(vertex, label, self._context(vertex))
            used = max(used, label + 1)

        return used

    def bound_at(self, depth):
        return self._assigned_value() + self.remainder(depth)


class _ProfileSearch(_Search):
    """Branch-and-bound over assignments for the full (assignment, affinity) problem."""

    def __init__(self, inst, order, use_sbc, bounds, deadline, shared=None):
        K = inst.K
        if use_sbc:
            candidates_fn = lambda used: range(min(used + 1, K))  # noqa: E731
        else:
            candidates_fn = lambda used: range(K)  # noqa: E731

        super().__init__(inst, order, candidates_fn, deadline, shared)

        self.bounds = bounds
        self.two_m = 2.0 * self.graph.m
        self.stats = BlockStats.empty(K)

        sums = _prefix_sums(bounds.m_low, self.order)
        self._remainder = 0.5 * (sums[-1] - sums)

    def remainder(self, depth):
        return self._remainder[depth]

    def _context(self, vertex):
        idx, counts = self.graph.neighbors(vertex)
        assigned = self.labels[idx]
        mask = assigned >= 0
        links = np.bincount(assigned[mask], weights=counts[mask], minlength=self.K).astype(np.int64)
        return links, int(self.graph.adj[vertex, vertex]), int(self.graph.degrees[vertex])

    def _place(self, vertex, label, context):
        links, loops, degree = context
        self.labels[vertex] = label
        self.stats.add(label, links, loops, degree)

    def _unplace(self, vertex, label, context):
        links, loops, degree = context
        self.stats.remove(label, links, loops, degree)
        self.labels[vertex] = -1

    def _assigned_value(self):
        """Half the sum over blocks of min over w in [w_L, w_U] of the assigned pairs' cost."""
        m_rs = self.stats.m_rs.astype(float)
        mask = m_rs > 0

        if not np.any(mask):
            return 0.0

        products = np.outer(self.stats.kappa, self.stats.kappa).astype(float)[mask]
        edges = m_rs[mask]
        omega = np.clip(self.two_m * edges / products, self.bounds.omega_lower, self.bounds.omega_upper)

        return 0.5 * float(np.sum(-edges * np.log(omega) + products / self.two_m * omega))


def prefix_node(inst: Instance, prefix, order=None, use_sbc=True) -> SearchNode:
    """The search node reached by labeling the first ``len(prefix)`` vertices of ``order``."""
    _require_edges(inst)

    order = search_order(inst, VertexOrder.DEGREE) if order is None else np.asarray(order)
    search = _ProfileSearch(inst, order, use_sbc, build_bounds(inst.graph), math.inf)
    used = search.assign_prefix(prefix)

    return SearchNode(
        prefix=tuple(prefix),
        groups_used=used,
        stats=search.stats.copy(),
        lower_bound=search.bound_at(len(prefix)) - constant_term(inst.graph),
    )


def _require_edges(inst):
    if inst.graph.m == 0:
        raise DegenerateGraphError("the exact solver needs at least one edge")


class _Tracer:
    def __init__(self, path, constant, started):
        self.handle = open(path, "w", encoding="utf-8")
        self.constant = constant
        self.started = started

    def __call__(self, search):
        incumbent = search.incumbent()
        current = search.bound_at(int(np.sum(search.labels >= 0)))
        record = {
            "time": round(time.perf_counter() - self.started, 6),
            "incumbent": None if math.isinf(incumbent) else incumbent - self.constant,
            "bound": min(search.outstanding(current), incumbent) - self.constant,
            "nodes": search.nodes,
        }
        self.handle.write(json.dumps(record) + "\n")

    def close(self):
        self.handle.close()


def _warm_start(inst: Instance, config: ExactConfig):
    seed = derive_seed(inst.seed if inst.seed is not None else config.seed, WARM_START_KEY)
    trial = em.em_ls2(inst, make_rng(seed), em.EmConfig(variant=em.EmVariant.LS2, trials=1))
    return trial.objective, trial.assignment


# -- parallel subtrees --------------------------------------------------------------------

_shared_incumbent = None


def _init_worker(shared):
    global _shared_incumbent
    _shared_incumbent = shared


def _solve_subtree(job):
    inst, order, use_sbc, deadline_in, prefix, start_value = job
    deadline = time.perf_counter() + deadline_in
    search = _ProfileSearch(inst, order, use_sbc, build_bounds(inst.graph), deadline, _shared_incumbent)
    search.best_value = start_value
    used = search.assign_prefix(prefix)

    try:
        search.run(len(prefix), used)
        outstanding = math.inf
    except _Interrupted as stop:
        outstanding = stop.outstanding

    labels = None if search.best_labels is None else search.best_labels.tolist()
    return search.best_value, labels, search.nodes, outstanding


def _split(inst, order, use_sbc, bounds, incumbent, threads):
    """Expand the root breadth-first until there are enough open subtrees for the workers."""
    frontier = [((), 0)]
    depth = 0
    nodes = 1

    while 0 < len(frontier) < 2 * threads and depth < inst.graph.n:
        expanded = []

        for prefix, used in frontier:
            vertex = int(order[depth])
            lookahead = _ProfileSearch(inst, order, use_sbc, bounds, math.inf)

            for label in lookahead.candidates(vertex, used):
                child = _ProfileSearch(inst, order, use_sbc, bounds, math.inf)
                child.assign_prefix(prefix + (label,))

                if child.bound_at(depth + 1) < incumbent - PRUNE_TOLERANCE:
                    expanded.append((prefix + (label,), max(used, label + 1)))

        nodes += len(expanded)
        frontier = expanded
        depth += 1

    return frontier, nodes


def _parallel_search(inst, order, config, bounds, start_value, start_labels, deadline):
    frontier, split_nodes = _split(inst, order, config.use_sbc, bounds, start_value, config.threads)
    shared = multiprocessing.Value("d", start_value)
    remaining = max(deadline - time.perf_counter(), 0.0)

    jobs = [(inst, order, config.use_sbc, remaining, prefix, start_value) for prefix, _ in frontier]

    with ProcessPoolExecutor(
        max_workers=config.threads, initializer=_init_worker, initargs=(shared,)
    ) as pool:
        results = list(pool.map(_solve_subtree, jobs))

    best_value, best_labels = start_value, start_labels
    nodes = split_nodes
    outstanding = math.inf

    for value, labels, count, pending in results:
        nodes += count
        outstanding = min(outstanding, pending)
        if labels is not None and value < best_value:
            best_value, best_labels = value, np.asarray(labels)

    return best_value, best_labels, nodes, outstanding


# -- entry points ---------------------------------------------------------------------------


def solve_exact(inst: Instance, config: Optional[ExactConfig] = None) -> SolveReport:
    config = config or ExactConfig()
    _require_edges(inst)

    started = time.perf_counter()
    deadline = started + config.time_limit
    graph = inst.graph
    constant = constant_term(graph)
    bounds = build_bounds(graph)
    order = search_order(inst, config.vertex_order)

    start_value, start_labels = math.inf, None
    if config.warm_start:
        warm_objective, warm_assignment = _warm_start(inst, config)
        # the search works on the objective without the constant
        start_value = warm_objective + constant
        start_labels = warm_assignment.labels.copy()
        logger.debug("warm start objective %.9g", warm_objective)

    logger.info(
        "exact solve: n=%d m=%d K=%d sbc=%s order=%s threads=%d",
        graph.n,
        graph.m,
        inst.K,
        config.use_sbc,
        config.vertex_order.value,
        config.threads,
    )

    if config.threads > 1:
        best_value, best_labels, nodes, outstanding = _parallel_search(
            inst, order, config, bounds, start_value, start_labels, deadline
        )
    else:
        search = _ProfileSearch(inst, order, config.use_sbc, bounds, deadline)
        search.best_value, search.best_labels = start_value, start_labels

        tracer = None
        if config.trace:
            tracer = _Tracer(config.trace, constant, started)
            search.on_improve = tracer
            search.on_tick = tracer

        try:
            search.run()
            outstanding = math.inf
        except _Interrupted as stop:
            outstanding = stop.outstanding
        finally:
            if tracer:
                tracer(search)
                tracer.close()

        best_value, best_labels, nodes = search.best_value, search.best_labels, search.nodes + 1

    if best_labels is None:
        raise TimeLimitReached("no assignment found before the time limit")

    assignment = canonicalize(Assignment(best_labels, inst.K))
    stats = BlockStats.from_assignment(graph, assignment)
    objective = -(profile_log_likelihood(graph, stats) + constant)

    lower = min(outstanding, best_value) - constant
    if lower >= objective - PRUNE_TOLERANCE:
        status, bound, gap = SolveStatus.OPTIMAL, objective, 0.0
    else:
        status, bound = SolveStatus.TIME_LIMIT, lower
        gap = (objective - bound) / abs(objective) if objective != 0 else math.inf

    wall = time.perf_counter() - started
    logger.info("exact solve finished: %s objective=%.9g nodes=%d time=%.3fs", status.value, objective, nodes, wall)

    return SolveReport(
        assignment=assignment,
        omega=m_step(graph, assignment),
        objective=objective,
        bound=bound,
        gap=gap,
        status=status,
        nodes=nodes,
        wall_time=wall,
    )


class _EStepSearch(_Search):
    """Branch-and-bound over all K^n labelings for a fixed affinity matrix."""

    def __init__(self, inst, order, omega, deadline):
        K = inst.K
        super().__init__(inst, order, lambda used: range(K), deadline)

        g = self.graph
        adj = g.adj.astype(float)[:, :, None, None]
        expected = g.expected[:, :, None, None]
        w = np.asarray(omega, dtype=float)[None, None, :, :]

        with np.errstate(divide="ignore", invalid="ignore"):
            cost = np.where(w > 0, -adj * np.log(np.where(w > 0, w, 1.0)) + expected * w, 0.0)
        cost = np.where((w == 0) & (adj > 0), math.inf, cost)
        self.cost = cost

        pair_min = cost.min(axis=(2, 3))
        diagonal = np.arange(self.n)
        pair_min[diagonal, diagonal] = cost[diagonal, diagonal][:, np.arange(K), np.arange(K)].min(axis=1)

        sums = _prefix_sums(pair_min, self.order)
        self._remainder = 0.5 * (sums[-1] - sums)

        # infinite cells are counted apart so that unplacing never computes inf - inf
        self.value = 0.0
        self.infinite = 0

    def remainder(self, depth):
        return self._remainder[depth]

    def _context(self, vertex):
        return np.flatnonzero(self.labels >= 0)

    def _increment(self, vertex, label, assigned):
        others = self.cost[vertex, assigned, label, self.labels[assigned]].sum()
        return float(others) + 0.5 * float(self.cost[vertex, vertex, label, label])

    def _place(self, vertex, label, assigned):
        step = self._increment(vertex, label, assigned)
        self.labels[vertex] = label

        if math.isinf(step):
            self.infinite += 1
        else:
            self.value += step

    def _unplace(self, vertex, label, assigned):
        self.labels[vertex] = -1
        step = self._increment(vertex, label, assigned)

        if math.isinf(step):
            self.infinite -= 1
        else:
            self.value -= step

    def _assigned_value(self):
        return math.inf if self.infinite else self.value

    def evaluate(self, labels):
        labels = np.asarray(labels)
        return 0.5 * float(self.cost[np.arange(self.n)[:, None], np.arange(self.n)[None, :], labels[:, None], labels[None, :]].sum())


def solve_estep_exact(
    inst: Instance, om: AffinityMatrix, config: Optional[ExactConfig] = None, start: Optional[Assignment] = None
) -> Assignment:
    """
    Globally optimal assignment for a fixed affinity matrix over all K^n labelings.
    Ties resolve to the first optimum in search order, or to ``start`` when given.
    """
    config = config or ExactConfig()

    if om.K != inst.K:
        raise InvariantError("affinity matrix is {0}x{0} but K={1}".format(om.K, inst.K))

    deadline = time.perf_counter() + config.time_limit
    order = search_order(inst, config.vertex_order)
    search = _EStepSearch(inst, order, om.omega, deadline)

    if start is not None:
        search.best_value = search.evaluate(start.labels)
        search.best_labels = start.labels.copy()

    try:
        search.run()
    except _Interrupted:
        best = None if search.best_labels is None else Assignment(search.best_labels, inst.K)
        raise TimeLimitReached("exact E-step hit its time limit", best=best) from None

    if search.best_labels is None:
        # every labeling puts an edge in a zero-rate cell
        return start if start is not None else Assignment(np.zeros(inst.graph.n, dtype=np.int64), inst.K)

    return Assignment(search.best_labels, inst.K)
