"""Pair costs, tangent cuts and the big-M MILP built from them."""

import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List

import numpy as np
import pulp

from dcsbm.exceptions import DegenerateGraphError, InvariantError
from dcsbm.instance import Assignment, Graph, Instance
from dcsbm.likelihood import constant_term
from dcsbm.utils import atomic_write

__all__ = (
    "OMEGA_LOWER",
    "DEFAULT_EPSILON",
    "DEFAULT_BREAKPOINTS",
    "TangentCut",
    "BoundSet",
    "PairRecipe",
    "CandidatePoint",
    "f_eval",
    "build_bounds",
    "initial_breakpoints",
    "pair_recipes",
    "separate_cuts",
    "build_milp",
    "export_milp",
)

logger = logging.getLogger(__name__)

OMEGA_LOWER = 1e-12
DEFAULT_EPSILON = 1e-6
DEFAULT_BREAKPOINTS = 8


def _pair_cost(a_ij, expected, omega):
    if omega == 0:
        if a_ij > 0:
            raise InvariantError("f_ij is undefined at w=0 when A_ij > 0")
        return 0.0

    return -a_ij * math.log(omega) + expected * omega


def f_eval(g: Graph, i, j, omega) -> float:
    if omega < 0:
        raise InvariantError("w must be nonnegative, got {}".format(omega))

    return _pair_cost(int(g.adj[i, j]), float(g.expected[i, j]), float(omega))


@dataclass(frozen=True)
class TangentCut:
    """Supporting line ``a w + b`` of ``f_ij`` at the breakpoint ``w~``."""

    i: int
    j: int
    breakpoint: float
    a: float
    b: float

    @classmethod
    def at(cls, i, j, a_ij, expected, breakpoint):
        if breakpoint <= 0:
            raise InvariantError("tangent breakpoints must be positive, got {}".format(breakpoint))

        return cls(
            i=i,
            j=j,
            breakpoint=float(breakpoint),
            a=-a_ij / breakpoint + expected,
            b=a_ij * (1.0 - math.log(breakpoint)),
        )

    @classmethod
    def for_pair(cls, g: Graph, i, j, breakpoint):
        return cls.at(i, j, int(g.adj[i, j]), float(g.expected[i, j]), breakpoint)

    def value(self, omega):
        return self.a * omega + self.b


@dataclass(frozen=True)
class BoundSet:
    rho: float
    omega_lower: float
    omega_upper: float
    m_low: np.ndarray
    m_up: np.ndarray


def build_bounds(g: Graph) -> BoundSet:
    """
    ``rho = max A_ij / (k_i k_j)``, ``w in [1e-12, 2 m rho]`` and per-pair bounds on f_ij
    over that interval: the global minimum below, the larger endpoint value above.
    """
    if g.m == 0:
        raise DegenerateGraphError("bounds need at least one edge")

    k = g.degrees.astype(float)
    products = np.outer(k, k)
    mask = products > 0

    if not np.any(mask):
        raise DegenerateGraphError("every vertex is isolated")

    adj = g.adj.astype(float)
    rho = float(np.max(adj[mask] / products[mask]))
    omega_upper = 2.0 * g.m * rho
    expected = g.expected

    has_edges = adj > 0
    safe_adj = np.where(has_edges, adj, 1.0)
    safe_expected = np.where(has_edges, expected, 1.0)

    m_low = np.where(has_edges, adj * (1.0 - np.log(safe_adj) + np.log(safe_expected)), 0.0)

    at_lower = -adj * math.log(OMEGA_LOWER) + expected * OMEGA_LOWER
    at_upper = -adj * math.log(omega_upper) + expected * omega_upper
    m_up = np.where(has_edges, np.maximum(at_lower, at_upper), expected * omega_upper)

    m_low[~mask] = 0.0
    m_up[~mask] = 0.0

    m_low.setflags(write=False)
    m_up.setflags(write=False)

    return BoundSet(rho=rho, omega_lower=OMEGA_LOWER, omega_upper=omega_upper, m_low=m_low, m_up=m_up)


def initial_breakpoints(bounds: BoundSet, count=DEFAULT_BREAKPOINTS) -> np.ndarray:
    """Log-spaced breakpoints on ``[max(w_L, 1e-3), w_U]``."""
    if count < 1:
        raise InvariantError("at least one breakpoint is needed")

    low = min(max(bounds.omega_lower, 1e-3), bounds.omega_upper)
    return np.geomspace(low, bounds.omega_upper, count)


@dataclass(frozen=True)
class PairRecipe:
    """The coefficients that define f_ij; one line of the cut-recipe sidecar."""

    i: int
    j: int
    a_ij: int
    expected: float
    m_low: float
    m_up: float

    def cost(self, omega):
        return _pair_cost(self.a_ij, self.expected, omega)

    def cut(self, breakpoint):
        return TangentCut.at(self.i, self.j, self.a_ij, self.expected, breakpoint)

    def violation(self, omega, cuts: Iterable[TangentCut]):
        """How far f_ij(w) lies above the pointwise maximum of ``cuts`` (inf with no cuts)."""
        estimate = max((cut.value(omega) for cut in cuts), default=-math.inf)
        return self.cost(omega) - estimate


def pair_recipes(g: Graph, bounds: BoundSet) -> List[PairRecipe]:
    """One recipe per unordered pair ``i <= j``, in row-major order."""
    recipes = []

    for i in range(g.n):
        for j in range(i, g.n):
            recipes.append(
                PairRecipe(
                    i=i,
                    j=j,
                    a_ij=int(g.adj[i, j]),
                    expected=float(g.expected[i, j]),
                    m_low=float(bounds.m_low[i, j]),
                    m_up=float(bounds.m_up[i, j]),
                )
            )

    return recipes


@dataclass(frozen=True)
class CandidatePoint:
    """
    A (possibly fractional) MILP point restricted to what separation reads:
    ``omega`` (K x K) and ``y`` (n x n x K x K) with ``y[i, j, r, s] ~ z_ir z_js``.
    """

    omega: np.ndarray
    y: np.ndarray

    @classmethod
    def from_assignment(cls, a: Assignment, omega):
        z = a.one_hot().astype(float)
        return cls(omega=np.asarray(omega, dtype=float), y=np.einsum("ir,js->ijrs", z, z))


def separate_cuts(g: Graph, solution: CandidatePoint, cuts, epsilon=DEFAULT_EPSILON, bounds=None):
    """
    Tangent cuts at ``w_rs`` for every active cell (``y_ijrs > 1/2``, ``i <= j``) whose
    pair cost exceeds the current piecewise-linear underestimate by more than ``epsilon``.
    An empty result means the point is epsilon-feasible.
    """
    if epsilon <= 0:
        raise InvariantError("epsilon must be positive")

    bounds = bounds or build_bounds(g)
    recipes = {(recipe.i, recipe.j): recipe for recipe in pair_recipes(g, bounds)}
    return _separate(recipes, solution, cuts, epsilon, bounds.omega_lower)


def _separate(recipes, solution, cuts, epsilon, omega_lower):
    by_pair = defaultdict(list)
    for cut in cuts:
        by_pair[(cut.i, cut.j)].append(cut)

    emitted = []
    seen = set()
    omega = np.maximum(np.asarray(solution.omega, dtype=float), omega_lower)
    active = np.argwhere(np.asarray(solution.y) > 0.5)

    for i, j, r, s in active.tolist():
        if i > j:
            continue

        value = float(omega[r, s])
        key = (i, j, value)
        if key in seen:
            continue

        recipe = recipes[(i, j)]
        if recipe.violation(value, by_pair[(i, j)]) > epsilon:
            seen.add(key)
            emitted.append(recipe.cut(value))

    return emitted


# -- MILP export --------------------------------------------------------------------------


def _var(prefix, *indices):
    return "{}_{}".format(prefix, "_".join(str(index + 1) for index in indices))


def build_milp(inst: Instance, bounds: BoundSet, breakpoints, sbc=True):
    """
    The linearized maximum-likelihood model as a ``pulp.LpProblem``.

    Off-diagonal pairs use ``y``/``x`` for ``i < j`` only (symmetric terms merged,
    objective coefficient 1); diagonal cells use ``x_iirr`` switched by ``z_ir``
    (objective coefficient 1/2). ``w`` exists for ``r <= s`` only.
    """
    g, K, n = inst.graph, inst.K, inst.graph.n
    breakpoints = [float(b) for b in breakpoints]
    problem = pulp.LpProblem("dcsbm_mle", pulp.LpMinimize)

    z = {
        (i, r): pulp.LpVariable(_var("z", i, r), cat=pulp.LpBinary)
        for i in range(n)
        for r in range(K)
    }
    omega = {
        (r, s): pulp.LpVariable(
            _var("w", r, s), lowBound=bounds.omega_lower, upBound=bounds.omega_upper
        )
        for r in range(K)
        for s in range(r, K)
    }

    def w(r, s):
        return omega[(min(r, s), max(r, s))]

    y, x = {}, {}
    for i in range(n):
        for j in range(i + 1, n):
            for r in range(K):
                for s in range(K):
                    y[(i, j, r, s)] = pulp.LpVariable(_var("y", i, j, r, s), lowBound=0, upBound=1)
                    x[(i, j, r, s)] = pulp.LpVariable(_var("x", i, j, r, s))
        for r in range(K):
            x[(i, i, r, r)] = pulp.LpVariable(_var("x", i, i, r, r))

    problem += (
        pulp.lpSum(var for (i, j, _, _), var in x.items() if i < j)
        + 0.5 * pulp.lpSum(var for (i, j, _, _), var in x.items() if i == j),
        "neg_core",
    )

    if sbc and n > 0:
        problem += z[(0, 0)] == 1, "sbc_first"

        for r in range(1, K - 1):
            for j in range(r, n):
                problem += (
                    pulp.lpSum(z[(i, l)] for i in range(1, j) for l in range(r))
                    - pulp.lpSum(z[(j, l)] for l in range(r + 1))
                    <= j - 2,
                    _var("sbc", r, j),
                )

    for i in range(n):
        problem += pulp.lpSum(z[(i, r)] for r in range(K)) == 1, _var("assign", i)

    for (i, j, r, s), x_var in x.items():
        a_ij = int(g.adj[i, j])
        expected = float(g.expected[i, j])
        m_low = float(bounds.m_low[i, j])
        m_up = float(bounds.m_up[i, j])

        if i < j:
            switch = y[(i, j, r, s)]
            problem += z[(i, r)] - switch >= 0, _var("prod1", i, j, r, s)
            problem += z[(j, s)] - switch >= 0, _var("prod2", i, j, r, s)
            problem += z[(i, r)] + z[(j, s)] - switch <= 1, _var("prod3", i, j, r, s)
        else:
            switch = z[(i, r)]

        problem += x_var - m_up * switch <= 0, _var("bigm_up", i, j, r, s)
        problem += x_var - m_low * switch >= 0, _var("bigm_low", i, j, r, s)

        points = breakpoints if a_ij > 0 else breakpoints[:1]
        for p, point in enumerate(points):
            cut = TangentCut.at(i, j, a_ij, expected, point)
            problem += (
                x_var - cut.a * w(r, s) - m_up * switch >= cut.b - m_up,
                "{}_{}".format(_var("tan", i, j, r, s), p + 1),
            )

    return problem


def _write_recipe(inst, bounds, breakpoints, epsilon, path):
    recipes = pair_recipes(inst.graph, bounds)
    out = [
        "# dcsbm cut recipe v1",
        "# epsilon {!r}".format(float(epsilon)),
        "# omega_lower {!r} omega_upper {!r} rho {!r}".format(
            bounds.omega_lower, bounds.omega_upper, bounds.rho
        ),
        "# breakpoints {}".format(" ".join(repr(float(b)) for b in breakpoints)),
        "# objective_offset {!r}".format(-constant_term(inst.graph)),
        "# pairs i<j carry merged symmetric terms (coefficient 1); i=j carry 1/2",
        "# cut at w~: x_ijrs >= (kikj_over_2m - A_ij/w~) w_rs + A_ij (1 - log w~) - Mup (1 - y_ijrs)",
        "# i j A_ij kikj_over_2m Mlow Mup",
    ]
    out.extend(
        "{} {} {} {!r} {!r} {!r}".format(
            recipe.i + 1, recipe.j + 1, recipe.a_ij, recipe.expected, recipe.m_low, recipe.m_up
        )
        for recipe in recipes
    )

    with atomic_write(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(out) + "\n")


def recipe_path(path):
    path = Path(path)
    return path.with_name(path.name + ".cuts")


def export_milp(inst: Instance, bounds: BoundSet, breakpoints, epsilon, sbc, path):
    """Write the model in CPLEX LP format plus the ``<path>.cuts`` separation recipe."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    problem = build_milp(inst, bounds, breakpoints, sbc=sbc)

    tmp = path.with_name("." + path.name + ".tmp.lp")
    try:
        problem.writeLP(str(tmp))
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()

    _write_recipe(inst, bounds, breakpoints, epsilon, recipe_path(path))

    logger.info(
        "exported MILP to %s: %d variables, %d constraints",
        path,
        len(problem.variables()),
        len(problem.constraints),
    )
    return problem
