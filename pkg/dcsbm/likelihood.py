"""
The log-likelihood splits into an assignment-dependent core and a graph-only constant::

    core = 1/2 sum_ij (A_ij log w_{g_i g_j} - k_i k_j / 2m * w_{g_i g_j})
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from dcsbm.exceptions import DegenerateGraphError, InvariantError
from dcsbm.instance import AffinityMatrix, Assignment, Graph

__all__ = (
    "BlockStats",
    "LikelihoodValue",
    "constant_term",
    "log_likelihood",
    "pairwise_core",
    "direct_log_probability",
    "m_step",
    "profile_log_likelihood",
    "relocation_delta",
    "vertex_links",
)


def _require_edges(g: Graph):
    if g.m == 0:
        raise DegenerateGraphError("the likelihood is undefined for a graph without edges")


@dataclass
class BlockStats:
    """
    Block edge counts ``m_rs = sum_ij A_ij z_ir z_js`` and degree sums ``kappa_r``.

    Mutable workspace: ``move`` updates it in place in O(K) once the moved
    vertex's links are known.
    """

    m_rs: np.ndarray
    kappa: np.ndarray

    @classmethod
    def from_assignment(cls, g: Graph, a: Assignment):
        if a.n != g.n:
            raise InvariantError("assignment has {} labels for {} vertices".format(a.n, g.n))

        z = a.one_hot()
        return cls(m_rs=z.T @ g.adj @ z, kappa=z.T @ g.degrees)

    @classmethod
    def empty(cls, K):
        return cls(m_rs=np.zeros((K, K), dtype=np.int64), kappa=np.zeros(K, dtype=np.int64))

    @property
    def K(self):
        return self.kappa.size

    def copy(self):
        return BlockStats(m_rs=self.m_rs.copy(), kappa=self.kappa.copy())

    def add(self, group, links, loops, degree):
        """Place a vertex with ``links[t]`` edges into group t members into ``group``."""
        self.m_rs[group, :] += links
        self.m_rs[:, group] += links
        self.m_rs[group, group] += loops
        self.kappa[group] += degree

    def remove(self, group, links, loops, degree):
        self.m_rs[group, :] -= links
        self.m_rs[:, group] -= links
        self.m_rs[group, group] -= loops
        self.kappa[group] -= degree

    def move(self, source, target, links, loops, degree):
        self.remove(source, links, loops, degree)
        self.add(target, links, loops, degree)

    def __eq__(self, other):
        if not isinstance(other, BlockStats):
            return NotImplemented
        return np.array_equal(self.m_rs, other.m_rs) and np.array_equal(self.kappa, other.kappa)


@dataclass(frozen=True)
class LikelihoodValue:
    core: float
    constant: float

    @property
    def total(self):
        return self.core + self.constant

    @property
    def objective(self):
        return -self.total


def vertex_links(g: Graph, labels, vertex, K):
    """Edge counts from ``vertex`` to the members of each group, excluding its self-loops."""
    idx, counts = g.neighbors(vertex)
    return np.bincount(np.asarray(labels)[idx], weights=counts, minlength=K).astype(np.int64)


def constant_term(g: Graph) -> float:
    """
    The assignment-independent part of the log-likelihood:

    sum_{i<j} [A_ij log(k_i k_j / 2m) - log A_ij!] + sum_i [A_ii/2 log(k_i^2 / 4m) - log (A_ii/2)!]
    """
    _require_edges(g)

    adj = g.adj.astype(float)
    expected = g.expected
    upper = np.triu_indices(g.n, k=1)

    pairs = xlogy(adj[upper], expected[upper]) - gammaln(adj[upper] + 1.0)

    loops = np.diag(adj) / 2.0
    loop_terms = xlogy(loops, np.diag(expected) / 2.0) - gammaln(loops + 1.0)

    return float(pairs.sum() + loop_terms.sum())


def _block_core(g: Graph, stats: BlockStats, omega):
    two_m = 2.0 * g.m
    with np.errstate(divide="ignore"):
        terms = xlogy(stats.m_rs.astype(float), omega) - np.outer(stats.kappa, stats.kappa) / two_m * omega
    return 0.5 * float(terms.sum())


def log_likelihood(g: Graph, a: Assignment, om: AffinityMatrix) -> LikelihoodValue:
    """
    Evaluate the log-likelihood through block statistics. A block with edges but
    ``w_rs = 0`` makes the core ``-inf``.
    """
    _require_edges(g)

    if om.K != a.K:
        raise InvariantError("affinity matrix is {0}x{0} but the assignment has K={1}".format(om.K, a.K))

    stats = BlockStats.from_assignment(g, a)
    return LikelihoodValue(core=_block_core(g, stats, om.omega), constant=constant_term(g))


def pairwise_core(g: Graph, a: Assignment, om: AffinityMatrix) -> float:
    """The core by the direct sum over ordered vertex pairs."""
    _require_edges(g)

    cell = om.omega[np.ix_(a.labels, a.labels)]
    with np.errstate(divide="ignore"):
        terms = xlogy(g.adj.astype(float), cell) - g.expected * cell
    return 0.5 * float(terms.sum())


def direct_log_probability(g: Graph, a: Assignment, om: AffinityMatrix) -> float:
    """
    Log of the Poisson product form evaluated term by term, with
    ``theta_i theta_j = k_i k_j / 2m``. Equals ``core + constant``.
    """
    _require_edges(g)

    adj = g.adj.astype(float)
    mean = g.expected * om.omega[np.ix_(a.labels, a.labels)]
    upper = np.triu_indices(g.n, k=1)

    with np.errstate(divide="ignore"):
        pairs = xlogy(adj[upper], mean[upper]) - gammaln(adj[upper] + 1.0) - mean[upper]

        loops = np.diag(adj) / 2.0
        loop_mean = np.diag(mean) / 2.0
        loop_terms = xlogy(loops, loop_mean) - gammaln(loops + 1.0) - loop_mean

    return float(pairs.sum() + loop_terms.sum())


def m_step(g: Graph, a: Assignment) -> AffinityMatrix:
    """Closed-form optimal affinity matrix ``w_rs = 2m m_rs / (kappa_r kappa_s)``; empty groups get 0."""
    stats = BlockStats.from_assignment(g, a)
    return AffinityMatrix(_optimal_omega(g, stats))


def _optimal_omega(g: Graph, stats: BlockStats):
    products = np.outer(stats.kappa, stats.kappa).astype(float)
    numerator = 2.0 * g.m * stats.m_rs.astype(float)
    return np.divide(numerator, products, out=np.zeros_like(products), where=products > 0)


def _entropy_terms(m_rs, products, two_m):
    """Sum of ``m_rs log(2m m_rs / (kappa_r kappa_s))`` over cells with edges."""
    m_rs = np.asarray(m_rs, dtype=float)
    products = np.asarray(products, dtype=float)
    mask = m_rs > 0

    if not np.any(mask):
        return 0.0

    values = m_rs[mask]
    return float(np.sum(values * np.log(two_m * values / products[mask])))


def profile_log_likelihood(g: Graph, stats: BlockStats) -> float:
    """The core at the M-step optimum: ``1/2 sum m_rs log(2m m_rs / (kappa_r kappa_s)) - m``."""
    two_m = 2.0 * g.m
    products = np.outer(stats.kappa, stats.kappa)
    return 0.5 * _entropy_terms(stats.m_rs, products, two_m) - g.m


def _affected_entropy(m_rows, kappa, source, target, two_m):
    """
    Entropy summed over every cell in rows or columns ``source``/``target`` of a
    symmetric block matrix, given only those two rows.
    """
    pair = [source, target]
    row_products = np.outer(kappa[pair], kappa)

    rows = _entropy_terms(m_rows, row_products, two_m)
    block = _entropy_terms(m_rows[:, pair], row_products[:, pair], two_m)

    return 2.0 * rows - block


def move_delta(g: Graph, stats: BlockStats, source, target, links, loops, degree) -> float:
    """Change of the profile log-likelihood when a vertex moves ``source -> target``."""
    if source == target:
        return 0.0

    two_m = 2.0 * g.m
    pair = [source, target]

    before = stats.m_rs[pair, :]
    after = before.copy()
    after[0] -= links
    after[1] += links
    after[:, source] -= links[pair]
    after[:, target] += links[pair]
    after[0, source] -= loops
    after[1, target] += loops

    kappa_after = stats.kappa.copy()
    kappa_after[source] -= degree
    kappa_after[target] += degree

    old = _affected_entropy(before, stats.kappa, source, target, two_m)
    new = _affected_entropy(after, kappa_after, source, target, two_m)

    return 0.5 * (new - old)


def relocation_delta(g: Graph, stats: BlockStats, a: Assignment, vertex, target):
    """
    Profile change for moving ``vertex`` to group ``target`` and the updated
    statistics. Only the vertex's incident edges are read.
    """
    if not 0 <= target < stats.K:
        raise InvariantError("target group {} out of range for K={}".format(target, stats.K))

    source = int(a.labels[vertex])

    if source == target:
        raise InvariantError("vertex {} already belongs to group {}".format(vertex, target))

    links = vertex_links(g, a.labels, vertex, stats.K)
    loops = int(g.adj[vertex, vertex])
    degree = int(g.degrees[vertex])

    delta = move_delta(g, stats, source, target, links, loops, degree)

    updated = stats.copy()
    updated.move(source, target, links, loops, degree)

    return delta, updated
