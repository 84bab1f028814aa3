import numpy as np
import pytest

import dcsbm as dc
from dcsbm.instance import restricted_growth_strings
from dcsbm.likelihood import BlockStats, profile_log_likelihood


class SolverSettings:
    time_limit = dc.Float().min(0)
    order = dc.Choice(dc.VertexOrder)
    trials = dc.Integer().min(1).optional()
    use_sbc = dc.Flag()
    theta = dc.Vector().optional().positive()


@pytest.fixture()
def settings():
    return SolverSettings()


@pytest.fixture()
def single_edge():
    return dc.Graph.from_edges(2, [(0, 1, 1)])


@pytest.fixture()
def two_triangles():
    """Two triangles joined by the edge {2, 3}."""
    edges = [(0, 1, 1), (0, 2, 1), (1, 2, 1), (3, 4, 1), (3, 5, 1), (4, 5, 1), (2, 3, 1)]
    return dc.Instance(graph=dc.Graph.from_edges(6, edges), K=2)


def _random_graph(rng, n):
    upper = np.triu(rng.poisson(0.7, size=(n, n)), k=1)
    adj = upper + upper.T
    adj[np.diag_indices(n)] = 2 * rng.poisson(0.2, size=n)

    if adj.sum() == 0:
        adj[0, 1] = adj[1, 0] = 1

    return dc.Graph(adj)


@pytest.fixture()
def random_graph():
    """Factory for small multigraphs with self-loops and possibly isolated vertices."""
    return _random_graph


@pytest.fixture()
def make_instance():
    def make(n, K, strength="medium", seed=0):
        cfg = dc.GeneratorConfig(n=n, K=K, omega_spec=dc.S2Strength(strength), seed=seed)
        return dc.generate(cfg)

    return make


@pytest.fixture()
def small_instances(make_instance):
    return [
        make_instance(6, 2, "high", seed=1),
        make_instance(7, 2, "low", seed=2),
        make_instance(8, 2, "medium", seed=3),
        make_instance(6, 3, "high", seed=4),
        make_instance(7, 3, "medium", seed=5),
    ]


def _optimum(inst):
    g = inst.graph
    constant = dc.constant_term(g)
    best = None

    for labels in restricted_growth_strings(g.n, inst.K):
        stats = BlockStats.from_assignment(g, dc.Assignment(labels, inst.K))
        objective = -(profile_log_likelihood(g, stats) + constant)
        if best is None or objective < best[0]:
            best = (objective, labels)

    return best


@pytest.fixture()
def brute_force():
    """``(objective, labels)`` of the best partition by exhaustive enumeration."""
    return _optimum
