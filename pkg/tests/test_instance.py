import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dcsbm as dc
from dcsbm.instance import all_assignments, restricted_growth_strings

SINGLE_EDGE = """\
dcsbm-instance v1
n 2 m 1 K 2 seed none
ground-truth none
gen-omega none
edges
1 2 1
end
"""

labelings = st.lists(st.integers(min_value=0, max_value=3), min_size=1, max_size=8)


def _write(tmp_path, text, name="graph.inst"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_graph_degrees_and_loops():
    g = dc.Graph.from_edges(3, [(0, 1, 2), (1, 1, 1)])

    assert g.adj.tolist() == [[0, 2, 0], [2, 2, 0], [0, 0, 0]]
    assert g.degrees.tolist() == [2, 4, 0]
    assert g.m == 3
    assert g.isolated().tolist() == [2]
    assert list(g.edges()) == [(0, 1, 2), (1, 1, 1)]


@pytest.mark.parametrize(
    "adj",
    [
        [[0, 1], [0, 0]],
        [[1, 0], [0, 0]],
        [[0, -1], [-1, 0]],
        [[0, 1, 0], [1, 0, 0]],
        [[0, 0.5], [0.5, 0]],
    ],
)
def test_invalid_graphs(adj):
    with pytest.raises(dc.InvariantError):
        dc.Graph(adj)


def test_read_single_edge(tmp_path):
    inst = dc.read_instance(_write(tmp_path, SINGLE_EDGE))

    assert inst.graph.degrees.tolist() == [1, 1]
    assert inst.graph.m == 1
    assert inst.K == 2
    assert inst.ground_truth is None and inst.seed is None


def test_header_mismatch(tmp_path):
    with pytest.raises(dc.InvariantError):
        dc.read_instance(_write(tmp_path, SINGLE_EDGE.replace("m 1", "m 5")))


@pytest.mark.parametrize(
    "broken, line",
    [
        (SINGLE_EDGE.replace("1 2 1", "1 x 1"), 6),
        (SINGLE_EDGE.replace("1 2 1", "2 1 1"), 6),
        (SINGLE_EDGE.replace("1 2 1", "1 3 1"), 6),
        (SINGLE_EDGE.replace("1 2 1", "1 2 0"), 6),
        (SINGLE_EDGE.replace("dcsbm-instance v1", "dcsbm v0"), 1),
        (SINGLE_EDGE.replace("ground-truth none", "ground-truth 1 3"), 3),
        (SINGLE_EDGE.replace("end\n", ""), 7),
        (SINGLE_EDGE + "1 2 1\n", 8),
        (SINGLE_EDGE.replace("1 2 1\n", "1 2 1\n1 2 1\n"), 7),
    ],
)
def test_parse_errors_carry_the_line(tmp_path, broken, line):
    with pytest.raises(dc.ParseError) as e:
        dc.read_instance(_write(tmp_path, broken))

    assert e.value.line == line
    assert str(e.value).startswith("line {}:".format(line))


def test_round_trip(tmp_path, make_instance):
    inst = make_instance(10, 2, "low", seed=11)
    path = tmp_path / "a.inst"

    dc.write_instance(inst, path)
    assert dc.read_instance(path) == inst


def test_writes_are_deterministic(tmp_path, make_instance):
    inst = make_instance(8, 3, "high", seed=5)

    dc.write_instance(inst, tmp_path / "a.inst")
    dc.write_instance(inst, tmp_path / "b.inst")

    assert (tmp_path / "a.inst").read_bytes() == (tmp_path / "b.inst").read_bytes()


def test_empty_graph(tmp_path):
    inst = dc.Instance(graph=dc.Graph(np.zeros((3, 3))), K=2)
    path = tmp_path / "empty.inst"

    dc.write_instance(inst, path)

    assert "edges\nend\n" in path.read_text()
    assert dc.read_instance(path).graph.m == 0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_round_trip_generated(tmp_path_factory, seed):
    cfg = dc.GeneratorConfig(n=8, K=2, omega_spec=dc.S1Pair(0.9, 0.1), seed=seed)
    inst = dc.generate(cfg)
    path = tmp_path_factory.mktemp("round-trip") / "inst.inst"

    dc.write_instance(inst, path)
    assert dc.read_instance(path) == inst


def test_instance_invariants(single_edge):
    with pytest.raises(dc.InvariantError):
        dc.Instance(graph=single_edge, K=0)

    with pytest.raises(dc.InvariantError):
        dc.Instance(graph=single_edge, K=2, ground_truth=dc.Assignment([0, 1, 1], 2))

    with pytest.raises(dc.InvariantError):
        dc.Instance(graph=single_edge, K=2, gen_omega=dc.AffinityMatrix.constant(3, 1.0))


def test_affinity_matrix_invariants():
    with pytest.raises(dc.InvariantError):
        dc.AffinityMatrix([[1.0, 0.5], [0.4, 1.0]])

    with pytest.raises(dc.InvariantError):
        dc.AffinityMatrix([[1.0, -0.5], [-0.5, 1.0]])

    with pytest.raises(dc.InvariantError):
        dc.AffinityMatrix([[np.inf]])


def test_assignment_range():
    with pytest.raises(dc.InvariantError):
        dc.Assignment([0, 2], 2)

    assert dc.Assignment([0, 2]).K == 3


def test_canonicalize_examples():
    assert dc.canonicalize(dc.Assignment([1, 1, 0, 2], 3)).labels.tolist() == [0, 0, 1, 2]
    assert dc.canonicalize(dc.Assignment([0, 0, 0], 3)).labels.tolist() == [0, 0, 0]


@given(labelings)
def test_canonicalize_is_idempotent(labels):
    once = dc.canonicalize(dc.Assignment(labels, 4))

    assert once.is_canonical
    assert dc.canonicalize(once) == once


def test_canonicalize_keeps_the_partition():
    for n in range(1, 7):
        for K in range(1, 4):
            for labels in all_assignments(n, K):
                a = dc.Assignment(labels, K)
                assert dc.canonicalize(a).partition() == a.partition()


@pytest.mark.parametrize("n, K, count", [(4, 2, 8), (5, 3, 41), (6, 2, 32), (3, 5, 5), (1, 1, 1)])
def test_restricted_growth_strings_count(n, K, count):
    strings = list(restricted_growth_strings(n, K))

    assert len(strings) == count
    assert strings == sorted(strings)
    assert all(dc.Assignment(s, K).is_canonical for s in strings)


def test_restricted_growth_strings_empty():
    assert list(restricted_growth_strings(0, 3)) == [()]


def test_solution_round_trip(tmp_path):
    solution = dc.Solution(
        objective=12.345678901234,
        status=dc.SolveStatus.OPTIMAL,
        assignment=dc.Assignment([0, 1, 1, 0], 2),
        omega=dc.AffinityMatrix([[1.5, 0.25], [0.25, 0.5]]),
    )
    path = tmp_path / "graph.sol"

    dc.write_solution(solution, path)
    read = dc.read_solution(path)

    assert read.objective == pytest.approx(solution.objective, rel=1e-11)
    assert read.status is dc.SolveStatus.OPTIMAL
    assert read.assignment == solution.assignment
    assert read.omega == solution.omega


def test_solution_rejects_instances(tmp_path):
    with pytest.raises(dc.ParseError):
        dc.read_solution(_write(tmp_path, SINGLE_EDGE))
