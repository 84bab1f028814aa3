import enum
import functools
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from dcsbm.exceptions import InvariantError, ParseError
from dcsbm.utils import atomic_write

__all__ = (
    "Graph",
    "Assignment",
    "AffinityMatrix",
    "Instance",
    "Solution",
    "SolveStatus",
    "read_instance",
    "write_instance",
    "read_solution",
    "write_solution",
    "canonicalize",
    "restricted_growth_strings",
    "all_assignments",
)

logger = logging.getLogger(__name__)

INSTANCE_MAGIC = "dcsbm-instance v1"
SOLUTION_MAGIC = "dcsbm-solution v1"


def _frozen(array):
    array.setflags(write=False)
    return array


class Graph:
    """
    Undirected multigraph stored as a symmetric adjacency count matrix.

    ``adj[i, j]`` is the multiplicity of edge {i, j}; ``adj[i, i]`` is twice the
    number of self-loops at i, so that ``adj.sum() == 2 * m``.
    """

    def __init__(self, adj):
        adj = np.asarray(adj)

        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise InvariantError("adjacency must be a square matrix, got shape {}".format(adj.shape))

        if not np.issubdtype(adj.dtype, np.integer):
            rounded = np.rint(adj)
            if not np.array_equal(rounded, adj):
                raise InvariantError("adjacency entries must be integers")
            adj = rounded

        adj = np.array(adj, dtype=np.int64)

        if np.any(adj < 0):
            raise InvariantError("adjacency entries must be nonnegative")
        if not np.array_equal(adj, adj.T):
            raise InvariantError("adjacency must be symmetric")
        if np.any(np.diag(adj) % 2):
            raise InvariantError("diagonal entries count self-loops twice and must be even")

        self.adj = _frozen(adj)
        self.degrees = _frozen(adj.sum(axis=1))
        self.m = int(adj.sum()) // 2

    @classmethod
    def from_edges(cls, n, edges):
        """``edges`` holds 0-indexed ``(i, j, count)``; ``i == j`` means ``count`` self-loops."""
        adj = np.zeros((n, n), dtype=np.int64)

        for i, j, count in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise InvariantError("edge ({}, {}) out of range for n={}".format(i, j, n))
            if i == j:
                adj[i, i] += 2 * count
            else:
                adj[i, j] += count
                adj[j, i] += count

        return cls(adj)

    @property
    def n(self):
        return self.adj.shape[0]

    def edges(self) -> Iterator[tuple]:
        """Yields 0-indexed ``(i, j, count)`` with ``i <= j``; self-loops as loop counts."""
        rows, cols = np.nonzero(np.triu(self.adj))

        for i, j in zip(rows.tolist(), cols.tolist()):
            count = int(self.adj[i, j])
            yield i, j, count // 2 if i == j else count

    @functools.cached_property
    def expected(self):
        """Configuration-model expected edge counts ``k_i k_j / 2m``."""
        if self.m == 0:
            return _frozen(np.zeros((self.n, self.n)))

        k = self.degrees.astype(float)
        return _frozen(np.outer(k, k) / (2.0 * self.m))

    @functools.cached_property
    def _neighbor_lists(self):
        lists = []

        for i in range(self.n):
            row = self.adj[i].copy()
            row[i] = 0
            idx = np.flatnonzero(row)
            lists.append((_frozen(idx), _frozen(row[idx])))

        return lists

    def neighbors(self, i):
        """``(indices, multiplicities)`` of the vertices adjacent to i, excluding i itself."""
        return self._neighbor_lists[i]

    def isolated(self):
        return np.flatnonzero(self.degrees == 0)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return np.array_equal(self.adj, other.adj)

    __hash__ = None

    def __repr__(self):
        return "Graph(n={}, m={})".format(self.n, self.m)


class Assignment:
    """Community label per vertex, 0-indexed, with ``K`` available communities."""

    def __init__(self, labels, K=None):
        labels = np.array(labels, dtype=np.int64).reshape(-1)

        if K is None:
            K = int(labels.max()) + 1 if labels.size else 1

        if K < 1:
            raise InvariantError("K must be at least 1, got {}".format(K))
        if labels.size and (labels.min() < 0 or labels.max() >= K):
            raise InvariantError("labels must lie in [0, {}), got {}".format(K, labels.tolist()))

        self.labels = _frozen(labels)
        self.K = int(K)

    @property
    def n(self):
        return self.labels.size

    @property
    def is_canonical(self):
        """True when the labels form a restricted-growth string."""
        seen = -1

        for label in self.labels.tolist():
            if label > seen + 1:
                return False
            seen = max(seen, label)

        return True

    def groups_used(self):
        return int(np.unique(self.labels).size)

    def one_hot(self):
        z = np.zeros((self.n, self.K), dtype=np.int64)
        z[np.arange(self.n), self.labels] = 1
        return z

    def partition(self):
        """The set partition as a frozenset of frozensets of vertices."""
        blocks = {}

        for vertex, label in enumerate(self.labels.tolist()):
            blocks.setdefault(label, set()).add(vertex)

        return frozenset(frozenset(block) for block in blocks.values())

    def __eq__(self, other):
        if not isinstance(other, Assignment):
            return NotImplemented
        return self.K == other.K and np.array_equal(self.labels, other.labels)

    __hash__ = None

    def __repr__(self):
        return "Assignment({}, K={})".format((self.labels + 1).tolist(), self.K)


class AffinityMatrix:
    """Symmetric K x K matrix of nonnegative Poisson rate multipliers."""

    def __init__(self, omega):
        omega = np.array(omega, dtype=float)

        if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
            raise InvariantError("affinity matrix must be square, got shape {}".format(omega.shape))
        if not np.all(np.isfinite(omega)):
            raise InvariantError("affinity matrix entries must be finite")
        if np.any(omega < 0):
            raise InvariantError("affinity matrix entries must be nonnegative")
        if not np.allclose(omega, omega.T, rtol=0, atol=1e-12):
            raise InvariantError("affinity matrix must be symmetric")

        self.omega = _frozen((omega + omega.T) / 2.0)

    @classmethod
    def constant(cls, K, value):
        return cls(np.full((K, K), float(value)))

    @property
    def K(self):
        return self.omega.shape[0]

    def __eq__(self, other):
        if not isinstance(other, AffinityMatrix):
            return NotImplemented
        return np.array_equal(self.omega, other.omega)

    __hash__ = None

    def __repr__(self):
        return "AffinityMatrix({})".format(self.omega.tolist())


@dataclass(frozen=True, eq=False)
class Instance:
    graph: Graph
    K: int
    ground_truth: Optional[Assignment] = None
    gen_omega: Optional[AffinityMatrix] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.K < 1:
            raise InvariantError("K must be at least 1")

        if self.ground_truth is not None:
            if self.ground_truth.n != self.graph.n:
                raise InvariantError(
                    "ground truth has {} labels for {} vertices".format(
                        self.ground_truth.n, self.graph.n
                    )
                )
            if self.ground_truth.K > self.K:
                raise InvariantError("ground truth uses K={} > {}".format(self.ground_truth.K, self.K))

        if self.gen_omega is not None and self.gen_omega.K != self.K:
            raise InvariantError("generating affinity matrix must be {0}x{0}".format(self.K))

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented

        return (
            self.graph == other.graph
            and self.K == other.K
            and self.ground_truth == other.ground_truth
            and self.gen_omega == other.gen_omega
            and self.seed == other.seed
        )

    __hash__ = None


class SolveStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    TIME_LIMIT = "time-limit"


@dataclass(frozen=True, eq=False)
class Solution:
    """What a solution file records: objective, status, labels and affinity matrix."""

    objective: float
    status: SolveStatus
    assignment: Assignment
    omega: AffinityMatrix


def canonicalize(a: Assignment) -> Assignment:
    """Relabel communities in order of first occurrence (restricted-growth form)."""
    mapping = {}
    labels = []

    for label in a.labels.tolist():
        if label not in mapping:
            mapping[label] = len(mapping)
        labels.append(mapping[label])

    return Assignment(labels, a.K)


def restricted_growth_strings(n, K) -> Iterator[tuple]:
    """All canonical labelings of n vertices using at most K labels, in lexicographic order."""
    if n == 0:
        yield ()
        return

    labels = [0] * n

    def extend(depth, used):
        if depth == n:
            yield tuple(labels)
            return

        for label in range(min(used + 1, K)):
            labels[depth] = label
            yield from extend(depth + 1, max(used, label + 1))

    yield from extend(1, 1)


def all_assignments(n, K) -> Iterator[tuple]:
    return itertools.product(range(K), repeat=n)


# -- file formats -----------------------------------------------------------------------


def _format_real(value):
    return repr(float(value))


class _Lines:
    """Numbered non-blank lines of a text file."""

    def __init__(self, text):
        self._lines = [
            (number, line.strip())
            for number, line in enumerate(text.splitlines(), start=1)
            if line.strip()
        ]
        self._position = 0

    def next(self, what):
        if self._position >= len(self._lines):
            last = self._lines[-1][0] if self._lines else 0
            raise ParseError("unexpected end of file, expected {}".format(what), last + 1)

        item = self._lines[self._position]
        self._position += 1
        return item

    def exhausted(self):
        return self._position >= len(self._lines)


def _parse_int(token, line, what):
    try:
        return int(token)
    except ValueError:
        raise ParseError("{} must be an integer, got {!r}".format(what, token), line) from None


def _parse_real(token, line, what):
    try:
        return float(token)
    except ValueError:
        raise ParseError("{} must be a real number, got {!r}".format(what, token), line) from None


def _parse_matrix(lines, K, what):
    rows = []

    for _ in range(K):
        number, line = lines.next(what)
        tokens = line.split()

        if len(tokens) != K:
            raise ParseError("{} row needs {} entries, got {}".format(what, K, len(tokens)), number)

        rows.append([_parse_real(token, number, what) for token in tokens])

    return np.array(rows, dtype=float), number


def _parse_labels(tokens, n, K, number):
    if len(tokens) != n:
        raise ParseError("expected {} labels, got {}".format(n, len(tokens)), number)

    labels = [_parse_int(token, number, "label") - 1 for token in tokens]

    try:
        return Assignment(labels, K)
    except InvariantError as e:
        raise ParseError(str(e), number) from None


def read_instance(path) -> Instance:
    lines = _Lines(Path(path).read_text(encoding="utf-8"))

    number, line = lines.next("header")
    if line != INSTANCE_MAGIC:
        raise ParseError("expected {!r}".format(INSTANCE_MAGIC), number)

    number, line = lines.next("size line")
    tokens = line.split()
    if len(tokens) != 8 or tokens[0::2] != ["n", "m", "K", "seed"]:
        raise ParseError("expected 'n <n> m <m> K <K> seed <seed|none>'", number)

    n = _parse_int(tokens[1], number, "n")
    header_m = _parse_int(tokens[3], number, "m")
    K = _parse_int(tokens[5], number, "K")
    seed = None if tokens[7] == "none" else _parse_int(tokens[7], number, "seed")

    if n < 0 or K < 1:
        raise ParseError("n must be >= 0 and K >= 1", number)

    number, line = lines.next("ground-truth line")
    tokens = line.split()
    if not tokens or tokens[0] != "ground-truth":
        raise ParseError("expected 'ground-truth ...'", number)
    truth = None if tokens[1:] == ["none"] else _parse_labels(tokens[1:], n, K, number)

    number, line = lines.next("gen-omega line")
    if line == "gen-omega none":
        gen_omega = None
    elif line == "gen-omega":
        matrix, number = _parse_matrix(lines, K, "gen-omega")
        try:
            gen_omega = AffinityMatrix(matrix)
        except InvariantError as e:
            raise ParseError(str(e), number) from None
    else:
        raise ParseError("expected 'gen-omega' or 'gen-omega none'", number)

    number, line = lines.next("edges section")
    if line != "edges":
        raise ParseError("expected 'edges'", number)

    edges = []
    seen = {}
    while True:
        number, line = lines.next("'end'")
        if line == "end":
            break

        tokens = line.split()
        if len(tokens) != 3:
            raise ParseError("edge lines are '<i> <j> <count>'", number)

        i, j, count = (_parse_int(token, number, "edge field") for token in tokens)

        if not (1 <= i <= j <= n):
            raise ParseError("edge ({}, {}) needs 1 <= i <= j <= {}".format(i, j, n), number)
        if count < 1:
            raise ParseError("edge count must be positive", number)
        if (i, j) in seen:
            raise ParseError("edge ({}, {}) already listed on line {}".format(i, j, seen[(i, j)]), number)
        seen[(i, j)] = number

        edges.append((i - 1, j - 1, count))

    if not lines.exhausted():
        number, _ = lines.next("nothing")
        raise ParseError("trailing content after 'end'", number)

    graph = Graph.from_edges(n, edges)

    if graph.m != header_m:
        raise InvariantError(
            "header says m={} but the edge section sums to {}".format(header_m, graph.m)
        )

    logger.debug("read instance %s: n=%d m=%d K=%d", path, n, graph.m, K)
    return Instance(graph=graph, K=K, ground_truth=truth, gen_omega=gen_omega, seed=seed)


def write_instance(inst: Instance, path) -> None:
    graph = inst.graph
    out = [
        INSTANCE_MAGIC,
        "n {} m {} K {} seed {}".format(
            graph.n, graph.m, inst.K, "none" if inst.seed is None else int(inst.seed)
        ),
    ]

    if inst.ground_truth is None:
        out.append("ground-truth none")
    else:
        out.append(
            " ".join(["ground-truth"] + [str(label + 1) for label in inst.ground_truth.labels.tolist()])
        )

    if inst.gen_omega is None:
        out.append("gen-omega none")
    else:
        out.append("gen-omega")
        out.extend(" ".join(_format_real(v) for v in row) for row in inst.gen_omega.omega.tolist())

    out.append("edges")
    out.extend("{} {} {}".format(i + 1, j + 1, count) for i, j, count in graph.edges())
    out.append("end")

    with atomic_write(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(out) + "\n")


def write_solution(solution: Solution, path) -> None:
    out = [
        SOLUTION_MAGIC,
        "objective {:.12g}".format(solution.objective),
        "status {}".format(SolveStatus(solution.status).value),
        " ".join(["labels"] + [str(label + 1) for label in solution.assignment.labels.tolist()]),
        "omega {}".format(solution.omega.K),
    ]
    out.extend(" ".join(_format_real(v) for v in row) for row in solution.omega.omega.tolist())

    with atomic_write(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(out) + "\n")


def read_solution(path) -> Solution:
    lines = _Lines(Path(path).read_text(encoding="utf-8"))

    number, line = lines.next("header")
    if line != SOLUTION_MAGIC:
        raise ParseError("expected {!r}".format(SOLUTION_MAGIC), number)

    number, line = lines.next("objective line")
    tokens = line.split()
    if len(tokens) != 2 or tokens[0] != "objective":
        raise ParseError("expected 'objective <value>'", number)
    objective = _parse_real(tokens[1], number, "objective")

    number, line = lines.next("status line")
    tokens = line.split()
    if len(tokens) != 2 or tokens[0] != "status":
        raise ParseError("expected 'status <optimal|feasible|time-limit>'", number)
    try:
        status = SolveStatus(tokens[1])
    except ValueError:
        raise ParseError("unknown status {!r}".format(tokens[1]), number) from None

    labels_number, line = lines.next("labels line")
    label_tokens = line.split()
    if not label_tokens or label_tokens[0] != "labels":
        raise ParseError("expected 'labels ...'", labels_number)

    number, line = lines.next("omega line")
    tokens = line.split()
    if len(tokens) != 2 or tokens[0] != "omega":
        raise ParseError("expected 'omega <K>'", number)
    K = _parse_int(tokens[1], number, "K")

    assignment = _parse_labels(label_tokens[1:], len(label_tokens) - 1, K, labels_number)
    matrix, number = _parse_matrix(lines, K, "omega")

    try:
        omega = AffinityMatrix(matrix)
    except InvariantError as e:
        raise ParseError(str(e), number) from None

    return Solution(objective=objective, status=status, assignment=assignment, omega=omega)
