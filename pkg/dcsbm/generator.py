import enum
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from dcsbm.bases import Base
from dcsbm.exceptions import ConfigError, RejectionBudgetExceeded
from dcsbm.fields import Flag, Integer, Of, Vector
from dcsbm.instance import AffinityMatrix, Assignment, Graph, Instance, write_instance
from dcsbm.utils import atomic_write, derive_seed, make_rng

__all__ = (
    "S1Pair",
    "Strength",
    "S2Strength",
    "StrengthRanges",
    "STRENGTH_RANGES",
    "GeneratorConfig",
    "SuiteEntry",
    "sample_omega",
    "sample_graph",
    "generate",
    "suite_configs",
    "write_suite",
    "SUITES",
)

logger = logging.getLogger(__name__)

REJECTION_BUDGET = 10_000
S1_HALF_WIDTH = 0.1
S1_LEVELS = (0.1, 0.4, 0.6, 0.9)
REPLICATES = 10


@dataclass(frozen=True)
class S1Pair:
    omega_in: float
    omega_out: float


class Strength(str, enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class S2Strength:
    strength: Strength

    def __post_init__(self):
        object.__setattr__(self, "strength", Strength(self.strength))


@dataclass(frozen=True)
class StrengthRanges:
    diag_range: tuple
    offdiag_range: tuple


STRENGTH_RANGES = {
    Strength.LOW: StrengthRanges(diag_range=(0.4, 1.0), offdiag_range=(0.2, 0.4)),
    Strength.MEDIUM: StrengthRanges(diag_range=(0.6, 1.0), offdiag_range=(0.1, 0.3)),
    Strength.HIGH: StrengthRanges(diag_range=(0.8, 1.0), offdiag_range=(0.0, 0.2)),
}


class GeneratorConfig(Base):
    n = Integer().min(1)
    K = Integer().min(1).ref("n", lambda K, n: K <= n, "K must not exceed n")
    omega_spec = Of(S1Pair, S2Strength, AffinityMatrix)
    theta = Vector().optional().positive()
    seed = Integer().min(0).default(0)
    reject_isolated = Flag().default(True)
    reject_empty_truth = Flag().default(True)

    def validate(self, attrs):
        if attrs["theta"] is not None:
            assert attrs["theta"].size == attrs["n"], "theta needs one entry per vertex"

        spec = attrs["omega_spec"]
        if isinstance(spec, S1Pair):
            assert attrs["K"] == 2, "S1 affinity pairs need K=2"
        if isinstance(spec, AffinityMatrix):
            assert spec.K == attrs["K"], "affinity matrix must be KxK"

    @property
    def propensities(self):
        if self.theta is None:
            return np.ones(self.n)
        return self.theta


def _uniform(rng, low, high, size=None):
    # half-open [low, high); a degenerate interval gives exactly low
    if low == high:
        return np.full(size, float(low)) if size is not None else float(low)
    return rng.uniform(low, high, size=size)


def sample_omega(cfg: GeneratorConfig, rng) -> AffinityMatrix:
    """
    Draw an affinity matrix. Diagonal entries come first, then the upper
    triangle in row-major order; everything is clamped at 0 from below.
    """
    spec = cfg.omega_spec
    K = cfg.K

    if isinstance(spec, AffinityMatrix):
        return spec

    if isinstance(spec, S1Pair):
        if K != 2:
            raise ConfigError("S1 affinity pairs need K=2, got K={}".format(K))

        diagonal = _uniform(rng, spec.omega_in - S1_HALF_WIDTH, spec.omega_in + S1_HALF_WIDTH, size=2)
        off = _uniform(rng, spec.omega_out - S1_HALF_WIDTH, spec.omega_out + S1_HALF_WIDTH, size=1)
    else:
        ranges = STRENGTH_RANGES[spec.strength]
        diagonal = _uniform(rng, *ranges.diag_range, size=K)
        off = _uniform(rng, *ranges.offdiag_range, size=K * (K - 1) // 2)

    omega = np.diag(diagonal)
    rows, cols = np.triu_indices(K, k=1)
    omega[rows, cols] = off
    omega[cols, rows] = off

    return AffinityMatrix(np.maximum(omega, 0.0))


def sample_graph(cfg: GeneratorConfig, omega: AffinityMatrix, truth: Assignment, rng) -> Graph:
    """Poisson edge counts with mean ``theta_i theta_j w_{g_i g_j}``; self-loops with half that mean."""
    theta = cfg.propensities
    rates = np.outer(theta, theta) * omega.omega[np.ix_(truth.labels, truth.labels)]

    rows, cols = np.triu_indices(cfg.n, k=1)
    counts = rng.poisson(rates[rows, cols])
    loops = rng.poisson(0.5 * np.diag(rates))

    adj = np.zeros((cfg.n, cfg.n), dtype=np.int64)
    adj[rows, cols] = counts
    adj[cols, rows] = counts
    adj[np.diag_indices(cfg.n)] = 2 * loops

    return Graph(adj)


def _rejected(cfg: GeneratorConfig, truth: Assignment, graph: Optional[Graph]):
    if cfg.reject_empty_truth and truth.groups_used() < cfg.K:
        return "empty community"
    if graph is None:
        return None
    if graph.m == 0:
        return "no edges"
    if cfg.reject_isolated and graph.isolated().size:
        return "isolated vertex"
    return None


def generate(cfg: GeneratorConfig, rng=None) -> Instance:
    """
    Draw truth labels uniformly per vertex, then the affinity matrix, then the
    edges; redraw everything until the rejection flags are satisfied.
    """
    rng = rng if rng is not None else make_rng(cfg.seed)

    for attempt in range(REJECTION_BUDGET):
        truth = Assignment(rng.integers(0, cfg.K, size=cfg.n), cfg.K)
        omega = sample_omega(cfg, rng)

        reason = _rejected(cfg, truth, None)
        if reason is None:
            graph = sample_graph(cfg, omega, truth, rng)
            reason = _rejected(cfg, truth, graph)

        if reason is None:
            logger.debug("generated n=%d m=%d after %d rejections", cfg.n, graph.m, attempt)
            return Instance(graph=graph, K=cfg.K, ground_truth=truth, gen_omega=omega, seed=cfg.seed)

    raise RejectionBudgetExceeded(
        "no acceptable instance in {} draws (n={}, K={})".format(REJECTION_BUDGET, cfg.n, cfg.K)
    )


# -- suites -----------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteEntry:
    id: str
    suite: str
    config: GeneratorConfig
    omega_in: Optional[float] = None
    omega_out: Optional[float] = None
    strength: Optional[str] = None


def _s1_cells(sizes):
    pairs = [(w_in, w_out) for w_in, w_out in itertools.product(S1_LEVELS, repeat=2) if w_in != w_out]

    for n, (w_in, w_out) in itertools.product(sizes, pairs):
        spec = S1Pair(w_in, w_out)
        yield dict(n=n, K=2, omega_spec=spec), dict(omega_in=w_in, omega_out=w_out)


def _s2_cells(sizes):
    for K, n, strength in itertools.product((2, 3), sizes, Strength):
        yield dict(n=n, K=K, omega_spec=S2Strength(strength)), dict(strength=strength.value)


def _custom_cells(definitions):
    """
    Custom cells come from a config file: ``n``, ``K`` and one of
    ``omega_in``/``omega_out``, ``strength`` or an explicit ``omega`` matrix.
    """
    for definition in definitions:
        params = {str(key).replace("-", "_"): value for key, value in dict(definition).items()}
        labels = {}

        if "omega" in params:
            params["omega_spec"] = AffinityMatrix(params.pop("omega"))
        elif "strength" in params:
            labels["strength"] = Strength(params.pop("strength")).value
            params["omega_spec"] = S2Strength(labels["strength"])
        elif "omega_in" in params and "omega_out" in params:
            labels = dict(omega_in=params.pop("omega_in"), omega_out=params.pop("omega_out"))
            params["omega_spec"] = S1Pair(**labels)
        else:
            raise ConfigError("custom instances need omega, strength or omega_in/omega_out")

        yield params, labels


SUITES = {
    "s1": lambda: _s1_cells((8, 10, 12, 14, 16)),
    "s1-desk": lambda: _s1_cells((8, 10, 12)),
    "s2": lambda: _s2_cells((8, 10, 12, 14, 16)),
    "s2-desk": lambda: _s2_cells((8, 10, 12)),
}


def suite_configs(
    suite, seed, replicates=REPLICATES, reject_isolated=True, reject_empty_truth=True, custom=None
) -> Iterator[SuiteEntry]:
    """
    The instances of a named suite in a fixed order. ``custom`` lists the cell
    definitions of the ``custom`` suite.
    """
    if suite == "custom":
        if not custom:
            raise ConfigError("the custom suite needs at least one instance definition")
        cells = _custom_cells(custom)
    elif suite in SUITES:
        cells = SUITES[suite]()
    else:
        raise ConfigError("unknown suite {!r}, expected one of {}".format(suite, sorted(SUITES) + ["custom"]))

    index = 0
    for params, labels in cells:
        for _ in range(replicates):
            params = dict(params)
            params.setdefault("reject_isolated", reject_isolated)
            params.setdefault("reject_empty_truth", reject_empty_truth)
            params["seed"] = derive_seed(seed, index)

            yield SuiteEntry(
                id="{}-{:04d}".format(suite, index),
                suite=suite,
                config=GeneratorConfig.from_mapping(params),
                **labels,
            )
            index += 1


MANIFEST_COLUMNS = [
    "id",
    "path",
    "suite",
    "n",
    "K",
    "omega_in",
    "omega_out",
    "strength",
    "seed",
    "reject_isolated",
    "reject_empty_truth",
]


def write_suite(entries, output_dir) -> pd.DataFrame:
    """Generate every entry into ``output_dir`` and write ``manifest.csv`` next to the instances."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    rows = []

    for entry in entries:
        cfg = entry.config
        path = "{}.inst".format(entry.id)
        write_instance(generate(cfg), output_dir / path)

        rows.append(
            {
                "id": entry.id,
                "path": path,
                "suite": entry.suite,
                "n": cfg.n,
                "K": cfg.K,
                "omega_in": entry.omega_in,
                "omega_out": entry.omega_out,
                "strength": entry.strength,
                "seed": cfg.seed,
                "reject_isolated": cfg.reject_isolated,
                "reject_empty_truth": cfg.reject_empty_truth,
            }
        )

    manifest = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)

    with atomic_write(output_dir / "manifest.csv", "w", encoding="utf-8", newline="") as handle:
        manifest.to_csv(handle, index=False, lineterminator="\n")

    logger.info("wrote %d instances to %s", len(rows), output_dir)
    return manifest
