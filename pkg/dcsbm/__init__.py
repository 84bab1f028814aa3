from dcsbm.bases import Base
from dcsbm.em import EmConfig, EmVariant, TrialResult, TrialSummary, em_exact, em_ls1, em_ls2, run_trials
from dcsbm.evaluation import BenchmarkBudgets, agreement, compute_gaps, run_benchmark
from dcsbm.exact import ExactConfig, SolveReport, VertexOrder, solve_estep_exact, solve_exact
from dcsbm.exceptions import (
    ConfigError,
    DcsbmException,
    DegenerateGraphError,
    InvariantError,
    ParseError,
    RejectionBudgetExceeded,
    TimeLimitReached,
)
from dcsbm.fields import Choice, Field, Flag, Float, Integer, Of, Vector
from dcsbm.generator import GeneratorConfig, S1Pair, S2Strength, Strength, generate
from dcsbm.instance import (
    AffinityMatrix,
    Assignment,
    Graph,
    Instance,
    Solution,
    SolveStatus,
    canonicalize,
    read_instance,
    read_solution,
    write_instance,
    write_solution,
)
from dcsbm.likelihood import constant_term, log_likelihood, m_step, profile_log_likelihood
from dcsbm.relaxation import build_bounds, export_milp, separate_cuts
from dcsbm.validators import Validator

__all__ = (
    "DcsbmException",
    "ConfigError",
    "ParseError",
    "InvariantError",
    "DegenerateGraphError",
    "RejectionBudgetExceeded",
    "TimeLimitReached",
    "Validator",
    "Field",
    "Integer",
    "Float",
    "Flag",
    "Choice",
    "Of",
    "Vector",
    "Base",
    "Graph",
    "Assignment",
    "AffinityMatrix",
    "Instance",
    "Solution",
    "SolveStatus",
    "canonicalize",
    "read_instance",
    "write_instance",
    "read_solution",
    "write_solution",
    "constant_term",
    "log_likelihood",
    "m_step",
    "profile_log_likelihood",
    "build_bounds",
    "export_milp",
    "separate_cuts",
    "GeneratorConfig",
    "S1Pair",
    "S2Strength",
    "Strength",
    "generate",
    "ExactConfig",
    "VertexOrder",
    "SolveReport",
    "solve_exact",
    "solve_estep_exact",
    "EmConfig",
    "EmVariant",
    "TrialResult",
    "TrialSummary",
    "em_ls1",
    "em_ls2",
    "em_exact",
    "run_trials",
    "BenchmarkBudgets",
    "agreement",
    "compute_gaps",
    "run_benchmark",
)
