"""groupmatch: subset selection that makes groups statistically alike.

Given subjects or items partitioned into groups, with covariates attached,
this package searches for maximal subsets on which the groups pass a set of
statistical similarity criteria (e.g. Welch's t-test and the k-sample
Anderson-Darling test, each above a p threshold).  Random, greedy,
lookahead, and exhaustive strategies are provided, along with a synthetic
data generator and an evaluation harness.
"""

__version__ = "0.1.0"

from .criteria import (
    CriteriaSet,
    CriterionSpec,
    MatchConfig,
    SolutionRank,
    compare_solutions,
    compute_r,
    kl_divergence,
)
from .dataset import (
    ColumnSchema,
    Dataset,
    SubsetState,
    group_proportions,
    load_dataset,
    write_dataset,
)
from .errors import (
    BudgetExceededError,
    ConfigError,
    DataParseError,
    GenerationError,
    GroupMatchError,
    InfeasibleSubsetError,
    RegistrationError,
    UndefinedTestError,
    ValidationError,
)
from .harness import (
    AlgorithmSpec,
    EvalMetrics,
    build_default_criteria,
    evaluate_run,
    run_algorithm,
    run_experiment_grid,
)
from .search import (
    ExhaustiveEstimate,
    MatchResult,
    TraceStep,
    count_configurations,
    estimate_exhaustive,
    exhaustive_search,
    format_duration,
    greedy_search,
    lookahead_search,
    random_search,
)
from .stats import (
    TestFunction,
    TestRegistry,
    anderson_darling,
    anderson_darling_p,
    default_registry,
    register_test,
    welch_t,
    welch_t_p,
)
from .synthgen import (
    GeneratedData,
    SyntheticSpec,
    generate_dataset,
    random_pd_matrix,
    sample_mvn,
    write_generated,
)

__all__ = [
    "__version__",
    # dataset
    "ColumnSchema",
    "Dataset",
    "SubsetState",
    "group_proportions",
    "load_dataset",
    "write_dataset",
    # stats
    "TestFunction",
    "TestRegistry",
    "anderson_darling",
    "anderson_darling_p",
    "default_registry",
    "register_test",
    "welch_t",
    "welch_t_p",
    # criteria
    "CriteriaSet",
    "CriterionSpec",
    "MatchConfig",
    "SolutionRank",
    "compare_solutions",
    "compute_r",
    "kl_divergence",
    # search
    "ExhaustiveEstimate",
    "MatchResult",
    "TraceStep",
    "count_configurations",
    "estimate_exhaustive",
    "exhaustive_search",
    "format_duration",
    "greedy_search",
    "lookahead_search",
    "random_search",
    # synthgen
    "GeneratedData",
    "SyntheticSpec",
    "generate_dataset",
    "random_pd_matrix",
    "sample_mvn",
    "write_generated",
    # harness
    "AlgorithmSpec",
    "EvalMetrics",
    "build_default_criteria",
    "evaluate_run",
    "run_algorithm",
    "run_experiment_grid",
    # errors
    "GroupMatchError",
    "DataParseError",
    "ValidationError",
    "InfeasibleSubsetError",
    "UndefinedTestError",
    "RegistrationError",
    "BudgetExceededError",
    "GenerationError",
    "ConfigError",
]
