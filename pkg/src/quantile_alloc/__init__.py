"""Quantile-threshold policies for non-stationary online resource allocation."""

from .benchmarks import (
    BenchmarkValue,
    RegretReport,
    fluid_value,
    offline_optimum,
    regret_experiment,
    semi_fluid_value,
    simulate_replication,
)
from .estimation import ArrivalCounts, KernelCDF, count_types, kernel_update, uniform_prior
from .exceptions import (
    ConfigError,
    ConvergenceWarning,
    DataError,
    DomainError,
    EstimatorEmptyError,
    InvalidHistoryError,
    ScenarioError,
    SizeError,
)
from .fluid import (
    DiscreteRewards,
    FluidProblem,
    QuantileSolution,
    dual_objective,
    objective_value,
    primal_from_dual,
    solve_dual,
)
from .harness import ScalingFit, fit_scaling, load_scenarios, run_scenario
from .model import (
    ArrivalSchedule,
    HistoryStream,
    Instance,
    QueryType,
    RewardDist,
    SamplePath,
    example1_instance,
    expected_counts,
    sample_history,
    sample_path,
)
from .policies import (
    FullyAdaptivePolicy,
    PartialAdaptivePolicy,
    PolicyConfig,
    PolicyTrajectory,
    StaticThresholdPolicy,
    ThresholdRule,
    run_policy,
)

__version__ = "0.1.0"
