"""Conditional localization tests for conditional generative models."""

from colt.baselines import C2stConfig, c2st_test, sbc_test, tarp_test
from colt.benchmarks import (
    BenchmarkTask,
    PerturbationSpec,
    make_task,
    perturbed_sampler,
    sample_joint,
    true_sampler,
)
from colt.core import (
    ColtModel,
    SampleBatch,
    TrainConfig,
    acld_distance,
    ball_rank,
    colt_test,
    colt_train,
)
from colt.errors import (
    ColtError,
    ConfigurationError,
    ContractError,
    InsufficientDataError,
    ShapeError,
    TrainingDivergedError,
)
from colt.stats import TestReport, ks_pvalue, ks_statistic, sinkhorn_divergence

__all__ = [
    "BenchmarkTask",
    "C2stConfig",
    "ColtError",
    "ColtModel",
    "ConfigurationError",
    "ContractError",
    "InsufficientDataError",
    "PerturbationSpec",
    "SampleBatch",
    "ShapeError",
    "TestReport",
    "TrainConfig",
    "TrainingDivergedError",
    "acld_distance",
    "ball_rank",
    "c2st_test",
    "colt_test",
    "colt_train",
    "ks_pvalue",
    "ks_statistic",
    "make_task",
    "perturbed_sampler",
    "sample_joint",
    "sbc_test",
    "sinkhorn_divergence",
    "tarp_test",
    "true_sampler",
]
