"""Two-sample tests for distributions supported on low-dimensional manifolds."""

from .critic import (
    CriticArchitecture,
    CriticParams,
    TrainConfig,
    hyperparams_from_theory,
    project_to_class,
    train_critic,
)
from .errors import ManifoldTestError
from .holder import GridFunctionFamily, oracle_ipm, verify_holder_membership
from .manifold import (
    Atlas,
    DiscreteMass,
    DistributionSpec,
    ManifoldDescriptor,
    Sample,
    build_circle_atlas,
    build_sphere_atlas,
    chart_masses,
    partition_weights,
    push_to_chart,
    sample_distribution,
)
from .seeding import derive_seed, make_rng
from .testkit import (
    TestLevel,
    TestReport,
    ThresholdSpec,
    bootstrap_threshold,
    holder_test,
    nn_test,
    threshold_step1,
    threshold_step2,
    two_step_test,
)
from .transport import WeightedPointCloud, l2_divergence, projected_T, wasserstein1

__version__ = "0.1.0"

__all__ = [
    "Atlas",
    "CriticArchitecture",
    "CriticParams",
    "DiscreteMass",
    "DistributionSpec",
    "GridFunctionFamily",
    "ManifoldDescriptor",
    "ManifoldTestError",
    "Sample",
    "TestLevel",
    "TestReport",
    "ThresholdSpec",
    "TrainConfig",
    "WeightedPointCloud",
    "bootstrap_threshold",
    "build_circle_atlas",
    "build_sphere_atlas",
    "chart_masses",
    "derive_seed",
    "holder_test",
    "hyperparams_from_theory",
    "l2_divergence",
    "make_rng",
    "nn_test",
    "oracle_ipm",
    "partition_weights",
    "project_to_class",
    "projected_T",
    "push_to_chart",
    "sample_distribution",
    "threshold_step1",
    "threshold_step2",
    "train_critic",
    "two_step_test",
    "verify_holder_membership",
    "wasserstein1",
]
