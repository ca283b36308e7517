"""Natural evolution strategies with hard thresholding for L0-constrained fitness maximization."""

__version__ = "0.1.0"

from .core import (
    FitnessProblem,
    RngStream,
    SparsityMask,
    derive_stream,
    feature_group_norms,
    l0_norm,
)
from .estimator import (
    EstimatorConfig,
    GradientEstimate,
    averaged_estimate,
    empirical_estimator_variance,
    sample_estimates,
    sample_perturbation,
    single_estimate,
)
from .ht import HtConfig, k_from_ratio, trunc
from .optimizer import (
    OptimizerConfig,
    OptimizerState,
    RunRecord,
    initial_state,
    run,
    stationarity_proxy,
    step,
)
from .problems import (
    BoundedStep,
    ConstantFitness,
    LinearFitness,
    MultiStepChain,
    NoisyLinearBandit,
    SparseQuadratic,
    augment_with_noise,
    make_theta_star,
    multi_step_chain,
    sparse_reward_mask,
)
from .theory import (
    episode_complexity,
    lipschitz_probe,
    smoothing_oracle,
    measured_variance_bound,
    smoothness_constant,
    theorem_budget,
    theorem_constants,
    variance_bound,
)
