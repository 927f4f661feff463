"""Training-free steering of diffusion samplers toward high-reward regions.

The backward chain of a diffusion model conditioned on a terminal event E
follows the same transition kernels with the score replaced by
score + grad log h, where h(x, t) is the probability of E given the current
state. This package estimates that correction by Monte Carlo lookaheads at
sampling time, needing nothing but the score function itself, and ships
closed-form linear-Gaussian oracles so every estimator can be checked
against exact answers.
"""

from .config import (
    ExperimentConfig,
    RunSpec,
    SweepSpec,
    build_config,
    load_config,
    validate_for_steer,
)
from .doob import (
    DoobConfig,
    DoobEstimate,
    estimate_rollout,
    estimate_surrogate,
    truncation_level,
)
from .errors import (
    ConfigError,
    DegenerateKernelError,
    DegenerateTransitionError,
    LowAcceptanceError,
    NonMonotoneScheduleError,
    RewardBoundError,
    ScheduleInconsistencyError,
    SteeringError,
    UnsupportedOperationError,
)
from .kernels import (
    KernelKind,
    TransitionMoments,
    ddim_moments,
    edm_sigmas,
    euler_ancestral_moments,
    kernel_step,
    step_stds,
    surrogate_x0,
    transition_coeffs,
    transition_logdensity_grad,
    transition_moments,
    tweedie_x0,
)
from .metrics import RewardSummary, ks_statistic, summary_stats, tv_histogram, wasserstein_1d
from .oracle import (
    AffineLaw,
    affine_step_law,
    backward_affine_law,
    compose_affine,
    data_law_sample,
    exact_acceptance_rate,
    exact_grad_log_h,
    exact_h,
    exact_log_h,
    finite_difference_grad,
    linear_reward_bound,
    rejection_sample_target,
    sample_tilted_target,
    tilted_gaussian_target,
)
from .reward import (
    HSpec,
    RewardSpec,
    acceptance_event,
    eval_reward,
    linear_reward,
    named_reward,
    quadratic_reward,
    register_reward,
    shifted_weights,
    terminal_h,
    threshold_reward,
)
from .sampler import (
    SampleBatch,
    best_of_k,
    sample_doit,
    sample_doit_prototypical,
    sample_vanilla,
)
from .schedule import NoiseSchedule, kappa_sigma, make_schedule
from .score import (
    ScoreEval,
    ScoreModel,
    eval_score,
    external_model,
    gaussian_model,
    gmm_model,
    register_score,
    score_jacobian,
)

__version__ = "0.1.0"

__all__ = [
    "AffineLaw",
    "ConfigError",
    "DegenerateKernelError",
    "DegenerateTransitionError",
    "DoobConfig",
    "DoobEstimate",
    "ExperimentConfig",
    "HSpec",
    "KernelKind",
    "LowAcceptanceError",
    "NoiseSchedule",
    "NonMonotoneScheduleError",
    "RewardBoundError",
    "RewardSpec",
    "RewardSummary",
    "RunSpec",
    "SampleBatch",
    "ScheduleInconsistencyError",
    "ScoreEval",
    "ScoreModel",
    "SteeringError",
    "SweepSpec",
    "TransitionMoments",
    "UnsupportedOperationError",
    "acceptance_event",
    "affine_step_law",
    "backward_affine_law",
    "best_of_k",
    "build_config",
    "compose_affine",
    "data_law_sample",
    "ddim_moments",
    "edm_sigmas",
    "estimate_rollout",
    "estimate_surrogate",
    "eval_reward",
    "eval_score",
    "exact_acceptance_rate",
    "exact_grad_log_h",
    "exact_h",
    "exact_log_h",
    "external_model",
    "finite_difference_grad",
    "gaussian_model",
    "gmm_model",
    "kappa_sigma",
    "kernel_step",
    "ks_statistic",
    "linear_reward",
    "linear_reward_bound",
    "load_config",
    "make_schedule",
    "named_reward",
    "quadratic_reward",
    "register_reward",
    "register_score",
    "rejection_sample_target",
    "sample_doit",
    "sample_doit_prototypical",
    "sample_tilted_target",
    "sample_vanilla",
    "score_jacobian",
    "shifted_weights",
    "step_stds",
    "summary_stats",
    "surrogate_x0",
    "terminal_h",
    "threshold_reward",
    "tilted_gaussian_target",
    "transition_coeffs",
    "transition_logdensity_grad",
    "transition_moments",
    "truncation_level",
    "tv_histogram",
    "tweedie_x0",
    "validate_for_steer",
    "wasserstein_1d",
]
