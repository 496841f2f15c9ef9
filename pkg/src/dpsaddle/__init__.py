"""Differentially private solvers for stochastic saddle-point problems and variational inequalities."""

from .geometry import (
    ConstraintSet,
    DomainError,
    LpGeometry,
    ProductGeometry,
    ProxError,
    combined_kappa,
    effective_exponent,
    grad_half_sq_norm,
    inverse_mirror_map,
    lp_ball,
    lp_norm,
    product,
    product_norm,
    prox_step,
    simplex,
)
from .privacy import NoiseCalibration, OracleCallLog, PrivacyBudget, calibrate, noise_for_released_iterate, private_oracle
from .problems import make_instance, per_sample_operator, population_truth, sample_dataset
from .solvers import (
    ConfigError,
    ConvergenceError,
    DPSubroutine,
    ExactSubroutine,
    MirrorProxConfig,
    RegularizedProblem,
    dp_mirror_prox,
    exact_regularized_solver,
    lambda_default,
    mirror_prox,
    recursive_regularization_ssp,
    recursive_regularization_svi,
)
from .evaluation import (
    SweepConfig,
    h_diagnostic,
    rate_sweep,
    sp_gap,
    stability_generalization_probe,
    uas_probe,
    vi_gap,
    vi_gap_equals_excess_risk_check,
)

__version__ = "0.1.0"
