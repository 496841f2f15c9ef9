"""Gaussian-noise calibration and the private minibatch operator oracle.

Noise scales are expressed in the rescaled dual norm of each block (the norm
in which the solvers measure operator values).  The oracle adds isotropic
Gaussian noise to raw operator coordinates, so the per-coordinate standard
deviation it uses is ``sigma_w / D_w`` for the primal block.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import DomainError, ProductGeometry

__all__ = [
    "PrivacyBudget",
    "NoiseCalibration",
    "OracleCallLog",
    "calibrate",
    "private_oracle",
    "noise_for_released_iterate",
    "kappa_tilde",
]


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise DomainError(f"epsilon must be positive and finite, got {self.epsilon!r}")
        if not (0 < self.delta <= 1):
            raise DomainError(f"delta must lie in (0, 1], got {self.delta!r}")

    @property
    def log_inv_delta(self) -> float:
        return math.log(1.0 / self.delta)


@dataclass(frozen=True)
class NoiseCalibration:
    iterations: int
    batch_size: int
    sigma_w: float
    sigma_theta: float
    accountant_constant: float
    kappa_tilde: float
    n: int
    epsilon: float
    delta: float
    kappa: float
    accountant_preconditions_met: bool

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def noiseless(self) -> "NoiseCalibration":
        return replace(self, sigma_w=0.0, sigma_theta=0.0)

    def full_batch(self) -> "NoiseCalibration":
        return replace(self, batch_size=self.n)


@dataclass
class OracleCallLog:
    """Oracle calls and per-sample gradient evaluations, keyed by round."""

    calls: dict = field(default_factory=dict)
    evaluations: dict = field(default_factory=dict)

    def record(self, round_index: int, batch_size: int) -> None:
        self.calls[round_index] = self.calls.get(round_index, 0) + 1
        self.evaluations[round_index] = self.evaluations.get(round_index, 0) + int(batch_size)

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    @property
    def total_evaluations(self) -> int:
        return sum(self.evaluations.values())

    def merge(self, other: "OracleCallLog") -> None:
        for k, v in other.calls.items():
            self.calls[k] = self.calls.get(k, 0) + v
        for k, v in other.evaluations.items():
            self.evaluations[k] = self.evaluations.get(k, 0) + v


def kappa_tilde(geom: ProductGeometry) -> float:
    """``1 + ln(d)`` when any block uses p < 2, else 1."""
    if any(g.p < 2 for g in geom.blocks):
        return 1.0 + math.log(geom.dim)
    return 1.0


def calibrate(budget: PrivacyBudget, geom: ProductGeometry, lipschitz_w: float, lipschitz_theta: float,
              n: int, d_w: int | None = None, d_theta: int | None = None,
              constant: float = 1.0) -> NoiseCalibration:
    """Iterations, batch size and noise scales for the private mirror-prox run."""
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    d_w = geom.w_geom.d if d_w is None else int(d_w)
    d_theta = (0 if geom.theta_geom is None else geom.theta_geom.d) if d_theta is None else int(d_theta)
    d = d_w + d_theta
    eps, log_term = budget.epsilon, budget.log_inv_delta
    kt = kappa_tilde(geom)
    kappa = geom.kappa
    if log_term > 0:
        t_real = kappa * min(n, n * n * eps * eps / (d * log_term * kt))
    else:
        # delta = 1: no privacy constraint on the iteration count
        t_real = kappa * n
    # T >= eps keeps T m^2 >= n^2 eps reachable with m <= n; extra iterations only add noise
    T = max(1, math.ceil(t_real), math.ceil(eps))
    m = min(n, math.ceil(max(n * math.sqrt(eps / T), 1.0)))

    def sigma(block, L, dim):
        if block is None or dim == 0:
            return 0.0
        dim_factor = dim ** (1.0 - 2.0 / block.p_star)
        return constant * block.radius * L * math.sqrt(T * dim_factor * log_term) / (n * eps)

    sw = sigma(geom.w_geom, lipschitz_w, d_w)
    st = sigma(geom.theta_geom, lipschitz_theta, d_theta)
    # subsampled-Gaussian accountant conditions: T >= n^2 eps / m^2 and the sigma floor
    ok = T * m * m >= n * n * eps * (1 - 1e-12)
    ok &= sw >= constant * geom.w_geom.radius * lipschitz_w * math.sqrt(T * log_term) / (n * eps) * (1 - 1e-12)
    if geom.theta_geom is not None and d_theta:
        floor = constant * geom.theta_geom.radius * lipschitz_theta * math.sqrt(T * log_term) / (n * eps)
        ok &= st >= floor * (1 - 1e-12)
    if not ok:
        warnings.warn(
            f"accountant preconditions fail for epsilon={eps} (they need T >= n^2 eps / m^2); "
            "the privacy guarantee does not apply",
            RuntimeWarning,
            stacklevel=2,
        )
    return NoiseCalibration(T, m, sw, st, float(constant), kt, n, eps, budget.delta, kappa, bool(ok))


def private_oracle(chunk, z, calibration: NoiseCalibration, instance, rng: np.random.Generator,
                   log: OracleCallLog | None = None, round_index: int = 0) -> np.ndarray:
    """Minibatch mean of the per-sample operator plus blockwise Gaussian noise.

    The batch is drawn uniformly with replacement; when the batch size equals
    the chunk size the whole chunk is used, which makes the noiseless oracle
    exact.  Noise is always drawn (and scaled by zero when sigma is zero) so
    that noisy and noiseless runs with the same seed share batch indices.
    """
    chunk = np.asarray(chunk, dtype=float)
    if chunk.ndim != 2 or len(chunk) == 0:
        raise DomainError("the private oracle needs a non-empty chunk of samples")
    m = calibration.batch_size
    if m >= len(chunk):
        m = len(chunk)
        batch_mean = chunk.mean(axis=0)
    else:
        batch_mean = chunk[rng.integers(0, len(chunk), size=m)].mean(axis=0)
    value = instance.operator(np.asarray(z, dtype=float), batch_mean)
    geom = instance.geometry
    noise_w = rng.standard_normal(geom.w_geom.d) * (calibration.sigma_w / geom.w_geom.radius)
    value[: geom.w_geom.d] += noise_w
    if geom.theta_geom is not None:
        noise_t = rng.standard_normal(geom.theta_geom.d) * (calibration.sigma_theta / geom.theta_geom.radius)
        value[geom.w_geom.d :] += noise_t
    if log is not None:
        log.record(round_index, m)
    return value


def noise_for_released_iterate(sensitivity: float, budget: PrivacyBudget) -> float:
    """Gaussian-mechanism scale ``sensitivity * sqrt(2 ln(1.25/delta)) / epsilon``."""
    if sensitivity < 0:
        raise DomainError("sensitivity must be nonnegative")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / budget.delta)) / budget.epsilon
