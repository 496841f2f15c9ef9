"""Mirror prox, its private variant, recursive regularization and an exact VI solver."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from .geometry import (
    ConstraintSet,
    DomainError,
    LpGeometry,
    ProductGeometry,
    mirror_argmin,
    prox_step,
)
from .privacy import NoiseCalibration, OracleCallLog, PrivacyBudget, calibrate, private_oracle

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "MirrorProxConfig",
    "SolverRun",
    "RegularizedProblem",
    "RecursionSchedule",
    "RecursionResult",
    "DPSubroutine",
    "ExactSubroutine",
    "mirror_prox",
    "dp_mirror_prox",
    "exact_regularized_solver",
    "exact_population_solver",
    "solve_vi",
    "solve_affine_vi",
    "linearization_gap",
    "build_schedule",
    "recursive_regularization",
    "recursive_regularization_ssp",
    "recursive_regularization_svi",
    "lambda_default",
    "lambda_floor",
]


class ConfigError(ValueError):
    """Invalid solver configuration; ``violations`` lists every broken constraint."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConvergenceError(ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# mirror prox


@dataclass(frozen=True)
class MirrorProxConfig:
    eta: float
    iterations: int
    psi_center: np.ndarray
    psi_scale: float | None = None
    distance_bound: float | None = None
    output_mode: str = "average"

    def __post_init__(self):
        problems = []
        if not self.eta > 0:
            problems.append(f"eta must be positive, got {self.eta!r}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            problems.append(f"iterations must be a positive integer, got {self.iterations!r}")
        if self.output_mode not in ("average", "random_iterate"):
            problems.append(f"output_mode must be 'average' or 'random_iterate', got {self.output_mode!r}")
        if problems:
            raise ConfigError(problems)

    @staticmethod
    def auto_eta(distance_bound: float, operator_bound: float, iterations: int) -> float:
        return distance_bound / (operator_bound * math.sqrt(iterations))


@dataclass
class SolverRun:
    point: np.ndarray
    config: MirrorProxConfig | None = None
    extrapolated: np.ndarray | None = None  # rows: the points where the second oracle call is made
    anchors: np.ndarray | None = None  # rows: the iterates z_t after each full step
    t_star: int | None = None
    calibration: NoiseCalibration | None = None
    log: OracleCallLog | None = None
    wall_ms: float = 0.0
    seed: int | None = None


def mirror_prox(oracle: Callable[[np.ndarray], np.ndarray], geom: ProductGeometry, cset: ConstraintSet,
                cfg: MirrorProxConfig, t_star: int | None = None, record_trace: bool = False) -> SolverRun:
    """Two-step extragradient in the mirror geometry of ``geom``.

    The output is the average of the extrapolated points (``average`` mode)
    or the extrapolated point of iteration ``t_star`` (``random_iterate``;
    1-based and fixed by the caller before the run).
    """
    T = int(cfg.iterations)
    if cfg.output_mode == "random_iterate":
        if t_star is None or not 1 <= t_star <= T:
            raise ConfigError(f"random_iterate mode needs t_star in [1, {T}], got {t_star!r}")
    start = time.perf_counter()
    center = np.asarray(cfg.psi_center, dtype=float)
    scale = geom.kappa if cfg.psi_scale is None else cfg.psi_scale
    eta = cfg.eta
    z = center.copy()
    total = np.zeros_like(z)
    chosen = None
    tilde_rows, anchor_rows = [], []
    for t in range(1, T + 1):
        z_tilde = prox_step(z, eta * oracle(z), geom, cset, center, scale)
        z = prox_step(z, eta * oracle(z_tilde), geom, cset, center, scale)
        total += z_tilde
        if t == t_star:
            chosen = z_tilde
        if record_trace:
            tilde_rows.append(z_tilde)
            anchor_rows.append(z)
    point = total / T if cfg.output_mode == "average" else chosen
    return SolverRun(
        point=point,
        config=cfg,
        extrapolated=np.array(tilde_rows) if record_trace else None,
        anchors=np.array(anchor_rows) if record_trace else None,
        t_star=t_star,
        wall_ms=1e3 * (time.perf_counter() - start),
    )


# ---------------------------------------------------------------------------
# regularized problems


@dataclass(frozen=True)
class RegularizedProblem:
    """An instance plus anchored regularizers ``sum_k coef_k * rho(z - anchor_k)``.

    In ``ssp`` mode a loss term ``c ||w - w_k||_w^2 - c ||theta - theta_k||_theta^2``
    contributes ``2c * rho(z - anchor)`` to the saddle operator, so its
    ``coef`` is ``2c``.
    """

    instance: object
    mode: str = "ssp"
    terms: tuple = ()
    rho: Callable | None = None  # custom strongly monotone map; default is geometry.rho
    rho_modulus: float | None = None

    def __post_init__(self):
        if self.mode not in ("ssp", "svi"):
            raise ConfigError(f"mode must be 'ssp' or 'svi', got {self.mode!r}")

    @property
    def geometry(self) -> ProductGeometry:
        return self.instance.geometry

    @property
    def constraint(self) -> ConstraintSet:
        return self.instance.constraint

    def with_term(self, coef: float, anchor) -> "RegularizedProblem":
        return replace(self, terms=self.terms + ((float(coef), np.asarray(anchor, dtype=float).copy()),))

    @property
    def total_coefficient(self) -> float:
        return float(sum(c for c, _ in self.terms))

    @property
    def strong_monotonicity(self) -> float:
        """Modulus of the regularizer part (rho is (1/kappa)-strongly monotone)."""
        modulus = 1.0 / self.geometry.kappa if self.rho_modulus is None else self.rho_modulus
        return self.total_coefficient * modulus

    @property
    def operator_bound(self) -> float:
        """Upper bound on the regularized operator's dual norm over the feasible set."""
        D = self.instance.diameter
        return self.instance.operator_bound + sum(c * D for c, _ in self.terms)

    def regularizer_operator(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        rho = self.geometry.rho if self.rho is None else self.rho
        for coef, anchor in self.terms:
            out += coef * rho(z - anchor)
        return out

    def operator(self, z, x) -> np.ndarray:
        return self.instance.operator(z, x) + self.regularizer_operator(z)

    def mean_operator(self, z, data) -> np.ndarray:
        return self.instance.mean_operator(z, data) + self.regularizer_operator(z)

    def population_operator(self, z) -> np.ndarray:
        return self.instance.population_operator(z) + self.regularizer_operator(z)

    @property
    def is_affine(self) -> bool:
        if not self.terms:
            return True
        return self.rho is None and all(g.p_bar == 2.0 for g in self.geometry.blocks)

    def affine_form(self, x) -> tuple[np.ndarray, np.ndarray]:
        """``(M, q)`` of the regularized operator at sample (mean) ``x``; Euclidean blocks only."""
        if not self.is_affine:
            raise DomainError("the regularizer is not affine for this geometry")
        M, q = self.instance.coefficients(x)
        M, q = M.copy(), q.copy()
        inv_r2 = np.concatenate([np.full(g.d, 1.0 / g.radius**2) for g in self.geometry.blocks])
        for coef, anchor in self.terms:
            M[np.diag_indices_from(M)] += coef * inv_r2
            q -= coef * inv_r2 * anchor
        return M, q

    def loss(self, w, theta, x) -> float:
        if self.mode != "ssp" or not getattr(self.instance, "has_loss", False):
            raise DomainError("a loss is only defined for saddle-type instances in ssp mode")
        value = self.instance.loss(w, theta, x)
        gw, gt = self.geometry.w_geom, self.geometry.theta_geom
        for coef, anchor in self.terms:
            aw, at = anchor[: gw.d], anchor[gw.d :]
            value += 0.5 * coef * gw.norm(np.asarray(w) - aw) ** 2
            if gt is not None:
                value -= 0.5 * coef * gt.norm(np.asarray(theta) - at) ** 2
        return float(value)

    def population_loss(self, w, theta=None) -> float:
        theta = np.zeros(0) if theta is None else theta
        return self.loss(w, theta, self.instance.mean_sample)


# ---------------------------------------------------------------------------
# exact deterministic solver


def linearization_gap(value, z, cset: ConstraintSet) -> float:
    """``max over u in the set of <value, z - u>`` (zero exactly at VI solutions)."""
    value = np.asarray(value, dtype=float)
    return float(np.dot(value, z) + cset.support(-value))


def _euclidean_projector(cset: ConstraintSet):
    geom = ProductGeometry(*[LpGeometry(2.0, b.dim, 1.0) for b in cset.blocks]) if len(cset.blocks) == 2 \
        else ProductGeometry(LpGeometry(2.0, cset.blocks[0].dim, 1.0))
    if len(cset.blocks) > 2:
        raise DomainError("at most two blocks are supported")
    zero = np.zeros(cset.dim)
    return lambda y: mirror_argmin(-y, geom, cset, zero, 1.0)


def solve_vi(operator, cset: ConstraintSet, tol: float = 1e-10, start=None, affine=None,
             max_iter: int = 200_000) -> tuple[np.ndarray, str]:
    """Solve the monotone VI ``<G(z), z - u> <= 0`` over ``cset``.

    ``affine = (M, q)`` enables an exact linear-solve fast path when the
    unconstrained root is feasible.  Otherwise runs projected extragradient
    with an adaptive step until the linearization gap is at most ``tol``.
    """
    if affine is not None:
        M, q = affine
        try:
            if np.linalg.cond(M) < 1e12:
                z = np.linalg.solve(M, -q)
                if cset.contains(z, rtol=1e-12) and linearization_gap(operator(z), z, cset) <= tol:
                    return z, "linear_solve"
        except np.linalg.LinAlgError:
            pass
    project = _euclidean_projector(cset)
    z = cset.center_point() if start is None else project(np.asarray(start, dtype=float))
    if affine is not None:
        eta = 1.0 / max(np.linalg.norm(affine[0], 2), 1e-12)
    else:
        eta = 1.0
    G = operator(z)
    gap = linearization_gap(G, z, cset)
    for _ in range(max_iter):
        if gap <= tol:
            return z, "extragradient"
        z_half = project(z - eta * G)
        G_half = operator(z_half)
        step = np.linalg.norm(z_half - z)
        if step == 0.0:
            # z is a fixed point of the projected step, hence a solution
            return z, "extragradient"
        if eta * np.linalg.norm(G_half - G) > 0.9 * step:
            eta *= 0.5
            continue
        z = project(z - eta * G_half)
        G = operator(z)
        gap = linearization_gap(G, z, cset)
        eta *= 1.05
    raise ConvergenceError("extragradient did not reach the requested tolerance", gap)


def solve_affine_vi(M, q, geom: ProductGeometry, cset: ConstraintSet, tol: float = 1e-12):
    M = np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float)
    return solve_vi(lambda z: M @ z + q, cset, tol=tol, affine=(M, q))


def exact_regularized_solver(chunk, problem: RegularizedProblem, tolerance: float = 1e-10,
                             start=None) -> np.ndarray:
    """The exact equilibrium of the chunk-average regularized operator."""
    chunk = np.asarray(chunk, dtype=float)
    xbar = chunk.mean(axis=0)
    affine = problem.affine_form(xbar) if problem.is_affine else None
    z, _ = solve_vi(lambda z: problem.operator(z, xbar), problem.constraint, tol=tolerance,
                    start=start, affine=affine)
    return z


def exact_population_solver(problem: RegularizedProblem, tolerance: float = 1e-10) -> np.ndarray:
    return exact_regularized_solver(problem.instance.mean_sample[None, :], problem, tolerance)


# ---------------------------------------------------------------------------
# private mirror prox and subroutines


def dp_mirror_prox(chunk, problem: RegularizedProblem, z0, distance_bound: float, budget: PrivacyBudget,
                   mode: str | None = None, seed: int = 0, round_index: int = 0,
                   log: OracleCallLog | None = None, constant: float = 1.0, noiseless: bool = False,
                   full_batch: bool = False, iterations: int | None = None, eta: float | None = None,
                   bound_factor: float = 5.0, record_trace: bool = False) -> SolverRun:
    """Private stochastic mirror prox on ``problem`` over ``chunk``.

    Noise is calibrated to the base instance's Lipschitz constants (the
    regularizers do not depend on data); the step size uses
    ``bound_factor * L`` as the bound on the regularized operator.
    """
    if not distance_bound > 0:
        raise ConfigError(f"distance_bound must be positive, got {distance_bound!r}")
    mode = problem.mode if mode is None else mode
    chunk = np.asarray(chunk, dtype=float)
    inst = problem.instance
    cal = calibrate(budget, inst.geometry, inst.lipschitz_w, inst.lipschitz_theta, len(chunk),
                    constant=constant)
    if noiseless:
        cal = cal.noiseless()
    if full_batch:
        cal = cal.full_batch()
    if iterations is not None:
        cal = replace(cal, iterations=int(iterations))
    T = cal.iterations
    L_reg = bound_factor * inst.operator_bound
    if eta is None:
        eta = MirrorProxConfig.auto_eta(distance_bound, L_reg, T) if L_reg > 0 else distance_bound
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(1, int(round_index))))
    t_star = int(rng.integers(1, T + 1))
    own_log = OracleCallLog()

    def oracle(z):
        return private_oracle(chunk, z, cal, inst, rng, own_log, round_index) + problem.regularizer_operator(z)

    cfg = MirrorProxConfig(eta, T, np.asarray(z0, dtype=float), None, distance_bound,
                           "average" if mode == "ssp" else "random_iterate")
    run = mirror_prox(oracle, inst.geometry, inst.constraint, cfg,
                      t_star=t_star if mode == "svi" else None, record_trace=record_trace)
    run.t_star = t_star
    run.calibration = cal
    run.log = own_log
    run.seed = seed
    if log is not None:
        log.merge(own_log)
    return run


class Subroutine(Protocol):
    def __call__(self, chunk, problem: RegularizedProblem, start, distance_bound: float,
                 round_index: int) -> SolverRun: ...


@dataclass
class DPSubroutine:
    """Private mirror prox as the per-round solver of the recursion."""

    budget: PrivacyBudget
    seed: int = 0
    constant: float = 1.0
    noiseless: bool = False
    full_batch: bool = False
    iterations: int | None = None
    bound_factor: float = 5.0
    record_trace: bool = False
    log: OracleCallLog = field(default_factory=OracleCallLog)

    def __call__(self, chunk, problem, start, distance_bound, round_index):
        return dp_mirror_prox(chunk, problem, start, distance_bound, self.budget, seed=self.seed,
                              round_index=round_index, log=self.log, constant=self.constant,
                              noiseless=self.noiseless, full_batch=self.full_batch,
                              iterations=self.iterations, bound_factor=self.bound_factor,
                              record_trace=self.record_trace)


@dataclass
class ExactSubroutine:
    """Exact empirical equilibrium of each round (noiseless test oracle)."""

    tolerance: float = 1e-12

    def __call__(self, chunk, problem, start, distance_bound, round_index):
        t0 = time.perf_counter()
        z = exact_regularized_solver(chunk, problem, self.tolerance, start=start)
        return SolverRun(point=z, wall_ms=1e3 * (time.perf_counter() - t0))


# ---------------------------------------------------------------------------
# recursive regularization


def lambda_floor(mode: str, lipschitz: float, kappa: float, diameter: float, n: int) -> float:
    """Smallest admissible lambda: L kappa / (D sqrt n) (ssp) or L sqrt(kappa) / (D sqrt n) (svi)."""
    k = kappa if mode == "ssp" else math.sqrt(kappa)
    return lipschitz * k / (diameter * math.sqrt(n))


def lambda_default(mode: str, alpha: float, kappa: float, lipschitz: float, n_prime: int, diameter: float,
                   beta: float = 0.0, constant: float = 48.0, n: int | None = None,
                   capped: bool = False) -> float:
    """Default regularization strength, never below the admissibility floor.

    With ``capped`` the formula value is limited to ``L / (2 D)`` (ssp) or
    ``L / (2 kappa D)`` (svi).  Larger values would force the round count up
    from zero to one, and the regularized operators could then exceed 5L.
    The floor still wins over the cap.
    """
    if mode == "ssp":
        lam = constant / diameter * (alpha * kappa**2 + lipschitz * kappa**1.5 / math.sqrt(n_prime))
        cap = lipschitz / (2.0 * diameter)
    elif mode == "svi":
        lam = constant / diameter * (alpha * kappa**3 + (beta * diameter + lipschitz) * kappa**2 / math.sqrt(n_prime))
        cap = lipschitz / (2.0 * kappa * diameter)
    else:
        raise ConfigError(f"mode must be 'ssp' or 'svi', got {mode!r}")
    if capped and cap > 0:
        lam = min(lam, cap)
    return max(lam, lambda_floor(mode, lipschitz, kappa, diameter, n if n is not None else n_prime))


@dataclass(frozen=True)
class RecursionSchedule:
    lam: float
    rounds: int
    chunk_size: int
    n: int
    mode: str

    @property
    def weights(self) -> list[float]:
        """Loss-level weights 2^(k+1) lambda for anchors k = 0 .. rounds-1."""
        return [2.0 ** (k + 1) * self.lam for k in range(self.rounds)]

    @property
    def operator_coefficients(self) -> list[float]:
        factor = 2.0 if self.mode == "ssp" else 1.0
        return [factor * w for w in self.weights]

    def chunk_indices(self, t: int) -> slice:
        """Sample indices of round ``t`` (1-based); chunks are disjoint."""
        return slice((t - 1) * self.chunk_size, t * self.chunk_size)


def build_schedule(n: int, lipschitz: float, diameter: float, kappa: float, lam: float, mode: str,
                   rounds: int | None = None, enforce_floor: bool = True) -> RecursionSchedule:
    violations = []
    if mode not in ("ssp", "svi"):
        violations.append(f"mode must be 'ssp' or 'svi', got {mode!r}")
    if n < 1:
        violations.append("the dataset must be non-empty")
    if not lam > 0:
        violations.append(f"lambda must be positive, got {lam!r}")
    if violations:
        raise ConfigError(violations)
    floor = lambda_floor(mode, lipschitz, kappa, diameter, n)
    if enforce_floor and lam < floor * (1 - 1e-12):
        which = "L kappa / (D sqrt n)" if mode == "ssp" else "L sqrt(kappa) / (D sqrt n)"
        violations.append(f"lambda={lam:.6g} is below the recursion floor {which} = {floor:.6g}")
    chunk = max(1, math.floor(n / math.log2(n))) if n > 1 else 1
    if rounds is None:
        ratio = lipschitz / (diameter * lam) if mode == "ssp" else lipschitz / (kappa * diameter * lam)
        rounds = max(1, math.floor(math.log2(ratio))) if ratio > 0 else 1
    elif int(rounds) != rounds or rounds < 1:
        violations.append(f"rounds must be a positive integer, got {rounds!r}")
    if not violations and rounds * chunk > n:
        violations.append(f"schedule needs {rounds} chunks of {chunk} samples but only {n} are available")
    if violations:
        raise ConfigError(violations)
    return RecursionSchedule(float(lam), int(rounds), int(chunk), int(n), mode)


@dataclass
class RecursionResult:
    point: np.ndarray
    schedule: RecursionSchedule
    anchors: list
    runs: list
    problems: list
    log: OracleCallLog | None = None


def recursive_regularization(dataset, instance, subroutine: Subroutine, lam: float, mode: str,
                             rounds: int | None = None, start=None, enforce_floor: bool = True,
                             rho=None, rho_modulus: float | None = None) -> RecursionResult:
    """Round-doubling anchored regularization around a relative-accuracy subroutine.

    Round ``t`` solves the problem regularized at anchors ``0 .. t-1`` on its
    own chunk, starting at (and centering the mirror map at) the previous
    anchor, with distance bound ``D / 2^t``.
    """
    dataset = np.asarray(dataset, dtype=float)
    D = instance.diameter
    sched = build_schedule(len(dataset), instance.operator_bound, D, instance.geometry.kappa, lam, mode,
                           rounds, enforce_floor)
    z_bar = instance.constraint.center_point() if start is None else np.asarray(start, dtype=float)
    if not instance.constraint.contains(z_bar, rtol=1e-9):
        raise ConfigError("the start point lies outside the feasible set")
    coefs = sched.operator_coefficients
    problem = RegularizedProblem(instance, mode, (), rho, rho_modulus).with_term(coefs[0], z_bar)
    anchors, runs, problems = [z_bar], [], []
    for t in range(1, sched.rounds + 1):
        chunk = dataset[sched.chunk_indices(t)]
        run = subroutine(chunk, problem, z_bar, D / 2.0**t, t)
        z_bar = np.asarray(run.point, dtype=float)
        anchors.append(z_bar)
        runs.append(run)
        problems.append(problem)
        if t < sched.rounds:
            problem = problem.with_term(coefs[t], z_bar)
    return RecursionResult(z_bar, sched, anchors, runs, problems, getattr(subroutine, "log", None))


def recursive_regularization_ssp(dataset, instance, subroutine, lam, **kw) -> RecursionResult:
    return recursive_regularization(dataset, instance, subroutine, lam, "ssp", **kw)


def recursive_regularization_svi(dataset, instance, subroutine, lam, **kw) -> RecursionResult:
    return recursive_regularization(dataset, instance, subroutine, lam, "svi", **kw)
