"""Population gap estimators, stability probes and rate sweeps."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import ConstraintSet, DomainError, ProductGeometry, product
from .privacy import OracleCallLog, PrivacyBudget
from .problems import ProblemInstance, make_instance, sample_dataset
from .solvers import (
    DPSubroutine,
    RegularizedProblem,
    build_schedule,
    dp_mirror_prox,
    exact_population_solver,
    exact_regularized_solver,
    lambda_default,
    recursive_regularization,
    solve_vi,
)

__all__ = [
    "GapReport",
    "sp_gap",
    "vi_gap",
    "vi_gap_grid",
    "vi_gap_equals_excess_risk_check",
    "h_diagnostic",
    "uas_probe",
    "stability_generalization_probe",
    "SweepConfig",
    "SweepResult",
    "run_pipeline",
    "rate_sweep",
]

INNER_TOL = 1e-10


@dataclass(frozen=True)
class GapReport:
    gap_value: float
    method: str
    tolerance: float
    problem: str
    point: np.ndarray


def _is_zero(mat) -> bool:
    return mat.size == 0 or not np.any(mat)


def _maximize_concave_quadratic(H, v, cset: ConstraintSet, tol: float):
    """argmax over ``cset`` of ``<v, u> - 0.5 u'Hu`` (H symmetric PSD) and its value."""
    u, _ = solve_vi(lambda u: H @ u - v, cset, tol=tol, affine=(H, -v))
    return u, float(v @ u - 0.5 * u @ H @ u)


def sp_gap(instance: ProblemInstance, w_hat, theta_hat=None, tol: float = INNER_TOL) -> GapReport:
    """``max_theta F(w_hat, theta) - min_w F(w, theta_hat)`` under the population loss."""
    if not getattr(instance, "has_loss", False):
        raise DomainError(f"{instance.kind} has no loss; use vi_gap")
    w_hat = np.asarray(w_hat, dtype=float).reshape(instance.d_w)
    theta_hat = np.zeros(0) if theta_hat is None else np.asarray(theta_hat, dtype=float).reshape(instance.d_theta)
    point = np.concatenate([w_hat, theta_hat])
    instance.check_point(point)
    P, A, Q, b, c = instance.quadratic(instance.mean_sample)
    sets = instance.constraint.blocks
    wset = product(sets[0])
    exact = True
    if instance.d_theta:
        tset = product(sets[1])
        v = A.T @ w_hat + c
        base = 0.5 * w_hat @ P @ w_hat + b @ w_hat
        if _is_zero(Q):
            upper = base + tset.support(v)
        else:
            _, best = _maximize_concave_quadratic(Q, v, tset, tol)
            upper = base + best
            exact = False
    else:
        upper = instance.population_loss(w_hat, theta_hat)
    lin = A @ theta_hat + b
    base = c @ theta_hat - 0.5 * theta_hat @ Q @ theta_hat
    if _is_zero(P):
        lower = base - wset.support(-lin)
    else:
        _, best = _maximize_concave_quadratic(P, -lin, wset, tol)
        lower = base - best
        exact = False
    return GapReport(float(upper - lower), "closed_form" if exact else "exact_inner_solve",
                     0.0 if exact else 2 * tol, instance.kind, point)


def vi_gap(instance: ProblemInstance, z_hat, tol: float = INNER_TOL) -> GapReport:
    """``max_z <G(z), z_hat - z>`` for the affine population operator ``G``."""
    z_hat = instance.check_point(np.asarray(z_hat, dtype=float))
    M, q = instance.coefficients(instance.mean_sample)
    S = M + M.T
    v = M.T @ z_hat - q
    if np.max(np.abs(S), initial=0.0) <= 1e-14 * max(1.0, np.max(np.abs(M), initial=0.0)):
        # concave part vanishes: the maximand is linear in z
        return GapReport(float(q @ z_hat + instance.constraint.support(v)), "closed_form", 0.0,
                         instance.kind, z_hat)
    # <Mz + q, z_hat - z> = <v, z> - 0.5 z'Sz + <q, z_hat>
    _, best = _maximize_concave_quadratic(S, v, instance.constraint, tol)
    return GapReport(float(best + q @ z_hat), "exact_inner_solve", tol, instance.kind, z_hat)


def vi_gap_grid(instance: ProblemInstance, z_hat, resolution: float = 1e-3) -> float:
    """Certificate-grid lower bound on the VI gap (dimension 3 at most)."""
    if instance.dim > 3:
        raise DomainError("the grid cross-check is limited to dimension 3")
    z_hat = np.asarray(z_hat, dtype=float)
    grid = instance.constraint.grid(resolution)
    M, q = instance.coefficients(instance.mean_sample)
    values = grid @ M.T + q
    return float(np.max(np.einsum("ij,ij->i", values, z_hat[None, :] - grid)))


def vi_gap_equals_excess_risk_check(instance: ProblemInstance, z_hat, tol: float = 1e-9):
    """For linear losses the VI gap equals excess population risk; returns (ok, residual)."""
    if instance.kind != "linear_vi":
        raise DomainError("the VI-gap / excess-risk identity is checked on linear_vi instances only")
    gap = vi_gap(instance, z_hat).gap_value
    z_star = instance.population_truth().point
    excess = instance.population_loss(z_hat) - instance.population_loss(z_star)
    residual = abs(gap - excess)
    return residual <= tol, residual


def _as_problem(problem, mode: str | None = None) -> RegularizedProblem:
    if isinstance(problem, RegularizedProblem):
        return problem
    return RegularizedProblem(problem, mode or ("ssp" if problem.is_ssp else "svi"))


def h_diagnostic(problem, z_star, z, chunk=None) -> tuple[float | None, float]:
    """``(H_S(z), H_D(z))`` for a (regularized) round.

    SSP mode: ``H(z) = F(w, theta*) - F(w*, theta)``; SVI mode:
    ``H(z) = <G(z), z - z*>``.  ``H_S`` uses the chunk average and is None
    when no chunk is given.
    """
    problem = _as_problem(problem)
    inst = problem.instance
    z = np.asarray(z, dtype=float)
    z_star = np.asarray(z_star, dtype=float)
    samples = [inst.mean_sample] if chunk is None else [np.asarray(chunk, float).mean(axis=0), inst.mean_sample]

    def H(x):
        if problem.mode == "ssp":
            w, th = inst.split(z)
            ws, ths = inst.split(z_star)
            return problem.loss(w, ths, x) - problem.loss(ws, th, x)
        return float(problem.operator(z, x) @ (z - z_star))

    values = [H(x) for x in samples]
    return (None, values[0]) if chunk is None else (values[0], values[1])


def _probe_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2, int(trial))))


def uas_probe(instance: ProblemInstance, lam: float, mu: float, n: int, trials: int, seed: int = 0,
              anchor=None, identical: bool = False, tol: float = 1e-12) -> dict:
    """Worst argument distance of the regularized equilibrium over adjacent datasets.

    The regularized operator is ``G_S(z) + lam * mu * kappa * rho(z - anchor)``,
    which is ``lam * mu``-strongly monotone, so the distance is at most
    ``2 L / (mu lam n)``.
    """
    geom = instance.geometry
    anchor = instance.constraint.center_point() if anchor is None else np.asarray(anchor, float)
    problem = RegularizedProblem(instance, "svi").with_term(lam * mu * geom.kappa, anchor)
    worst = 0.0
    for trial in range(trials):
        rng = _probe_rng(seed, trial)
        S = instance.draw(n, rng)
        S2 = S.copy()
        if not identical:
            S2[int(rng.integers(n))] = instance.draw(1, rng)[0]
        z1 = exact_regularized_solver(S, problem, tol)
        z2 = exact_regularized_solver(S2, problem, tol)
        worst = max(worst, geom.norm(z1 - z2))
    bound = 2.0 * instance.operator_bound / (mu * lam * n)
    return {"max_distance": worst, "bound": bound, "passed": worst <= bound * (1 + 1e-6)}


def stability_generalization_probe(instance: ProblemInstance, lam: float, n: int, trials: int,
                                   seed: int = 0, mode: str | None = None, anchor=None,
                                   tol: float = 1e-12) -> dict:
    """Monte Carlo mean of ``H_D - H_S`` at the exact empirical solution of a round-1 problem.

    The round-1 regularizer has loss weight ``2 lam`` anchored at ``anchor``.
    The bound is ``2 Delta L`` (ssp) or ``(beta D + L) Delta`` (svi) with
    ``Delta = 2 L / (m n)`` and ``m`` the regularizer's strong-monotonicity modulus.
    """
    mode = mode or ("ssp" if instance.is_ssp else "svi")
    anchor = instance.constraint.center_point() if anchor is None else np.asarray(anchor, float)
    coef = (2.0 if mode == "ssp" else 1.0) * 2.0 * lam
    problem = RegularizedProblem(instance, mode).with_term(coef, anchor)
    z_star = exact_population_solver(problem, tol)
    diffs = np.empty(trials)
    for trial in range(trials):
        S = instance.draw(n, _probe_rng(seed, trial))
        z = exact_regularized_solver(S, problem, tol)
        hs, hd = h_diagnostic(problem, z_star, z, S)
        diffs[trial] = hd - hs
    L = instance.operator_bound
    delta = 2.0 * L / (problem.strong_monotonicity * n)
    if mode == "ssp":
        bound = 2.0 * delta * L
    else:
        bound = (instance.operator_lipschitz * instance.diameter + L) * delta
    mean = float(diffs.mean())
    stderr = float(diffs.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return {"mean": mean, "stderr": stderr, "bound": bound, "delta": delta,
            "passed": mean <= bound + 3.0 * stderr}


# ---------------------------------------------------------------------------
# rate sweeps


@dataclass
class SweepConfig:
    kind: str = "bilinear_ssp"
    instance_params: dict = field(default_factory=dict)
    ns: tuple = (256, 512, 1024, 2048, 4096, 8192)
    dims: tuple = (5,)
    epsilons: tuple = (1.0,)
    delta: float = 1e-5
    seeds: int = 20
    base_seed: int = 0
    solver: str = "rr_ssp"
    lambda_constant: float = 48.0
    accountant_constant: float = 1.0
    bound_factor: float = 5.0
    noise_share_threshold: float = 0.1
    parallel: int = 1


@dataclass
class SweepResult:
    rows: list  # one dict per (cell, seed)
    cells: list  # one dict per (n, d, epsilon)
    fits: dict  # (d, epsilon) -> {"slope", "halfwidth", "intercept", "cells_used"}
    failures: list

    @property
    def slope(self) -> float | None:
        if len(self.fits) != 1:
            return None
        return next(iter(self.fits.values()))["slope"]


def _dimension_params(kind: str, d: int, params: dict) -> dict:
    out = dict(params)
    if kind in ("bilinear_ssp", "quadratic_scsc_ssp"):
        out.setdefault("d_w", d)
        out.setdefault("d_theta", d)
    elif kind == "group_dro_ssp":
        out.setdefault("d_w", d)
    elif kind in ("linear_vi", "affine_monotone_vi"):
        out.setdefault("d", d)
    return out


def run_pipeline(instance: ProblemInstance, data, budget: PrivacyBudget, seed: int, solver: str = "rr_ssp",
                 lambda_constant: float = 48.0, accountant_constant: float = 1.0, bound_factor: float = 5.0,
                 noiseless: bool = False, lam: float | None = None, rounds: int | None = None):
    """One private run plus its population gap: returns ``(gap_report, grad_evals, point, detail)``."""
    data = np.asarray(data, dtype=float)
    n = len(data)
    log = OracleCallLog()
    if solver in ("rr_ssp", "rr_svi"):
        mode = "ssp" if solver == "rr_ssp" else "svi"
        n_prime = build_schedule(n, 1.0, 1.0, 1.0, 1.0, mode, rounds=1, enforce_floor=False).chunk_size
        if lam is None:
            lam = lambda_default(mode, 0.0, instance.geometry.kappa, instance.operator_bound, n_prime,
                                 instance.diameter, beta=instance.operator_lipschitz if mode == "svi" else 0.0,
                                 constant=lambda_constant, n=n, capped=True)
        sub = DPSubroutine(budget, seed=seed, constant=accountant_constant, noiseless=noiseless,
                           bound_factor=bound_factor, log=log)
        result = recursive_regularization(data, instance, sub, lam, mode, rounds=rounds)
        point, detail = result.point, {"lambda": lam, "rounds": result.schedule.rounds,
                                       "chunk_size": result.schedule.chunk_size}
    elif solver == "mirror_prox_only":
        mode = "ssp" if instance.is_ssp else "svi"
        run = dp_mirror_prox(data, RegularizedProblem(instance, mode), instance.constraint.center_point(),
                             instance.diameter, budget, seed=seed, log=log, constant=accountant_constant,
                             noiseless=noiseless, bound_factor=bound_factor)
        point, detail = run.point, {"iterations": run.calibration.iterations}
    else:
        raise DomainError(f"unknown solver {solver!r}; expected rr_ssp, rr_svi or mirror_prox_only")
    if mode == "ssp" and getattr(instance, "has_loss", False):
        report = sp_gap(instance, *instance.split(point))
    else:
        report = vi_gap(instance, point)
    return report, log.total_evaluations, point, detail


def _run_cell_seed(args):
    cfg, n, d, eps, k = args
    inst = make_instance(cfg.kind, **_dimension_params(cfg.kind, d, cfg.instance_params))
    seed = cfg.base_seed + k
    data = sample_dataset(inst, n, seed)
    budget = PrivacyBudget(eps, cfg.delta)
    common = dict(solver=cfg.solver, lambda_constant=cfg.lambda_constant,
                  accountant_constant=cfg.accountant_constant, bound_factor=cfg.bound_factor)
    t0 = time.perf_counter()
    try:
        report, evals, _, _ = run_pipeline(inst, data, budget, seed, **common)
        wall = 1e3 * (time.perf_counter() - t0)
        twin, _, _, _ = run_pipeline(inst, data, budget, seed, noiseless=True, **common)
    except (ArithmeticError, ValueError) as exc:
        return {"n": n, "d": d, "epsilon": eps, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}
    return {"kind": cfg.kind, "n": n, "d": d, "epsilon": eps, "delta": cfg.delta, "seed": seed,
            "gap": report.gap_value, "noiseless_gap": twin.gap_value, "grad_evals": evals, "wall_ms": wall}


def _fit(cells, threshold):
    usable = [c for c in cells if c["noise_share"] < threshold and c["mean_gap"] > 0]
    out = {"cells_used": len(usable), "slope": None, "halfwidth": None, "intercept": None}
    if len(usable) < 4:
        return out
    x = np.log([c["n"] for c in usable])
    y = np.log([c["mean_gap"] for c in usable])
    X = np.column_stack([np.ones_like(x), x])
    coef, res, _, _ = np.linalg.lstsq(X, y, rcond=None)
    dof = len(x) - 2
    resid = y - X @ coef
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    from scipy.stats import t as student_t

    out.update(slope=float(coef[1]), intercept=float(coef[0]),
               halfwidth=float(student_t.ppf(0.975, dof) * se) if dof > 0 else float("inf"))
    return out


def rate_sweep(cfg: SweepConfig) -> SweepResult:
    """Run the private pipeline over a grid of (n, d, epsilon) and fit log gap against log n.

    Every run is paired with a noiseless twin (same data and seeds, noise
    scaled to zero); a cell counts as sampling-dominated when the noise adds
    less than ``noise_share_threshold`` of the mean gap.
    """
    jobs = [(cfg, n, d, eps, k) for d in cfg.dims for eps in cfg.epsilons for n in cfg.ns for k in range(cfg.seeds)]
    if cfg.parallel > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            results = list(pool.map(_run_cell_seed, jobs, chunksize=1))
    else:
        results = [_run_cell_seed(j) for j in jobs]
    rows = [r for r in results if "error" not in r]
    failures = [r for r in results if "error" in r]
    cells = []
    for d in cfg.dims:
        for eps in cfg.epsilons:
            for n in cfg.ns:
                sel = [r for r in rows if r["n"] == n and r["d"] == d and r["epsilon"] == eps]
                if not sel:
                    continue
                gaps = np.array([r["gap"] for r in sel])
                twins = np.array([r["noiseless_gap"] for r in sel])
                mean = float(gaps.mean())
                share = max(0.0, (mean - float(twins.mean())) / mean) if mean > 0 else 0.0
                cells.append({
                    "n": n, "d": d, "epsilon": eps, "seeds": len(sel), "mean_gap": mean,
                    "stderr": float(gaps.std(ddof=1) / math.sqrt(len(sel))) if len(sel) > 1 else 0.0,
                    "noiseless_mean_gap": float(twins.mean()), "noise_share": share,
                    "sampling_dominated": share < cfg.noise_share_threshold,
                    "grad_evals": float(np.mean([r["grad_evals"] for r in sel])),
                    "max_grad_evals": int(max(r["grad_evals"] for r in sel)),
                    "wall_ms": float(np.mean([r["wall_ms"] for r in sel])),
                })
    fits = {}
    for d in cfg.dims:
        for eps in cfg.epsilons:
            group = [c for c in cells if c["d"] == d and c["epsilon"] == eps]
            fits[(d, eps)] = _fit(group, cfg.noise_share_threshold)
    return SweepResult(rows, cells, fits, failures)
