"""Synthetic SSP / SVI instances with exactly known population quantities.

Every instance in the zoo has an operator that is affine in the point and in
the sample: ``g(z; x) = M(x) z + q(x)`` with ``M`` and ``q`` affine in ``x``.
So the average operator over a dataset is the operator at the dataset's mean
sample, and the population operator is the operator at the analytic mean.

Saddle kinds (and the pure-primal linear / scalar kinds) come from a
quadratic loss

    f(w, theta; x) = 0.5 w'Pw + w'A theta - 0.5 theta'Q theta + b'w + c'theta

whose saddle operator is ``[P w + A theta + b, Q theta - A'w - c]``.

Lipschitz constants are analytic upper bounds: ``lipschitz_w`` bounds
``||grad_w f||`` in the dual of the primal block's effective norm (before
rescaling) and ``operator_bound`` bounds the operator in the dual of the
rescaled product norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .geometry import (
    ConstraintSet,
    DomainError,
    LpGeometry,
    ProductGeometry,
    conjugate_exponent,
    lp_ball,
    lp_norm,
    product,
    simplex,
)

__all__ = [
    "ProblemInstance",
    "SaddleInstance",
    "BilinearSSP",
    "QuadraticSCSCSSP",
    "GroupDROSSP",
    "LinearVI",
    "AffineMonotoneVI",
    "ScalarSquareVI",
    "PopulationTruth",
    "make_instance",
    "sample_dataset",
    "per_sample_operator",
    "population_truth",
    "save_dataset",
    "load_dataset",
    "INSTANCE_KINDS",
]

SSP_KINDS = ("bilinear_ssp", "quadratic_scsc_ssp", "group_dro_ssp")
SVI_KINDS = ("linear_vi", "affine_monotone_vi", "scalar_square_vi")
INSTANCE_KINDS = SSP_KINDS + SVI_KINDS


def _dual_exp(p: float) -> float:
    return math.inf if p == 1.0 else conjugate_exponent(p)


def _norm_or_max(v, p: float) -> float:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return 0.0
    return float(np.max(np.abs(v))) if math.isinf(p) else lp_norm(v, p)


def _set_radius_bound(cset: ConstraintSet, p: float) -> float:
    """Upper bound on ||u||_p over a ball or simplex block (p <= 2 sets)."""
    if cset.kind == "simplex":
        # ||u||_p <= ||u||_1 = mass for p >= 1
        return cset.radius
    center = cset._center()
    if p >= cset.p:
        return lp_norm(center, p) + cset.radius
    return lp_norm(center, p) + cset.radius * cset.dim ** (1.0 / p - 1.0 / cset.p)


def _set_exponent(cset: ConstraintSet) -> float:
    return 1.0 if cset.kind == "simplex" else cset.p


@dataclass(frozen=True)
class PopulationTruth:
    point: np.ndarray
    operator: Callable[[np.ndarray], np.ndarray]
    loss: Callable[[np.ndarray, np.ndarray], float] | None
    optimum_value: float | None
    method: str


class ProblemInstance:
    """Shared plumbing; subclasses fill in coefficients and sampling."""

    kind: str = ""
    is_ssp: bool = False
    has_loss: bool = False

    def __init__(self, geometry: ProductGeometry, constraint: ConstraintSet, params: dict):
        self.geometry = geometry
        self.constraint = constraint
        self.params = dict(params)
        self.d_w = geometry.w_geom.d
        self.d_theta = 0 if geometry.theta_geom is None else geometry.theta_geom.d
        self.dim = self.d_w + self.d_theta
        self._truth: PopulationTruth | None = None

    # -- sampling -----------------------------------------------------------
    sample_dim: int = 0

    @property
    def mean_sample(self) -> np.ndarray:
        raise NotImplementedError

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    # -- operator -----------------------------------------------------------
    def coefficients(self, x) -> tuple[np.ndarray, np.ndarray]:
        """``(M, q)`` with ``g(z; x) = M z + q``."""
        raise NotImplementedError

    def operator(self, z, x) -> np.ndarray:
        M, q = self.coefficients(x)
        return M @ z + q

    def mean_operator(self, z, data) -> np.ndarray:
        return self.operator(z, np.asarray(data, dtype=float).mean(axis=0))

    def population_operator(self, z) -> np.ndarray:
        return self.operator(z, self.mean_sample)

    # -- constants ----------------------------------------------------------
    lipschitz_w: float = 0.0
    lipschitz_theta: float = 0.0

    @property
    def operator_bound(self) -> float:
        """Bound on ||g(z; x)||_* in the rescaled product dual norm."""
        gw = self.geometry.w_geom.radius * self.lipschitz_w
        if self.geometry.theta_geom is None:
            return gw
        return math.hypot(gw, self.geometry.theta_geom.radius * self.lipschitz_theta)

    @property
    def operator_lipschitz(self) -> float:
        """Bound on the Lipschitz constant of g(.; x) from the rescaled norm to its dual."""
        scales = np.concatenate([np.full(g.d, g.radius) for g in self.geometry.blocks])
        M0, _ = self.coefficients(self.mean_sample)
        base = np.linalg.norm(scales[:, None] * M0 * scales[None, :], 2)
        spread = self._coefficient_spread()
        if spread is not None:
            base += float(np.linalg.norm(scales[:, None] * spread * scales[None, :], "fro"))
        return float(base)

    def _coefficient_spread(self) -> np.ndarray | None:
        """Entrywise bound on |M(x) - M(mean)| over the support (None if M is fixed)."""
        return None

    @property
    def diameter(self) -> float:
        return self.constraint.diameter(self.geometry)

    # -- helpers ------------------------------------------------------------
    def split(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        return z[: self.d_w], z[self.d_w :]

    def join(self, w, theta=None) -> np.ndarray:
        if theta is None or np.size(theta) == 0:
            return np.asarray(w, dtype=float).reshape(self.d_w).copy()
        return np.concatenate([np.asarray(w, float).ravel(), np.asarray(theta, float).ravel()])

    def check_point(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,) or not self.constraint.contains(z, rtol=1e-9):
            raise DomainError(f"point lies outside the feasible set of {self.kind}")
        return z

    def population_truth(self) -> PopulationTruth:
        if self._truth is None:
            self._truth = self._compute_truth()
        return self._truth

    def _compute_truth(self) -> PopulationTruth:
        from .solvers import solve_affine_vi

        M, q = self.coefficients(self.mean_sample)
        z, method = solve_affine_vi(M, q, self.geometry, self.constraint, tol=1e-12)
        loss = self.population_loss if self.has_loss else None
        value = self.population_loss(*self.split(z)) if self.has_loss else None
        return PopulationTruth(z, self.population_operator, loss, value, method)

    def describe(self) -> dict:
        out = {"kind": self.kind, "d_w": self.d_w, "d_theta": self.d_theta}
        out.update(self.params)
        return out


# ---------------------------------------------------------------------------
# quadratic saddle family


class SaddleInstance(ProblemInstance):
    """Quadratic convex-concave loss with coefficients perturbed by the sample.

    The sample layout is ``[vec(dA), db, dc]`` restricted to the entries that
    are perturbed; subclasses describe the layout through ``_layout``.
    """

    has_loss = True

    def __init__(self, geometry, constraint, params, P, A, Q, b, c, noise_mask, noise):
        super().__init__(geometry, constraint, params)
        dw, dt = self.d_w, self.d_theta
        self.P = np.asarray(P, float).reshape(dw, dw)
        self.A = np.asarray(A, float).reshape(dw, dt)
        self.Q = np.asarray(Q, float).reshape(dt, dt)
        self.b = np.asarray(b, float).reshape(dw)
        self.c = np.asarray(c, float).reshape(dt)
        for name, mat in (("P", self.P), ("Q", self.Q)):
            if mat.size and np.linalg.eigvalsh(0.5 * (mat + mat.T)).min() < -1e-12:
                raise DomainError(f"{name} must be positive semidefinite for a convex-concave loss")
        # noise_mask: dict with boolean masks for "A", "b", "c"
        self._mask_A = np.asarray(noise_mask.get("A", np.zeros((dw, dt), bool)), bool).reshape(dw, dt)
        self._mask_b = np.asarray(noise_mask.get("b", np.zeros(dw, bool)), bool).reshape(dw)
        self._mask_c = np.asarray(noise_mask.get("c", np.zeros(dt, bool)), bool).reshape(dt)
        self.noise = float(noise)
        if self.noise < 0:
            raise DomainError("noise scale must be nonnegative")
        self.sample_dim = max(1, int(self._mask_A.sum() + self._mask_b.sum() + self._mask_c.sum()))
        self._set_constants()

    # sample = perturbations of the masked entries, uniform on [-noise, noise]
    @property
    def mean_sample(self) -> np.ndarray:
        return np.zeros(self.sample_dim)

    def draw(self, n, rng):
        return rng.uniform(-self.noise, self.noise, size=(n, self.sample_dim))

    def quadratic(self, x):
        """``(P, A, Q, b, c)`` at sample (or mean sample) ``x``."""
        x = np.asarray(x, dtype=float).reshape(self.sample_dim)
        A, b, c = self.A.copy(), self.b.copy(), self.c.copy()
        k = 0
        na, nb, nc = int(self._mask_A.sum()), int(self._mask_b.sum()), int(self._mask_c.sum())
        if na:
            A[self._mask_A] += x[k : k + na]
            k += na
        if nb:
            b[self._mask_b] += x[k : k + nb]
            k += nb
        if nc:
            c[self._mask_c] += x[k : k + nc]
        return self.P, A, self.Q, b, c

    def coefficients(self, x):
        P, A, Q, b, c = self.quadratic(x)
        M = np.block([[P, A], [-A.T, Q]]) if self.d_theta else P.copy()
        q = np.concatenate([b, -c]) if self.d_theta else b.copy()
        return M, q

    def _coefficient_spread(self):
        if self.noise == 0 or not self._mask_A.any():
            return None
        S = np.zeros((self.dim, self.dim))
        S[: self.d_w, self.d_w :] = self.noise * self._mask_A
        S[self.d_w :, : self.d_w] = self.noise * self._mask_A.T
        return S

    def loss(self, w, theta, x) -> float:
        P, A, Q, b, c = self.quadratic(x)
        w = np.asarray(w, float)
        theta = np.asarray(theta, float).reshape(self.d_theta)
        return float(0.5 * w @ P @ w + w @ A @ theta - 0.5 * theta @ Q @ theta + b @ w + c @ theta)

    def population_loss(self, w, theta=None) -> float:
        theta = np.zeros(0) if theta is None else theta
        return self.loss(w, theta, self.mean_sample)

    def _set_constants(self):
        gw, gt = self.geometry.w_geom, self.geometry.theta_geom
        sets = self.constraint.blocks
        wset = sets[0]
        absA = np.abs(self.A) + self.noise * self._mask_A
        absb = np.abs(self.b) + self.noise * self._mask_b
        absc = np.abs(self.c) + self.noise * self._mask_c
        # primal block: P w + A theta + b, measured in l_{p_bar*}; ||.||_{p_bar*} <= ||.||_2
        Lw = np.linalg.norm(self.P, 2) * _set_radius_bound(wset, 2.0) + _norm_or_max(absb, gw.p_star)
        if self.d_theta:
            tset = sets[1]
            qs = _set_exponent(tset)
            # two valid bounds on sup ||A theta||: Hoelder over columns, and the
            # spectral norm of the entrywise majorant (|A| <= B implies ||A||_2 <= ||B||_2)
            spectral = np.linalg.norm(absA, 2)
            cols = np.array([_norm_or_max(absA[:, j], gw.p_star) for j in range(self.d_theta)])
            Lw += min(_set_radius_bound(tset, qs) * _norm_or_max(cols, _dual_exp(qs)),
                      spectral * _set_radius_bound(tset, 2.0))
            ps = _set_exponent(wset)
            rows = np.array([_norm_or_max(absA[i, :], gt.p_star) for i in range(self.d_w)])
            Lt = np.linalg.norm(self.Q, 2) * _set_radius_bound(tset, 2.0) + _norm_or_max(absc, gt.p_star)
            Lt += min(_set_radius_bound(wset, ps) * _norm_or_max(rows, _dual_exp(ps)),
                      spectral * _set_radius_bound(wset, 2.0))
            self.lipschitz_theta = float(Lt)
        self.lipschitz_w = float(Lw)


def _ball_geometry(d, p, radius, center=None):
    return LpGeometry(p, d, radius), lp_ball(d, p, radius, center)


class BilinearSSP(SaddleInstance):
    """``f = w'A theta + b'w + c'theta`` over l_p x l_q balls.

    The sample perturbs every entry of ``(A, b, c)`` uniformly on
    ``[-noise, noise]``.  Defaults give an interior saddle point.
    """

    kind = "bilinear_ssp"
    is_ssp = True

    def __init__(self, d_w=5, d_theta=None, p=2.0, q=2.0, radius_w=1.0, radius_theta=1.0,
                 A=None, b=None, c=None, noise=0.1, offset=0.3, param_seed=0):
        d_theta = d_w if d_theta is None else d_theta
        rng = np.random.default_rng(param_seed)
        if A is None:
            A = np.eye(d_w, d_theta) + 0.2 * rng.uniform(-1, 1, size=(d_w, d_theta))
        if b is None:
            b = offset * rng.uniform(-1, 1, size=d_w)
        if c is None:
            c = offset * rng.uniform(-1, 1, size=d_theta)
        gw, sw = _ball_geometry(d_w, p, radius_w)
        gt, st = _ball_geometry(d_theta, q, radius_theta)
        params = dict(p=p, q=q, radius_w=radius_w, radius_theta=radius_theta, noise=noise, offset=offset,
                      param_seed=param_seed)
        mask = {"A": np.ones((d_w, d_theta), bool), "b": np.ones(d_w, bool), "c": np.ones(d_theta, bool)}
        super().__init__(ProductGeometry(gw, gt), product(sw, st), params,
                         np.zeros((d_w, d_w)), A, np.zeros((d_theta, d_theta)), b, c, mask, noise)


class QuadraticSCSCSSP(SaddleInstance):
    """``f = mu_w/2 ||w||^2 + w'A theta - mu_theta/2 ||theta||^2 + b'w + c'theta``.

    Strongly convex / strongly concave; the sample perturbs ``b`` and ``c``.
    """

    kind = "quadratic_scsc_ssp"
    is_ssp = True

    def __init__(self, d_w=3, d_theta=None, p=2.0, q=2.0, radius_w=1.0, radius_theta=1.0,
                 mu_w=1.0, mu_theta=1.0, A=None, b=None, c=None, noise=0.1, param_seed=0):
        d_theta = d_w if d_theta is None else d_theta
        rng = np.random.default_rng(param_seed)
        if A is None:
            A = 0.5 * rng.uniform(-1, 1, size=(d_w, d_theta))
        if b is None:
            b = 0.4 * rng.uniform(-1, 1, size=d_w)
        if c is None:
            c = 0.4 * rng.uniform(-1, 1, size=d_theta)
        gw, sw = _ball_geometry(d_w, p, radius_w)
        gt, st = _ball_geometry(d_theta, q, radius_theta)
        params = dict(p=p, q=q, radius_w=radius_w, radius_theta=radius_theta, mu_w=mu_w, mu_theta=mu_theta,
                      noise=noise, param_seed=param_seed)
        mask = {"b": np.ones(d_w, bool), "c": np.ones(d_theta, bool)}
        super().__init__(ProductGeometry(gw, gt), product(sw, st), params,
                         mu_w * np.eye(d_w), A, mu_theta * np.eye(d_theta), b, c, mask, noise)


class GroupDROSSP(SaddleInstance):
    """Worst-group linear risk ``max_j <w, x_j>`` written as ``max`` over the simplex.

    A sample holds one draw per group, ``x = vec(X)`` with ``X[:, j] = x_j``,
    ``x_j = group_means[j] + U[-noise, noise]^d``, and
    ``f(w, theta; x) = sum_j theta_j <w, x_j> = w' X theta``.
    """

    kind = "group_dro_ssp"
    is_ssp = True

    def __init__(self, d_w=3, k=3, p=2.0, radius_w=1.0, group_means=None, noise=0.1, param_seed=0):
        rng = np.random.default_rng(param_seed)
        if group_means is None:
            group_means = rng.uniform(-1, 1, size=(k, d_w))
        group_means = np.asarray(group_means, float).reshape(k, d_w)
        gw, sw = _ball_geometry(d_w, p, radius_w)
        gt = LpGeometry(1.0, k, 1.0)
        params = dict(p=p, k=k, radius_w=radius_w, noise=noise, param_seed=param_seed)
        mask = {"A": np.ones((d_w, k), bool)}
        super().__init__(ProductGeometry(gw, gt), product(sw, simplex(k)), params,
                         np.zeros((d_w, d_w)), group_means.T, np.zeros((k, k)), np.zeros(d_w), np.zeros(k),
                         mask, noise)
        self.group_means = group_means

    def group_losses(self, w, x=None) -> np.ndarray:
        """Per-group losses ``<w, x_j>`` (population means when ``x`` is None)."""
        _, A, _, _, _ = self.quadratic(self.mean_sample if x is None else x)
        return A.T @ np.asarray(w, float)

    def worst_group_risk(self, w) -> tuple[float, int]:
        """Population worst-group risk and the (lowest-index) active group."""
        losses = self.group_losses(w)
        j = int(np.argmax(losses))
        return float(losses[j]), j


class LinearVI(SaddleInstance):
    """``g(z; x) = x`` (loss ``<z, x>``) over an l_p ball.

    The sample is either uniform on a box ``mean + U[-noise, noise]^d`` or
    uniform over the rows of ``atoms``.
    """

    kind = "linear_vi"
    is_ssp = False

    def __init__(self, d=2, p=2.0, radius=1.0, mean=None, noise=0.5, atoms=None, param_seed=0):
        rng = np.random.default_rng(param_seed)
        self.atoms = None if atoms is None else np.asarray(atoms, float).reshape(-1, d)
        if mean is None:
            mean = self.atoms.mean(axis=0) if self.atoms is not None else 0.5 * rng.uniform(-1, 1, size=d)
        self._mean = np.asarray(mean, float).reshape(d)
        if self.atoms is not None and not np.allclose(self.atoms.mean(axis=0), self._mean):
            raise DomainError("mean must equal the average of the atoms")
        g, s = _ball_geometry(d, p, radius)
        params = dict(d=d, p=p, radius=radius, noise=noise, param_seed=param_seed,
                      distribution="atoms" if atoms is not None else "box")
        super().__init__(ProductGeometry(g), product(s), params, np.zeros((d, d)), np.zeros((d, 0)),
                         np.zeros((0, 0)), np.zeros(d), np.zeros(0), {}, 0.0)
        self.noise = float(noise)
        self.sample_dim = d
        self.lipschitz_w = self._max_sample_norm()

    def _max_sample_norm(self) -> float:
        ps = self.geometry.w_geom.p_star
        if self.atoms is not None:
            return max(lp_norm(a, ps) for a in self.atoms)
        return lp_norm(np.abs(self._mean) + self.noise, ps)

    @property
    def mean_sample(self):
        return self._mean.copy()

    def draw(self, n, rng):
        if self.atoms is not None:
            return self.atoms[rng.integers(0, len(self.atoms), size=n)]
        return self._mean + rng.uniform(-self.noise, self.noise, size=(n, self.sample_dim))

    def quadratic(self, x):
        x = np.asarray(x, float).reshape(self.sample_dim)
        return self.P, self.A, self.Q, x.copy(), self.c

    def _compute_truth(self):
        z = self.constraint.linear_minimizer(self._mean)
        return PopulationTruth(z, self.population_operator, self.population_loss,
                               self.population_loss(z), "closed_form")


class ScalarSquareVI(SaddleInstance):
    """``f(z) = z^2`` on ``[0, 1]``; deterministic, ``g(z) = 2z``."""

    kind = "scalar_square_vi"
    is_ssp = False

    def __init__(self):
        g, s = _ball_geometry(1, 2.0, 0.5, center=[0.5])
        super().__init__(ProductGeometry(g), product(s), {}, [[2.0]], np.zeros((1, 0)), np.zeros((0, 0)),
                         [0.0], np.zeros(0), {}, 0.0)

    def _compute_truth(self):
        z = np.zeros(1)
        return PopulationTruth(z, self.population_operator, self.population_loss, 0.0, "closed_form")


# ---------------------------------------------------------------------------


class AffineMonotoneVI(ProblemInstance):
    """``g(z; x) = M z + q0 + x`` with ``M + M'`` positive semidefinite.

    ``M`` defaults to ``S + K``: ``S`` symmetric positive definite with
    smallest eigenvalue ``strong`` and ``K`` skew-symmetric.  The sample is
    uniform on ``[-noise, noise]^d``.
    """

    kind = "affine_monotone_vi"

    def __init__(self, d=3, p=2.0, radius=1.0, M=None, q0=None, noise=0.1, strong=0.2, param_seed=0):
        rng = np.random.default_rng(param_seed)
        if M is None:
            B = rng.uniform(-1, 1, size=(d, d))
            S = B @ B.T / d + strong * np.eye(d)
            K = rng.uniform(-1, 1, size=(d, d))
            M = S + (K - K.T) / 2
        if q0 is None:
            q0 = 0.3 * rng.uniform(-1, 1, size=d)
        self.M = np.asarray(M, float).reshape(d, d)
        self.q0 = np.asarray(q0, float).reshape(d)
        sym_min = float(np.linalg.eigvalsh(self.M + self.M.T).min())
        if sym_min < -1e-10:
            raise DomainError(f"M + M' must be positive semidefinite (smallest eigenvalue {sym_min:.3e})")
        g, s = _ball_geometry(d, p, radius)
        params = dict(d=d, p=p, radius=radius, noise=noise, strong=strong, param_seed=param_seed)
        super().__init__(ProductGeometry(g), product(s), params)
        self.noise = float(noise)
        self.sample_dim = d
        # ||Mz + q||_{p_bar*} <= ||M||_2 sup||z||_2 + ||q||_{p_bar*}
        self.lipschitz_w = float(np.linalg.norm(self.M, 2) * _set_radius_bound(s, 2.0)
                                 + lp_norm(np.abs(self.q0) + self.noise, g.p_star))

    @property
    def mean_sample(self):
        return np.zeros(self.sample_dim)

    def draw(self, n, rng):
        return rng.uniform(-self.noise, self.noise, size=(n, self.sample_dim))

    def coefficients(self, x):
        return self.M, self.q0 + np.asarray(x, float).reshape(self.sample_dim)


# ---------------------------------------------------------------------------
# functional API

_BUILDERS = {
    "bilinear_ssp": BilinearSSP,
    "quadratic_scsc_ssp": QuadraticSCSCSSP,
    "group_dro_ssp": GroupDROSSP,
    "linear_vi": LinearVI,
    "affine_monotone_vi": AffineMonotoneVI,
    "scalar_square_vi": ScalarSquareVI,
}


def make_instance(kind: str, **params) -> ProblemInstance:
    """Build a zoo instance by name."""
    try:
        builder = _BUILDERS[kind]
    except KeyError:
        raise DomainError(f"unknown instance kind {kind!r}; expected one of {sorted(_BUILDERS)}") from None
    return builder(**params)


def sample_dataset(instance: ProblemInstance, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. samples as an ``(n, sample_dim)`` array; deterministic in ``seed``."""
    if int(n) != n or n < 1:
        raise DomainError(f"dataset size must be a positive integer, got {n!r}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))
    return instance.draw(int(n), rng)


def per_sample_operator(instance: ProblemInstance, z, x) -> np.ndarray:
    return instance.operator(instance.check_point(z), x)


def population_truth(instance: ProblemInstance) -> PopulationTruth:
    return instance.population_truth()


def save_dataset(path, data: np.ndarray, instance: ProblemInstance, seed: int) -> None:
    """CSV export: a ``#``-prefixed header (kind, n, d, seed) and one sample per row."""
    data = np.asarray(data, dtype=float)
    header = f"kind={instance.kind},n={len(data)},d={data.shape[1]},seed={seed}"
    np.savetxt(Path(path), data, fmt="%.17g", delimiter=",", header=header, comments="# ")


def load_dataset(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    if not first.startswith("# "):
        raise DomainError(f"{path} has no dataset header")
    meta = dict(item.split("=", 1) for item in first[2:].strip().split(","))
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape != (int(meta["n"]), int(meta["d"])):
        raise DomainError(f"{path}: header says {meta['n']}x{meta['d']}, body is {data.shape}")
    return data, meta
