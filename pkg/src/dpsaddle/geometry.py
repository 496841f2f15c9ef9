"""Norms, mirror maps and prox steps for l_p / l_q product geometries.

Every solver in the package works in a rescaled product norm

    ||[w, theta]|| = sqrt((||w||_pbar / D_w)^2 + (||theta||_qbar / D_theta)^2)

where ``pbar`` is the effective exponent of the primal block and ``D_w`` its
scale (the ``radius`` of the block geometry).  The mirror map used by the
prox step is ``psi(u) = (kappa / 2) * ||u - center||^2`` in that norm, which
separates across blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "DomainError",
    "ProxError",
    "LpGeometry",
    "ProductGeometry",
    "ConstraintSet",
    "lp_ball",
    "simplex",
    "product",
    "effective_exponent",
    "conjugate_exponent",
    "lp_norm",
    "grad_half_sq_norm",
    "inverse_mirror_map",
    "prox_step",
    "mirror_argmin",
    "product_norm",
    "combined_kappa",
]

MEMBERSHIP_RTOL = 1e-12
SIMPLEX_ATOL = 1e-12
_BISECT_STEPS = 90


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class ProxError(ArithmeticError):
    """Raised when an inner prox solver fails to reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# scalar helpers


def effective_exponent(p: float, d: int) -> float:
    """Return ``max(p, 1 + 1/ln d)`` capped at 2.

    The cap only bites at ``d = 2`` where ``1 + 1/ln 2 > 2``; exponents above 2
    lose the strong convexity the mirror map relies on.  For ``d = 1`` every
    exponent gives the same norm and 2 is returned.
    """
    if not (1.0 <= p <= 2.0) or not math.isfinite(p):
        raise DomainError(f"norm exponent must lie in [1, 2], got {p!r}")
    if int(d) != d or d < 1:
        raise DomainError(f"dimension must be a positive integer, got {d!r}")
    if d == 1:
        return 2.0
    return min(2.0, max(float(p), 1.0 + 1.0 / math.log(d)))


def conjugate_exponent(p: float) -> float:
    if p <= 1.0:
        raise DomainError(f"conjugate exponent needs p > 1, got {p!r}")
    if p == 2.0:
        return 2.0
    return p / (p - 1.0)


def _check_finite(z: np.ndarray) -> None:
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("vector has non-finite entries")


def lp_norm(z, p: float) -> float:
    """l_p norm, computed with max-scaling so large or tiny entries are safe."""
    if p < 1.0:
        raise DomainError(f"lp_norm needs p >= 1, got {p!r}")
    z = np.asarray(z, dtype=float)
    _check_finite(z)
    if z.size == 0:
        return 0.0
    a = np.abs(z)
    top = a.max()
    if top == 0.0:
        return 0.0
    if p == 2.0:
        return float(top * math.sqrt(np.dot(a / top, a / top)))
    if p == 1.0:
        return float(a.sum())
    return float(top * np.sum((a / top) ** p) ** (1.0 / p))


def grad_half_sq_norm(z, p: float) -> np.ndarray:
    """Gradient of ``0.5 * ||z||_p^2``.

    Component i is ``sign(z_i) |z_i|^(p-1) ||z||_p^(2-p)``; the zero vector is
    returned at ``z = 0``.
    """
    if p <= 1.0:
        raise DomainError(f"grad_half_sq_norm needs p > 1, got {p!r}")
    z = np.asarray(z, dtype=float)
    if p == 2.0:
        _check_finite(z)
        return z.copy()
    nrm = lp_norm(z, p)
    if nrm == 0.0:
        return np.zeros_like(z)
    return np.sign(z) * (np.abs(z) / nrm) ** (p - 1.0) * nrm


def inverse_mirror_map(v, p: float) -> np.ndarray:
    """Inverse of :func:`grad_half_sq_norm` via the conjugate exponent."""
    if p <= 1.0:
        raise DomainError(f"inverse_mirror_map needs p > 1, got {p!r}")
    return grad_half_sq_norm(v, conjugate_exponent(p))


# ---------------------------------------------------------------------------
# geometry types


@dataclass(frozen=True)
class LpGeometry:
    """One block: exponent ``p``, dimension ``d`` and norm scale ``radius``."""

    p: float
    d: int
    radius: float = 1.0
    p_bar: float = field(init=False)
    p_star: float = field(init=False)
    kappa_single: float = field(init=False)

    def __post_init__(self):
        if not self.radius > 0 or not math.isfinite(self.radius):
            raise DomainError(f"radius must be positive, got {self.radius!r}")
        pb = effective_exponent(self.p, self.d)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "p_bar", pb)
        object.__setattr__(self, "p_star", conjugate_exponent(pb))
        object.__setattr__(self, "kappa_single", 1.0 / (pb - 1.0))

    def norm(self, z) -> float:
        """Rescaled norm ``||z||_pbar / radius``."""
        return lp_norm(z, self.p_bar) / self.radius

    def dual_norm(self, v) -> float:
        """Dual of the rescaled norm: ``radius * ||v||_{p_star}``."""
        return self.radius * lp_norm(v, self.p_star)

    def rho(self, z) -> np.ndarray:
        """Gradient of ``0.5 * norm(z)^2``; strongly monotone with modulus pbar - 1."""
        return grad_half_sq_norm(z, self.p_bar) / self.radius**2


@dataclass(frozen=True)
class ProductGeometry:
    """Primal block plus an optional dual block."""

    w_geom: LpGeometry
    theta_geom: LpGeometry | None = None

    @property
    def blocks(self) -> tuple[LpGeometry, ...]:
        if self.theta_geom is None:
            return (self.w_geom,)
        return (self.w_geom, self.theta_geom)

    @property
    def kappa(self) -> float:
        return max(g.kappa_single for g in self.blocks)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(g.d for g in self.blocks)

    @property
    def dim(self) -> int:
        return sum(self.dims)

    def split(self, z) -> list[np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise DomainError(f"expected a vector of length {self.dim}, got shape {z.shape}")
        return np.split(z, np.cumsum(self.dims)[:-1])

    def norm(self, z) -> float:
        return math.hypot(*(g.norm(b) for g, b in zip(self.blocks, self.split(z))))

    def dual_norm(self, v) -> float:
        return math.hypot(*(g.dual_norm(b) for g, b in zip(self.blocks, self.split(v))))

    def rho(self, z) -> np.ndarray:
        """Gradient of ``0.5 * norm(z)^2``; (1/kappa)-strongly monotone."""
        return np.concatenate([g.rho(b) for g, b in zip(self.blocks, self.split(z))])

    def psi(self, u, center, scale: float | None = None) -> float:
        scale = self.kappa if scale is None else scale
        return 0.5 * scale * self.norm(np.asarray(u, float) - np.asarray(center, float)) ** 2

    def grad_psi(self, u, center, scale: float | None = None) -> np.ndarray:
        scale = self.kappa if scale is None else scale
        return scale * self.rho(np.asarray(u, float) - np.asarray(center, float))


def _as_product_geometry(geom) -> ProductGeometry:
    if isinstance(geom, ProductGeometry):
        return geom
    if isinstance(geom, LpGeometry):
        return ProductGeometry(geom)
    raise TypeError(f"expected LpGeometry or ProductGeometry, got {type(geom).__name__}")


def product_norm(zw, ztheta, geom: ProductGeometry) -> float:
    """Rescaled product norm of ``[zw, ztheta]``; ``ztheta`` may be None."""
    zw = np.asarray(zw, dtype=float)
    if zw.shape != (geom.w_geom.d,):
        raise DomainError("primal block has the wrong dimension")
    if geom.theta_geom is None:
        if ztheta is not None and np.size(ztheta) != 0:
            raise DomainError("geometry has no dual block")
        return geom.w_geom.norm(zw)
    ztheta = np.asarray(ztheta, dtype=float)
    if ztheta.shape != (geom.theta_geom.d,):
        raise DomainError("dual block has the wrong dimension")
    return math.hypot(geom.w_geom.norm(zw), geom.theta_geom.norm(ztheta))


def combined_kappa(geom: ProductGeometry) -> float:
    return _as_product_geometry(geom).kappa


# ---------------------------------------------------------------------------
# constraint sets


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """An l_p ball, a scaled simplex, or a product of those.

    For balls ``radius`` is the radius and ``center`` the center; for the
    simplex ``radius`` is the total mass (1 for the probability simplex).
    """

    kind: str
    dim: int
    p: float = 2.0
    radius: float = 1.0
    center: np.ndarray | None = None
    children: tuple["ConstraintSet", ...] = ()

    @property
    def blocks(self) -> tuple["ConstraintSet", ...]:
        return self.children if self.kind == "product" else (self,)

    def split(self, z) -> list[np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise DomainError(f"expected a vector of length {self.dim}, got shape {z.shape}")
        dims = [b.dim for b in self.blocks]
        return np.split(z, np.cumsum(dims)[:-1])

    def _center(self) -> np.ndarray:
        return np.zeros(self.dim) if self.center is None else self.center

    def center_point(self) -> np.ndarray:
        """Ball centers and the barycenter of the simplex, block by block."""
        if self.kind == "product":
            return np.concatenate([b.center_point() for b in self.children])
        if self.kind == "simplex":
            return np.full(self.dim, self.radius / self.dim)
        return self._center().copy()

    def contains(self, z, rtol: float = MEMBERSHIP_RTOL) -> bool:
        if self.kind == "product":
            return all(b.contains(part, rtol) for b, part in zip(self.children, self.split(z)))
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            return False
        if self.kind == "lp_ball":
            return lp_norm(z - self._center(), self.p) <= self.radius * (1.0 + rtol)
        if np.any(z < -SIMPLEX_ATOL):
            return False
        return abs(z.sum() - self.radius) <= max(SIMPLEX_ATOL, rtol * self.radius)

    def support(self, v) -> float:
        """``max over the set of <v, u>``."""
        return sum(float(np.dot(v_b, b.linear_maximizer(v_b))) for b, v_b in zip(self.blocks, self.split(v)))

    def linear_maximizer(self, v) -> np.ndarray:
        """A maximizer of ``<v, u>``; lowest index wins ties at kinks."""
        if self.kind == "product":
            return np.concatenate([b.linear_maximizer(v_b) for b, v_b in zip(self.children, self.split(v))])
        v = np.asarray(v, dtype=float)
        if self.kind == "simplex":
            out = np.zeros(self.dim)
            out[int(np.argmax(v))] = self.radius
            return out
        c = self._center()
        if not np.any(v):
            return c.copy()
        if self.p == 1.0:
            i = int(np.argmax(np.abs(v)))
            out = c.copy()
            out[i] += self.radius * np.sign(v[i])
            return out
        # the maximizer of <v, x> over the unit l_p ball is grad of ||.||_{p*} at v
        return c + self.radius * grad_half_sq_norm(v, conjugate_exponent(self.p)) / lp_norm(
            v, conjugate_exponent(self.p)
        )

    def linear_minimizer(self, v) -> np.ndarray:
        return self.linear_maximizer(-np.asarray(v, dtype=float))

    def block_diameter(self, block_geom: LpGeometry) -> float:
        """Diameter in the rescaled norm of ``block_geom`` (exact for these sets)."""
        if self.kind == "product":
            raise DomainError("use diameter() for products")
        s = block_geom.p_bar
        if self.kind == "simplex":
            raw = self.radius * 2.0 ** (1.0 / s) if self.dim > 1 else 0.0
        elif s >= self.p:
            raw = 2.0 * self.radius
        else:
            raw = 2.0 * self.radius * self.dim ** (1.0 / s - 1.0 / self.p)
        return raw / block_geom.radius

    def diameter(self, geom) -> float:
        geom = _as_product_geometry(geom)
        if len(geom.blocks) != len(self.blocks):
            raise DomainError("geometry and constraint set have different block counts")
        return math.hypot(*(b.block_diameter(g) for b, g in zip(self.blocks, geom.blocks)))

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        """A random point of the set (not uniform; covers interior and boundary)."""
        if self.kind == "product":
            return np.concatenate([b.random_point(rng) for b in self.children])
        if self.kind == "simplex":
            return self.radius * rng.dirichlet(np.full(self.dim, 0.7))
        direction = rng.standard_normal(self.dim)
        nrm = lp_norm(direction, self.p)
        if nrm == 0.0:
            return self._center().copy()
        scale = rng.uniform() ** (1.0 / self.dim) if rng.uniform() < 0.8 else 1.0
        return self._center() + self.radius * scale * direction / nrm

    def grid(self, resolution: float) -> np.ndarray:
        """All points of a regular grid (spacing ``resolution``) inside the set.

        Only meant for dimensions up to 3; the simplex grid lives on the
        affine hull so it is parametrised by the first ``dim - 1`` coordinates.
        """
        if self.kind == "product":
            parts = [b.grid(resolution) for b in self.children]
            out = parts[0]
            for nxt in parts[1:]:
                out = np.hstack([np.repeat(out, len(nxt), axis=0), np.tile(nxt, (len(out), 1))])
            return out
        if self.kind == "simplex":
            if self.dim == 1:
                return np.array([[self.radius]])
            axis = np.arange(0.0, self.radius + resolution / 2, resolution)
            mesh = np.stack(np.meshgrid(*([axis] * (self.dim - 1)), indexing="ij"), -1).reshape(-1, self.dim - 1)
            last = self.radius - mesh.sum(axis=1)
            keep = last >= -1e-12
            return np.hstack([mesh[keep], np.maximum(last[keep], 0.0)[:, None]])
        c = self._center()
        axis = np.arange(-self.radius, self.radius + resolution / 2, resolution)
        mesh = np.stack(np.meshgrid(*([axis] * self.dim), indexing="ij"), -1).reshape(-1, self.dim)
        if self.p == 2.0:
            inside = np.sqrt((mesh**2).sum(axis=1)) <= self.radius * (1 + 1e-12)
        else:
            inside = (np.abs(mesh) ** self.p).sum(axis=1) <= self.radius**self.p * (1 + 1e-12)
        return mesh[inside] + c


def lp_ball(dim: int, p: float = 2.0, radius: float = 1.0, center=None) -> ConstraintSet:
    if not 1.0 <= p <= 2.0:
        raise DomainError(f"ball exponent must lie in [1, 2], got {p!r}")
    if not radius > 0:
        raise DomainError("ball radius must be positive")
    c = None if center is None else np.asarray(center, dtype=float).reshape(dim)
    return ConstraintSet("lp_ball", int(dim), float(p), float(radius), c)


def simplex(dim: int, total: float = 1.0) -> ConstraintSet:
    if not total > 0:
        raise DomainError("simplex mass must be positive")
    return ConstraintSet("simplex", int(dim), 1.0, float(total))


def product(*children: ConstraintSet) -> ConstraintSet:
    flat: list[ConstraintSet] = []
    for ch in children:
        flat.extend(ch.blocks)
    return ConstraintSet("product", sum(c.dim for c in flat), children=tuple(flat))


# ---------------------------------------------------------------------------
# prox machinery
#
# Block problem:  minimize  (a/2) ||u - c||_s^2 + <lin, u>  over the block set.
# Writing y = u - c the objective is (a/2)||y||_s^2 + <lin, y> + const.
#
# For s < 2 the squared norm is not separable.  We use
#     0.5 ||y||_s^2 = max_{N > 0} (N^(2-s)/s) ||y||_s^s - (1/s - 1/2) N^2,
# which is concave in N and convex in y, so the prox point is the inner
# solution at the N where ||y(N)||_s = N.  Given N the problem separates
# across coordinates up to one multiplier for the set constraint.


def _power_root(g, alpha, s):
    """Root of alpha*sgn(y)|y|^(s-1) + g = 0."""
    return -np.sign(g) * (np.abs(g) / alpha) ** (1.0 / (s - 1.0))


def _coord_roots(alpha, s, lin, mu, p, e):
    """Root in y (coordinatewise) of
    alpha*sgn(y)|y|^(s-1) + lin + mu*sgn(y+e)|y+e|^(p-1) = 0.

    The left side is nondecreasing in y, so the root is bracketed by the
    root of the first two terms and the kink at -e.
    """
    y_free = _power_root(lin, alpha, s)
    if mu == 0.0:
        return y_free
    if p == 1.0:
        # piecewise closed form: right of the kink, left of it, or on it
        right = _power_root(lin + mu, alpha, s)
        left = _power_root(lin - mu, alpha, s)
        return np.where(right + e > 0, right, np.where(left + e < 0, left, -e))
    lo = np.minimum(y_free, -e)
    hi = np.maximum(y_free, -e)
    y = 0.5 * (lo + hi)
    for _ in range(_BISECT_STEPS):
        ay = np.abs(y)
        ae = np.abs(y + e)
        h = alpha * np.sign(y) * ay ** (s - 1.0) + lin + mu * np.sign(y + e) * ae ** (p - 1.0)
        pos = h > 0
        hi = np.where(pos, y, hi)
        lo = np.where(pos, lo, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            dh = alpha * (s - 1.0) * ay ** (s - 2.0) + mu * (p - 1.0) * ae ** (p - 2.0)
            nxt = y - h / dh
        bad = ~((nxt > lo) & (nxt < hi))
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        done = (np.abs(nxt - y) <= 1e-14 * (1.0 + np.abs(y))) | (hi - lo <= 1e-14 * (1.0 + np.abs(y)))
        if np.all(done):
            return nxt
        y = nxt
    return y


def _root(fun, lo, hi):
    return brentq(fun, lo, hi, xtol=1e-14 * max(1.0, abs(hi)), rtol=1e-14, maxiter=200)


def _ball_given_alpha(alpha, s, lin, e, p, r):
    """min (alpha/s)||y||_s^s + <lin,y>  s.t. ||y + e||_p <= r."""
    y = -np.sign(lin) * (np.abs(lin) / alpha) ** (1.0 / (s - 1.0))
    if lp_norm(y + e, p) <= r:
        return y

    def excess(mu):
        return lp_norm(_coord_roots(alpha, s, lin, mu, p, e) + e, p) - r

    hi = 1.0
    while excess(hi) > 0:
        hi *= 4.0
        if hi > 1e300:
            raise ProxError("ball multiplier bracket failed", excess(hi))
    mu = _root(excess, 0.0, hi)
    return _coord_roots(alpha, s, lin, mu, p, e)


def _simplex_given_alpha(alpha, s, lin, c, total):
    """min (alpha/s)||y||_s^s + <lin,y>  s.t. c + y in the simplex of mass total."""

    def point(tau):
        g = lin + tau
        y = -np.sign(g) * (np.abs(g) / alpha) ** (1.0 / (s - 1.0))
        return np.maximum(c + y, 0.0)

    # above tau_hi every coordinate clips to zero; below tau_lo each exceeds total
    tau_hi = float(np.max(alpha * np.sign(c) * np.abs(c) ** (s - 1.0) - lin)) + 1.0
    gap = total - c
    tau_lo = float(np.min(-lin - alpha * np.sign(gap) * np.abs(gap) ** (s - 1.0))) - 1.0
    tau = _root(lambda t: point(t).sum() - total, tau_lo, tau_hi)
    return point(tau) - c


def _project_simplex(v, total):
    """Euclidean projection onto {u >= 0, sum u = total} by sorting."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    k = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[k] / (k + 1.0)
    return np.maximum(v - tau, 0.0)


def _outer_norm_search(inner, s, n_hi):
    """Find N with ||inner(N)||_s = N (see the note above)."""

    def mismatch(n):
        return lp_norm(inner(n), s) - n

    n_lo = 1e-12 * max(n_hi, 1e-300)
    if mismatch(n_lo) <= 0:
        return inner(n_lo)
    if mismatch(n_hi) >= 0:
        return inner(n_hi)
    return inner(_root(mismatch, n_lo, n_hi))


def _block_argmin(lin, a, s, c, bset: ConstraintSet) -> np.ndarray:
    """argmin over ``bset`` of (a/2)||u - c||_s^2 + <lin, u>."""
    y0 = inverse_mirror_map(-lin / a, s)
    if bset.kind == "lp_ball":
        b = bset._center()
        r, p = bset.radius, bset.p
        u0 = c + y0
        off = lp_norm(u0 - b, p)
        if off <= r:
            return u0
        centred = np.array_equal(c, b)
        if p == s and (centred or s == 2.0):
            if centred:
                return b + y0 * (r / lp_norm(y0, s))
            return b + (u0 - b) * (r / off)
        e = c - b
        if s == 2.0:
            return c + _ball_given_alpha(a, 2.0, lin, e, p, r)
        n_hi = lp_norm(e, s) + 2.0 * r * max(1.0, bset.dim ** (1.0 / s - 1.0 / p))
        return c + _outer_norm_search(lambda n: _ball_given_alpha(a * n ** (2.0 - s), s, lin, e, p, r), s, n_hi)
    if bset.kind == "simplex":
        if s == 2.0:
            return _project_simplex(c - lin / a, bset.radius)
        n_hi = lp_norm(c, s) + bset.radius
        return c + _outer_norm_search(
            lambda n: _simplex_given_alpha(a * n ** (2.0 - s), s, lin, c, bset.radius), s, n_hi
        )
    raise DomainError(f"unsupported set kind {bset.kind!r}")


def mirror_argmin(lin, geom, cset: ConstraintSet, center, scale: float | None = None) -> np.ndarray:
    """argmin over ``cset`` of ``psi(u) + <lin, u>`` with
    ``psi(u) = (scale/2) ||u - center||^2`` in the rescaled product norm."""
    geom = _as_product_geometry(geom)
    scale = geom.kappa if scale is None else float(scale)
    if cset.kind not in ("lp_ball", "simplex", "product"):
        raise DomainError(f"unsupported set kind {cset.kind!r}")
    if len(cset.blocks) != len(geom.blocks):
        raise DomainError("geometry and constraint set have different block counts")
    lin = np.asarray(lin, dtype=float)
    _check_finite(lin)
    parts = []
    for g, bset, l_b, c_b in zip(geom.blocks, cset.blocks, cset.split(lin), cset.split(center)):
        parts.append(_block_argmin(l_b, scale / g.radius**2, g.p_bar, c_b, bset))
    return np.concatenate(parts) if len(parts) > 1 else parts[0]


def prox_step(prev, step, geom, cset: ConstraintSet, center, scale: float | None = None) -> np.ndarray:
    """One mirror-prox step from ``prev``.

    Returns ``argmin_u psi(u) + <step - grad psi(prev), u>`` over ``cset``,
    where ``step`` is the scaled oracle value ``eta * O(z)`` and ``psi`` is
    centred at ``center`` with coefficient ``scale`` (default kappa).
    """
    geom = _as_product_geometry(geom)
    scale = geom.kappa if scale is None else float(scale)
    prev = np.asarray(prev, dtype=float)
    lin = np.asarray(step, dtype=float) - geom.grad_psi(prev, center, scale)
    return mirror_argmin(lin, geom, cset, np.asarray(center, dtype=float), scale)
