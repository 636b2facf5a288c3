"""Drift fields ``b(t, x)``, bump-function mollification and mixed Lebesgue norms.

Points are arrays of shape ``(..., d)`` and a drift returns the same shape;
Jacobians have shape ``(..., d, d)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, interpolate

from .errors import DomainError

# ---------------------------------------------------------------------------
# The standard bump and its distribution function
# ---------------------------------------------------------------------------


def _bump_unnormalized(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape)
    inside = np.abs(v) < 1
    out[inside] = np.exp(-1.0 / (1.0 - v[inside] ** 2))
    return out


@functools.lru_cache(maxsize=1)
def _bump_mass():
    val, _ = integrate.quad(lambda v: float(_bump_unnormalized(v)), -1, 1, epsabs=0.0, epsrel=1e-12, limit=200)
    return val


def bump(v):
    """Smooth density supported on ``[-1, 1]``, proportional to ``exp(-1/(1 - v^2))``."""
    return _bump_unnormalized(v) / _bump_mass()


def bump_derivative(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape)
    inside = np.abs(v) < 1
    vi = v[inside]
    out[inside] = -2 * vi / (1 - vi**2) ** 2 * np.exp(-1.0 / (1.0 - vi**2))
    return out / _bump_mass()


@functools.lru_cache(maxsize=1)
def _bump_cdf_spline():
    # Cumulative Gauss-Legendre on a fine table, interpolated with the exact
    # derivative so that the interpolant is C^1 and accurate to ~1e-14.
    knots = np.linspace(-1.0, 1.0, 4097)
    u, w = np.polynomial.legendre.leggauss(16)
    lo, hi = knots[:-1], knots[1:]
    nodes = 0.5 * (hi - lo)[:, None] * (u[None, :] + 1) + lo[:, None]
    cell = (0.5 * (hi - lo)[:, None] * w[None, :] * bump(nodes)).sum(axis=1)
    cdf = np.concatenate([[0.0], np.cumsum(cell)])
    cdf /= cdf[-1]
    return interpolate.CubicHermiteSpline(knots, cdf, bump(knots))


def bump_cdf(v):
    v = np.asarray(v, dtype=float)
    return np.where(v <= -1, 0.0, np.where(v >= 1, 1.0, _bump_cdf_spline()(np.clip(v, -1, 1))))


def bump_mass_error():
    """``|int bump - 1|`` by adaptive quadrature (normalization check)."""
    val, _ = integrate.quad(lambda v: float(bump(v)), -1, 1, epsabs=0.0, epsrel=1e-12, limit=200)
    return abs(val - 1.0)


# ---------------------------------------------------------------------------
# Drift fields
# ---------------------------------------------------------------------------


@dataclass
class DriftField:
    """A drift with optional Jacobian.

    ``support_radius`` is the sup-norm radius outside which ``b`` vanishes
    (``inf`` for fields without compact support).
    """

    evaluator: Callable
    dimension: int = 1
    jacobian: Optional[Callable] = None
    mollification: int = 0
    support_radius: float = np.inf
    name: str = "custom"
    sup_bound: float = np.inf
    # Separable piecewise-constant description used for exact mollification.
    profile: Optional["StepProfile"] = field(default=None, repr=False)

    def __call__(self, t, x):
        return self.evaluator(t, np.asarray(x, dtype=float))

    def jac(self, t, x):
        if self.jacobian is None:
            raise DomainError(f"drift '{self.name}' has no Jacobian; mollify it first")
        return self.jacobian(t, np.asarray(x, dtype=float))

    @property
    def has_jacobian(self):
        return self.jacobian is not None

    def norm_lq_p(self, q, p, horizon=1.0, box=None, n_space=2001, n_time=65):
        """Mixed norm ``(int_0^T (int |b(t,z)|^p dz)^(q/p) dt)^(1/q)`` by tensor trapezoid rules."""
        zs, wz = self._space_grid(box, n_space)
        ts = np.linspace(0.0, horizon, n_time)
        inner = []
        for t in ts:
            mag = np.linalg.norm(self(t, zs), axis=-1)
            inner.append(mag.max() if np.isinf(p) else (wz @ mag**p) ** (1.0 / p))
        inner = np.asarray(inner)
        if np.isinf(q):
            return float(inner.max())
        return float(np.trapezoid(inner**q, ts) ** (1.0 / q))

    def norm_l1_inf(self, horizon=1.0, box=None, n_space=2001, n_time=65):
        """``int sup_t |b(t, z)| dz`` (space integral outermost)."""
        zs, wz = self._space_grid(box, n_space)
        ts = np.linspace(0.0, horizon, n_time)
        sup = np.max([np.linalg.norm(self(t, zs), axis=-1) for t in ts], axis=0)
        return float(wz @ sup)

    def _space_grid(self, box, n):
        """Tensor trapezoid nodes ``(n^d, d)`` and weights on the cube ``[-box, box]^d``."""
        if box is None:
            if np.isinf(self.support_radius):
                raise DomainError("a quadrature box is required for fields without compact support")
            box = self.support_radius
        d = self.dimension
        if d > 1:
            n = max(int(round(n ** (1.0 / d))) | 1, 41)
        z = np.linspace(-box, box, n)
        w = np.full(n, z[1] - z[0])
        w[[0, -1]] *= 0.5
        mesh = np.stack(np.meshgrid(*([z] * d), indexing="ij"), axis=-1).reshape(-1, d)
        weight = functools.reduce(np.multiply.outer, [w] * d).reshape(-1)
        return mesh, weight


# ---------------------------------------------------------------------------
# Separable step profiles: b_j(x) = phi_j(x_j) prod_{l != j} 1{|x_l| <= R}
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepProfile:
    """Piecewise-constant 1D profile: value ``values[k]`` on ``[edges[k], edges[k+1])``, zero outside."""

    edges: tuple
    values: tuple

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.size != len(self.values) + 1 or np.any(np.diff(e) <= 0):
            raise DomainError("edges must be increasing with one more entry than values")

    @property
    def radius(self):
        return float(max(abs(self.edges[0]), abs(self.edges[-1])))

    def raw(self, x):
        e = np.asarray(self.edges)
        v = np.concatenate([[0.0], np.asarray(self.values, dtype=float), [0.0]])
        return v[np.searchsorted(e, x, side="right")]

    def smooth(self, x, eps, order=0):
        """Convolution with the bump of radius ``eps`` (``order`` derivatives, 0..2)."""
        e = np.asarray(self.edges)
        jumps = np.diff(np.concatenate([[0.0], np.asarray(self.values, dtype=float), [0.0]]))
        u = (np.asarray(x)[..., None] - e) / eps
        if order == 0:
            basis = bump_cdf(u)
        elif order == 1:
            basis = bump(u) / eps
        elif order == 2:
            basis = bump_derivative(u) / eps**2
        else:
            raise DomainError("only derivatives up to order 2 are available")
        return basis @ jumps


def _box_indicator(radius, x, eps=None, order=0):
    prof = StepProfile((-radius, radius), (1.0,))
    return prof.raw(x) if eps is None else prof.smooth(x, eps, order)


def _separable_field(profile, d, eps=None):
    R = profile.radius

    def component(x, j, order_j=0, l=None):
        val = profile.raw(x[..., j]) if eps is None else profile.smooth(x[..., j], eps, order_j)
        for k in range(d):
            if k == j:
                continue
            o = 1 if k == l else 0
            val = val * (_box_indicator(R, x[..., k]) if eps is None else _box_indicator(R, x[..., k], eps, o))
        return val

    def evaluator(t, x):
        return np.stack([component(x, j) for j in range(d)], axis=-1)

    jacobian = None
    if eps is not None:

        def jacobian(t, x):
            rows = []
            for j in range(d):
                rows.append(
                    np.stack([component(x, j, order_j=1 if l == j else 0, l=None if l == j else l) for l in range(d)], -1)
                )
            return np.stack(rows, axis=-2)

    return evaluator, jacobian


def step_field(profile, d=1, name="step"):
    ev, _ = _separable_field(profile, d)
    vmax = float(np.max(np.abs(profile.values)))
    return DriftField(ev, d, None, 0, profile.radius, name, vmax * np.sqrt(d), profile)


def sign_compact(d=1, radius=1.0):
    """``sign(x_j)`` inside the cube of the given radius, zero outside."""
    return step_field(StepProfile((-radius, 0.0, radius), (-1.0, 1.0)), d, name="sign-compact")


def piecewise_table(edges, values, d=1):
    return step_field(StepProfile(tuple(edges), tuple(values)), d, name="piecewise")


def zero(d=1):
    return DriftField(
        lambda t, x: np.zeros(np.shape(x)),
        d,
        lambda t, x: np.zeros(np.shape(x) + (d,)),
        0,
        0.0,
        "zero",
        0.0,
    )


def constant(c, d=1, radius=np.inf):
    """``b = c`` (inside the cube of the given radius when finite)."""
    c = np.broadcast_to(np.asarray(c, dtype=float), (d,))
    if np.isinf(radius):
        return DriftField(
            lambda t, x: np.broadcast_to(c, np.shape(x)).copy(),
            d,
            lambda t, x: np.zeros(np.shape(x) + (d,)),
            0,
            np.inf,
            "constant",
            float(np.linalg.norm(c)),
        )
    if d != 1:
        raise DomainError("compactly supported constants are provided for d=1")
    return step_field(StepProfile((-radius, radius), (float(c[0]),)), 1, name="constant")


def linear(coef=-1.0, d=1):
    """``b(t, x) = coef * x`` (not compactly supported)."""
    coef = float(coef)
    return DriftField(
        lambda t, x: coef * x,
        d,
        lambda t, x: coef * np.broadcast_to(np.eye(d), np.shape(x) + (d,)).copy(),
        0,
        np.inf,
        "linear",
        np.inf,
    )


def gauss_bump(amplitude=1.0, width=0.5, d=1):
    """``b_j(x) = amplitude * exp(-|x|^2 / (2 width^2))``: smooth, bounded, Lipschitz."""

    def ev(t, x):
        g = amplitude * np.exp(-np.sum(x**2, axis=-1) / (2 * width**2))
        return np.repeat(g[..., None], d, axis=-1)

    def jac(t, x):
        g = amplitude * np.exp(-np.sum(x**2, axis=-1) / (2 * width**2))
        grad = -x / width**2 * g[..., None]
        return np.repeat(grad[..., None, :], d, axis=-2)

    return DriftField(ev, d, jac, 0, np.inf, "gauss-bump", abs(amplitude) * np.sqrt(d))


def time_modulated(b, rate):
    """``cos(rate t) * b(x)`` (used to exercise time-dependent code paths)."""
    jac = None if b.jacobian is None else (lambda t, x: np.cos(rate * t) * b.jacobian(t, x))
    return DriftField(
        lambda t, x: np.cos(rate * t) * b(t, x), b.dimension, jac, b.mollification, b.support_radius,
        b.name + "-modulated", b.sup_bound,
    )


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------

_GL_NODES = 64


def mollify(b, n):
    """``b_n = b * rho_{1/n}`` with a Jacobian from ``rho'``.

    Step profiles are smoothed exactly through the bump distribution
    function; other fields are convolved by Gauss-Legendre quadrature over
    the bump support (d=1 only).
    """
    if n < 1:
        raise DomainError("mollification level must be a positive integer")
    eps = 1.0 / n
    radius = b.support_radius + eps
    if b.profile is not None:
        ev, jac = _separable_field(b.profile, b.dimension, eps)
        return DriftField(ev, b.dimension, jac, int(n), radius, f"{b.name}*rho_{n}", b.sup_bound, b.profile)
    if b.dimension != 1:
        raise DomainError("quadrature mollification is provided for d=1 only")
    u, w = np.polynomial.legendre.leggauss(_GL_NODES)
    rho, drho = bump(u) * w, bump_derivative(u) * w

    def ev(t, x):
        vals = b(t, x[..., None, :] - eps * u[:, None])[..., 0]  # (..., q)
        return (vals @ rho)[..., None]

    def jacobian(t, x):
        vals = b(t, x[..., None, :] - eps * u[:, None])[..., 0]
        return ((vals @ drho) / eps)[..., None, None]

    return DriftField(ev, 1, jacobian, int(n), radius, f"{b.name}*rho_{n}", b.sup_bound)


BUILTIN_DRIFTS = {
    "zero": zero,
    "linear": linear,
    "sign-compact": sign_compact,
    "gauss-bump": gauss_bump,
    "piecewise": piecewise_table,
    "constant": constant,
}
