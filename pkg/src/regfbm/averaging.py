"""Averaging operators, occupation densities, simplex moment bounds and two Gaussian lemmas (d = 1 where noted)."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

from . import drift, fbm_core, regnoise
from .errors import DomainError, SingularCovarianceError

# ---------------------------------------------------------------------------
# Averaging operator and occupation density
# ---------------------------------------------------------------------------


@dataclass
class AveragingResult:
    x: np.ndarray  # (n_x,)
    per_path: np.ndarray  # (M, n_x)
    mean: np.ndarray
    se: np.ndarray
    t: float

    def derivative(self, order=1):
        """Central finite differences in ``x`` of the per-path values, on interior points."""
        dx = self.x[1] - self.x[0]
        v = self.per_path
        if order == 1:
            return (v[:, 2:] - v[:, :-2]) / (2 * dx)
        if order == 2:
            return (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / dx**2
        raise DomainError("order must be 1 or 2")


def _paths_2d(paths):
    p = np.asarray(paths, dtype=float)
    if p.ndim == 3:
        if p.shape[1] != 1:
            raise DomainError("averaging is implemented for d = 1")
        p = p[:, 0]
    if p.ndim == 1:
        p = p[None]
    return p


def averaging_operator(b, paths, grid, t, x):
    """``T_t(b)(x) = int_0^t b(x + B_s) ds`` per path by the trapezoid rule on the grid nodes up to ``t``.

    ``paths`` has shape ``(M, N)`` or ``(M, 1, N)``; ``b`` is a :class:`~regfbm.drift.DriftField`
    with ``d = 1`` evaluated at time ``s`` or a plain callable of the position.
    """
    p = _paths_2d(paths)
    k = grid.index_of(t)
    s = grid.points[: k + 1]
    x = np.asarray(x, dtype=float)
    if isinstance(b, drift.DriftField):
        vals = np.stack([b(si, (x[None, :] + p[:, i, None])[..., None])[..., 0] for i, si in enumerate(s)], -1)
    else:
        vals = b(x[None, :, None] + p[:, None, : k + 1])
    per = np.trapezoid(vals, s, axis=-1)
    se = per.std(axis=0, ddof=1) / np.sqrt(per.shape[0]) if per.shape[0] > 1 else np.zeros(x.size)
    return AveragingResult(x, per, per.mean(axis=0), se, float(t))


@dataclass
class OccupationDensity:
    z: np.ndarray
    values: np.ndarray
    bandwidth: float
    t: float

    def mass(self):
        return float(np.trapezoid(self.values, self.z))

    def pair(self, f):
        """``int f(z) L(z) dz`` by the trapezoid rule on the z grid."""
        return float(np.trapezoid(f(self.z) * self.values, self.z))


def default_bandwidth(samples):
    """Silverman's rule ``1.06 sigma M^{-1/5}``."""
    samples = np.asarray(samples, dtype=float)
    sig = samples.std(ddof=1)
    if sig == 0:
        raise DomainError("the path is constant; pass a bandwidth explicitly")
    return 1.06 * sig * samples.size ** (-0.2)


def occupation_density(path, grid, t, z, bandwidth=None):
    """Gaussian kernel estimate of the occupation measure of ``path`` on ``[0, t]``, rescaled to mass ``t`` on ``z``."""
    p = np.asarray(path, dtype=float).reshape(-1)
    k = grid.index_of(t)
    s, x = grid.points[: k + 1], p[: k + 1]
    h = default_bandwidth(x) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise DomainError("bandwidth must be positive")
    w = np.zeros(k + 1)
    steps = np.diff(s)
    w[:-1] += steps / 2
    w[1:] += steps / 2
    z = np.asarray(z, dtype=float)
    kern = np.exp(-0.5 * ((z[:, None] - x[None, :]) / h) ** 2) / (h * np.sqrt(2 * np.pi))
    L = kern @ w
    mass = np.trapezoid(L, z)
    if mass <= 0:
        raise DomainError("the z grid does not cover the path's range")
    return OccupationDensity(z, L * (t / mass), h, float(t))


def summation_by_parts(f, L, z):
    """``(lhs, rhs, boundary)`` for ``sum f'(z_k) L_k dz = -sum f_k (L_{k+1} - L_k) + boundary``.

    ``f'`` is the forward difference of ``f`` so the identity is exact up to rounding.
    """
    fz = f(z)
    lhs = float(np.sum((fz[1:] - fz[:-1]) * L[:-1]))
    rhs = -float(np.sum(fz[1:] * (L[1:] - L[:-1])))
    boundary = float(fz[-1] * L[-1] - fz[0] * L[0])
    return lhs, rhs + boundary, boundary


def holder_quotient(result, dx_steps=1):
    """Path-averaged ``max_x |T(x + dx) - T(x)| / dx`` at scale ``dx = dx_steps`` grid cells."""
    v = result.per_path
    dx = (result.x[1] - result.x[0]) * dx_steps
    q = np.abs(v[:, dx_steps:] - v[:, :-dx_steps]).max(axis=1) / dx
    return float(q.mean())


# ---------------------------------------------------------------------------
# Moment bound on the time simplex
# ---------------------------------------------------------------------------


@dataclass
class SmoothFactor:
    f: Callable
    df: Callable
    support: tuple

    @property
    def l1_norm(self):
        a, b = self.support
        val, _ = integrate.quad(lambda z: abs(float(self.f(np.array(z)))), a, b, limit=400, epsabs=1e-13, epsrel=1e-11)
        return val

    def derivative(self, order):
        if order not in (0, 1):
            raise DomainError("derivative orders are restricted to 0 or 1")
        return self.f if order == 0 else self.df

    @classmethod
    def gaussian(cls, center=0.0, width=0.5, amplitude=1.0):
        def f(z):
            return amplitude * np.exp(-0.5 * ((z - center) / width) ** 2)

        def df(z):
            return -(z - center) / width**2 * f(z)

        return cls(f, df, (center - 40 * width, center + 40 * width))

    @classmethod
    def odd(cls, width=0.5):
        def f(z):
            return z * np.exp(-0.5 * (z / width) ** 2)

        def df(z):
            return (1 - (z / width) ** 2) * np.exp(-0.5 * (z / width) ** 2)

        return cls(f, df, (-40 * width, 40 * width))

    @classmethod
    def plateau(cls, radius=50.0, edge=1.0):
        """Equal to 1 on ``[-radius + edge, radius - edge]``, compactly supported on ``[-radius - edge, radius + edge]``."""

        def f(z):
            return drift.bump_cdf((z + radius) / edge) - drift.bump_cdf((z - radius) / edge)

        def df(z):
            return (drift.bump((z + radius) / edge) - drift.bump((z - radius) / edge)) / edge

        return cls(f, df, (-radius - edge, radius + edge))


def _cell_weights(kappa, nodes, singular_exponent, q=16):
    """Product-trapezoid weights ``int kappa(s) (1 - u)`` and ``int kappa(s) u`` per cell, ``u`` the local coordinate.

    The first cell carries ``(s - s_0)^{singular_exponent}`` exactly via Gauss-Jacobi.
    """
    a, b = nodes[:-1], nodes[1:]
    h = b - a
    x, w = np.polynomial.legendre.leggauss(q)
    u = (x + 1) / 2
    s = a[:, None] + h[:, None] * u
    kv = kappa(s)
    wl = (h[:, None] / 2 * w * kv * (1 - u)).sum(axis=1)
    wr = (h[:, None] / 2 * w * kv * u).sum(axis=1)
    if singular_exponent != 0.0:
        xj, wj = special.roots_jacobi(q, 0.0, singular_exponent)
        uj = (xj + 1) / 2
        wj = wj / 2 ** (1 + singular_exponent)
        s0 = a[0] + h[0] * uj
        smooth = kappa(s0) / (h[0] * uj) ** singular_exponent
        scale = h[0] ** (1 + singular_exponent)
        wl[0] = scale * np.sum(wj * smooth * (1 - uj))
        wr[0] = scale * np.sum(wj * smooth * uj)
    return wl, wr


def _kappa(kind, H0, theta, theta_prime):
    if kind == "one":
        return (lambda s: np.ones_like(s)), 0.0
    if kind == "kernel":
        return (lambda s: fbm_core.kernel_kh_array(H0, s, theta)), H0 - 0.5
    if kind == "kernel-diff":
        return (lambda s: fbm_core.kernel_kh_array(H0, s, theta) - fbm_core.kernel_kh_array(H0, s, theta_prime)), H0 - 0.5
    raise DomainError(f"unknown weight kind '{kind}'")


def simplex_time_integral(values, nodes, kappas):
    """``int_{nodes[0] < s_1 < ... < s_m < nodes[-1]} prod g_j(s_j) kappa_j(s_j) ds`` by nested product trapezoid.

    ``values[j]`` holds ``g_j`` on ``nodes`` (trailing axis); ``kappas[j]`` is ``(wl, wr)``.
    """
    G = None
    for g, (wl, wr) in zip(values, kappas):
        integrand = g if G is None else g * G
        cell = wl * integrand[..., :-1] + wr * integrand[..., 1:]
        G = np.concatenate([np.zeros(cell.shape[:-1] + (1,)), np.cumsum(cell, axis=-1)], axis=-1)
    return G[..., -1]


@dataclass
class MomentBoundResult:
    lhs: float
    se: float
    rhs: float
    passed: bool
    signed_mean: float


#: Frozen constant. :func:`calibrate_moment_constant` (seed 7, 4000 paths) needs
#: about 0.33 on its reference set; 1.0 is the rounded-up value used everywhere else.
MOMENT_BOUND_CONSTANT = 1.0


def moment_bound_rhs(m, alpha, H0, Hr, lam_r, gamma, eps, l1_norms, theta, t, theta_prime=None, C=MOMENT_BOUND_CONSTANT):
    """Right-hand side of the simplex moment estimate for ``d = 1``.

    ``lam_r^{-m} C^{m+|alpha|} prod ||f_j||_1 theta^{(H0-1/2) sum eps} ((2|alpha|)!)^{1/4}
    (t-theta)^{E} / Gamma(2E)^{1/2}`` with ``E = -Hr(m + 2|alpha|) + (H0-1/2-gamma) sum eps + m``.
    With ``theta_prime`` the kernel-difference form applies: the factor
    ``((theta-theta')/(theta theta'))^{gamma sum eps} theta^{(H0-1/2-gamma) sum eps}`` replaces the theta power.
    """
    alpha = np.asarray(alpha, dtype=int)
    eps = np.asarray(eps, dtype=int)
    na, ne = int(alpha.sum()), int(eps.sum())
    E = -Hr * (m + 2 * na) + (H0 - 0.5 - gamma) * ne + m
    if E <= 0:
        raise DomainError("the time exponent must be positive")
    if theta_prime is None:
        tfac = theta ** ((H0 - 0.5) * ne) if ne else 1.0
    else:
        tfac = ((theta - theta_prime) / (theta * theta_prime)) ** (gamma * ne) * theta ** ((H0 - 0.5 - gamma) * ne)
    logval = (
        -m * math.log(abs(lam_r))
        + (m + na) * math.log(C)
        + float(np.sum(np.log(l1_norms)))
        + 0.25 * math.lgamma(2 * na + 1)
        + E * math.log(t - theta)
        - 0.5 * special.gammaln(2 * E)
    )
    return float(tfac * math.exp(logval))


def _check_moment_hypothesis(Hr, gamma, alpha):
    for a in np.atleast_1d(alpha):
        denom = 2 * a  # d - 1 + 2|alpha_j| with d = 1
        if denom > 0 and not Hr < (0.5 - gamma) / denom:
            raise DomainError(f"H_r={Hr} violates H_r < (1/2 - gamma)/{denom}")


def moment_bound_lhs(spec, r0, factors, alpha, eps, theta, t, mc_paths, seed, n_steps=256, theta_prime=None, batch=2000):
    """MC estimate (mean, SE) of ``E int_{Delta^m_{theta,t}} prod D^{alpha_j} f_j(B_s_j) kappa_j(s_j) ds``."""
    m = len(factors)
    grid = fbm_core.TimeGrid.uniform(t, n_steps)
    k0 = int(round(theta / t * n_steps))
    if not np.isclose(grid.points[k0], theta, rtol=0, atol=1e-12):
        raise DomainError("theta must be a node of the uniform grid on [0, t]")
    nodes = grid.points[k0:]
    kind = "one" if not np.any(eps) else ("kernel" if theta_prime is None else "kernel-diff")
    H0 = spec.hurst_seq[r0]
    kap, expo = _kappa(kind, H0, theta, theta_prime)
    kw_on = _cell_weights(kap, nodes, expo)
    kw_off = _cell_weights(lambda s: np.ones_like(s), nodes, 0.0)
    kws = [kw_on if e else kw_off for e in eps]
    out = np.empty(mc_paths)
    for start in range(0, mc_paths, batch):
        n = min(batch, mc_paths - start)
        B = regnoise.sample_regularizing_batch(spec, grid, seed, n, start)[:, 0, k0:]
        vals = [fac.derivative(a)(B) for fac, a in zip(factors, alpha)]
        out[start : start + n] = simplex_time_integral(vals, nodes, kws)
    return float(out.mean()), float(out.std(ddof=1) / np.sqrt(mc_paths))


def moment_bound_check(spec, r0, r, factors, alpha, eps, theta, t, mc_paths, seed, gamma=None, theta_prime=None, n_steps=256, C=MOMENT_BOUND_CONSTANT):
    """MC left side against the simplex moment bound for ``m = len(factors)`` in ``{1, 2}``; levels are 0-based."""
    m = len(factors)
    if m not in (1, 2):
        raise DomainError("m must be 1 or 2")
    if spec.dimension != 1:
        raise DomainError("moment bounds are checked in d = 1")
    if not 0 <= r0 <= r < spec.truncation:
        raise DomainError("need 0 <= r0 <= r < truncation")
    alpha = np.asarray(alpha, dtype=int)
    eps = np.asarray(eps, dtype=int)
    if alpha.shape != (m,) or eps.shape != (m,) or not np.all(np.isin(alpha, (0, 1))) or not np.all(np.isin(eps, (0, 1))):
        raise DomainError("alpha and eps must be 0/1 vectors of length m")
    H0, Hr = spec.hurst_seq[r0], spec.hurst_seq[r]
    if gamma is None:
        gamma = H0 / 10
    if not 0 < gamma < H0:
        raise DomainError("gamma must lie in (0, H_r0)")
    _check_moment_hypothesis(Hr, gamma, alpha)
    mean, se = moment_bound_lhs(spec, r0, factors, alpha, eps, theta, t, mc_paths, seed, n_steps, theta_prime)
    rhs = moment_bound_rhs(m, alpha, H0, Hr, spec.lambda_seq[r], gamma, eps, [f.l1_norm for f in factors], theta, t, theta_prime, C)
    lhs = abs(mean)
    return MomentBoundResult(lhs, se, rhs, bool(lhs <= rhs), mean)


def gaussian_expectation_path_integral(spec, factor, order, theta, t, n_steps=256, gh_nodes=80):
    """``int_theta^t E D^order f(B_s) ds`` with the expectation by Gauss-Hermite (``B_s`` is centered Gaussian)."""
    grid = fbm_core.TimeGrid.uniform(t, n_steps)
    k0 = int(round(theta / t * n_steps))
    nodes = grid.points[k0:]
    x, w = special.roots_hermitenorm(gh_nodes)
    w = w / np.sqrt(2 * np.pi)
    sd = np.sqrt(spec.variance(nodes))
    g = factor.derivative(order)(sd[:, None] * x[None, :]) @ w
    kw = _cell_weights(lambda s: np.ones_like(s), nodes, 0.0)
    return float(simplex_time_integral([g], nodes, [kw]))


def calibrate_moment_constant(seed=7, mc_paths=4000):
    """Smallest ``C`` making the bound hold on a fixed reference set (the source of :data:`MOMENT_BOUND_CONSTANT`)."""
    spec = regnoise.RegularizingSpec((0.3, 0.2), (1.0, 1.0))
    cases = [
        ([SmoothFactor.gaussian(0.0, 0.3)], [0], [0], 0.0, 1.0),
        ([SmoothFactor.gaussian(0.2, 0.3)], [1], [0], 0.25, 1.0),
        ([SmoothFactor.gaussian(0.0, 0.3)], [0], [1], 0.25, 1.0),
        ([SmoothFactor.gaussian(0.0, 0.3)] * 2, [0, 0], [1, 0], 0.25, 1.0),
        ([SmoothFactor.gaussian(0.1, 0.3)] * 2, [1, 0], [0, 1], 0.25, 1.0),
    ]
    need = 0.0
    for facs, al, ep, th, t in cases:
        res = moment_bound_check(spec, 0, 1, facs, al, ep, th, t, mc_paths, seed, C=1.0)
        power = len(facs) + int(np.sum(al))
        need = max(need, (res.lhs / res.rhs) ** (1.0 / power))
    return need


# ---------------------------------------------------------------------------
# Gaussian product moments and the conditional-variance identity
# ---------------------------------------------------------------------------


def permanent(A):
    """Brute-force ``sum_sigma prod_i A[i, sigma(i)]`` (``n <= 8``)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or n > 8:
        raise DomainError("permanent needs a square matrix with n <= 8")
    rows = np.arange(n)
    return float(sum(np.prod(A[rows, list(p)]) for p in itertools.permutations(range(n))))


def _check_psd(S, tol=1e-12):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-14):
        raise DomainError("covariance must be a symmetric square matrix")
    ev = np.linalg.eigvalsh(S)
    if ev.min() < -tol * max(1.0, ev.max()):
        raise DomainError("covariance is not positive semidefinite")
    return S


@dataclass
class ProductMomentCheck:
    mc_estimate: float
    se: float
    sqrt_perm: float
    passed: bool


def gaussian_product_moment_check(S, mc_paths, seed, n_sigma=3.0):
    """MC ``E|X_1 ... X_n|`` for ``X ~ N(0, S)`` against ``sqrt(perm S)``."""
    S = _check_psd(S)
    n = S.shape[0]
    if n > 4:
        raise DomainError("n <= 4")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    w, V = np.linalg.eigh(S)
    root = V * np.sqrt(np.clip(w, 0, None))
    X = rng.standard_normal((mc_paths, n)) @ root.T
    vals = np.abs(np.prod(X, axis=1))
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(mc_paths))
    bound = math.sqrt(permanent(S))
    return ProductMomentCheck(mean, se, bound, bool(mean <= bound + n_sigma * se))


def random_psd(n, rng):
    """A random covariance ``A A^T / n`` with standard normal ``A``."""
    A = rng.standard_normal((n, n))
    return A @ A.T / n


def conditional_variance_first(S):
    """``Var[Z_1 | Z_2, ..., Z_n] = 1 / (S^{-1})_{11}``."""
    S = np.asarray(S, dtype=float)
    if S.shape[0] == 1:
        return float(S[0, 0])
    ev = np.linalg.eigvalsh(S)
    if ev.min() <= 1e-14 * ev.max():
        raise SingularCovarianceError("covariance is singular", [int(np.argmin(ev))])
    S11, S12, S22 = S[0, 0], S[0, 1:], S[1:, 1:]
    return float(S11 - S12 @ np.linalg.solve(S22, S12))


@dataclass
class IdentityCheck:
    lhs: float
    rhs: float
    abs_diff: float


def conditional_variance_identity_check(S, g, box=None, n_nodes=801, gh_nodes=120):
    """``int g(v_1) exp(-1/2 v^T S v) dv`` (tensor trapezoid, ``n <= 2``) against
    ``(2 pi)^{(n-1)/2} det(S)^{-1/2} int g(v / sigma_1) exp(-v^2/2) dv`` (Gauss-Hermite).

    The trapezoid rule converges geometrically for these analytic, rapidly
    decaying integrands; ``box`` defaults to 12 standard deviations of the
    Gaussian weight in every coordinate.
    """
    S = _check_psd(np.atleast_2d(S))
    n = S.shape[0]
    if n > 2:
        raise DomainError("n <= 2")
    if np.linalg.eigvalsh(S).min() <= 1e-14 * np.abs(S).max():
        raise SingularCovarianceError("covariance is singular", list(range(n)))
    sig1 = math.sqrt(conditional_variance_first(S))
    if box is None:
        box = 12.0 * np.sqrt(np.diag(np.linalg.inv(S))).max()
    v = np.linspace(-box, box, n_nodes)
    dv = v[1] - v[0]
    if n == 1:
        lhs = float(np.sum(g(v) * np.exp(-0.5 * S[0, 0] * v**2)) * dv)
    else:
        V1, V2 = np.meshgrid(v, v, indexing="ij")
        q = S[0, 0] * V1**2 + 2 * S[0, 1] * V1 * V2 + S[1, 1] * V2**2
        lhs = float(np.sum(g(V1) * np.exp(-0.5 * q)) * dv * dv)
    x, w = special.roots_hermitenorm(gh_nodes)
    rhs = float((2 * np.pi) ** ((n - 1) / 2) / math.sqrt(np.linalg.det(S)) * np.sum(w * g(x / sig1)))
    return IdentityCheck(lhs, rhs, abs(lhs - rhs))
