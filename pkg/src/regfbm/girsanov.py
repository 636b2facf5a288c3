"""Change of measure for one level of the regularizing noise.

Level indices are 0-based throughout. For a path ``X`` on a grid and a drift
``b``, the integrand is ``theta = K_H^{-1}((1/lambda) int_0^. b(r, X_r) dr)``
for the chosen level, and the density is
``xi_T = exp(-sum theta_k dW_k - 1/2 sum theta_k^2 h_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

from . import fbm_core, fraccalc, regnoise
from .errors import DomainError, GridError, NumericFailure


@dataclass
class ThetaPath:
    """Left-point values ``theta_{t_k}`` on every step, shape ``(..., d, N-1)``.

    With the ``product`` method ``values[..., 0]`` holds the limit at ``s = 0``,
    which is zero for bounded drifts.
    """

    level: int
    grid: fbm_core.TimeGrid
    values: np.ndarray
    method: str = "product"


@dataclass
class GirsanovRecord:
    stochastic_integral: np.ndarray
    energy: np.ndarray
    log_xi: np.ndarray

    @property
    def xi_T(self):
        return np.exp(self.log_xi)


def _path_arrays(X, grid=None):
    if grid is None:
        grid = X.grid
        X = X.values
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != len(grid):
        raise GridError("path values must cover the grid")
    return X, grid


def drift_along(b, X, grid):
    """``b(t_k, X_{t_k})`` with shape ``(..., d, N)`` for paths ``X`` of shape ``(..., d, N)``."""
    pts = np.moveaxis(X, -1, 0)  # (N, ..., d)
    out = np.stack([b(t, x) for t, x in zip(grid.points, pts)], axis=0)
    if not np.all(np.isfinite(out)):
        raise NumericFailure("drift evaluation returned non-finite values")
    return np.moveaxis(out, 0, -1)


def theta_from_drift_values(H, lam, bvals, grid, method="product"):
    """``theta`` from drift values ``bvals[..., N]`` sampled along a path.

    ``product``: the continuous formula ``s^{H-1/2} I^{1/2-H}[s^{1/2-H} b] / (lambda c)``
    by product integration with ``b`` interpolated linearly, where
    ``c = c_H Gamma(H+1/2)`` converts the fractional-integral operator to the
    covariance-normalized kernel that builds the paths.

    ``discrete``: the integrand for which the Volterra sampler's level path,
    shifted by ``sum_k A_ik theta_k h_k``, reproduces the left-point drift
    integral ``sum_{k<i} b_k h_k / lambda`` at every node. Reweighting
    ``x + B`` with it gives exactly the law of the Euler scheme on the grid.
    """
    if lam == 0:
        raise DomainError("the level weight must be nonzero")
    if method == "product":
        W = fraccalc.weighted_integral_weights(0.5 - H, 0.5 - H, grid)
        s = grid.points
        inner = bvals @ W[1:-1].T
        out = np.zeros(bvals.shape[:-1] + (len(grid) - 1,))
        out[..., 1:] = s[1:-1] ** (H - 0.5) * inner / (lam * fraccalc.kernel_operator_constant(H))
        return out
    if method == "discrete":
        A, _ = fbm_core.volterra_weights(H, grid)
        h = grid.steps
        M = A[1:] * h
        rhs = np.cumsum(bvals[..., :-1] * h, axis=-1) / lam
        flat = rhs.reshape(-1, rhs.shape[-1]).T
        sol = linalg.solve_triangular(M, flat, lower=True)
        return sol.T.reshape(rhs.shape)
    raise DomainError(f"unknown theta method '{method}'")


def compute_theta(spec, level, b, X, grid=None, method="product"):
    """``theta`` for ``level`` of ``spec`` along paths ``X`` (an object with ``grid``/``values`` or an array)."""
    if not 0 <= level < spec.truncation:
        raise DomainError(f"level {level} outside 0..{spec.truncation - 1}")
    X, grid = _path_arrays(X, grid)
    bvals = drift_along(b, X, grid)
    vals = theta_from_drift_values(spec.hurst_seq[level], spec.lambda_seq[level], bvals, grid, method)
    return ThetaPath(level, grid, vals, method)


def radon_nikodym(theta, increments):
    """Density record from ``theta`` and the level's increments ``(..., d, N-1)``.

    The stochastic integral is the left-point (Ito) sum and the energy uses
    the same left-point values, so ``exp(-theta_k dW_k - theta_k^2 h_k / 2)``
    has conditional mean one on every step and ``E[xi_T] = 1`` holds exactly
    for the discrete density.
    """
    dw = np.asarray(increments, dtype=float)
    if dw.shape[-1] != theta.values.shape[-1]:
        raise GridError("theta and increments must cover the same steps")
    h = theta.grid.steps
    si = np.sum(theta.values * dw, axis=(-2, -1))
    energy = np.sum(theta.values**2 * h, axis=(-2, -1))
    return GirsanovRecord(si, energy, -si - 0.5 * energy)


# ---------------------------------------------------------------------------
# Analytic bounds
# ---------------------------------------------------------------------------


def _check_eps(H, eps):
    if not 0.0 < eps < 1.0:
        raise DomainError("eps must lie in (0, 1)")
    if not H < 1.0 / (1.0 + eps) - 0.5:
        raise DomainError(f"H={H} violates H < 1/(1+eps) - 1/2 = {1 / (1 + eps) - 0.5:.6g}")


def theta_bound_constant(H, lam, eps):
    """Constant of the Holder estimate ``|theta_s| <= C s^{1/(1+eps)-H-1/2} ||b||_{L^{(1+eps)/eps}(0,s)}``.

    Includes the kernel normalization ``1 / (c_H Gamma(H+1/2))`` carried by ``theta``.
    """
    _check_eps(H, eps)
    r = 1.0 / (1.0 + eps)
    num = special.gamma(1 - (1 + eps) * (H + 0.5)) ** r * special.gamma(1 + (1 + eps) * (0.5 - H)) ** r
    den = abs(lam) * fraccalc.kernel_operator_constant(H) * special.gamma(0.5 - H) * special.gamma(2 * (1 - (1 + eps) * H)) ** r
    return float(num / den)


def theta_bound_shape(H, eps, bvals, grid):
    """``s^{1/(1+eps)-H-1/2} (int_0^s |b|^{(1+eps)/eps})^{eps/(1+eps)}`` at the left node of every step."""
    p = (1 + eps) / eps
    mag = np.linalg.norm(bvals, axis=-2) ** p  # (..., N)
    s = grid.points
    cum = np.concatenate(
        [np.zeros(mag.shape[:-1] + (1,)), np.cumsum(0.5 * (mag[..., 1:] + mag[..., :-1]) * grid.steps, axis=-1)], -1
    )
    with np.errstate(divide="ignore"):
        shape = s ** (1 / (1 + eps) - H - 0.5) * cum ** (1 / p)
    return shape[..., :-1]


def fit_theta_constant(theta, bvals, H, eps):
    """Largest observed ratio ``|theta_s| / shape(s)`` over ``s > 0``."""
    shape = theta_bound_shape(H, eps, bvals, theta.grid)
    mag = np.linalg.norm(theta.values, axis=-2)
    ok = shape > 0
    return float(np.max(mag[ok] / shape[ok]))


def energy_constant(H, lam, eps, horizon=1.0):
    """``C`` with ``int_0^T theta^2 <= C (1 + int_0^T |b|^{(1+eps)/eps})``."""
    c = theta_bound_constant(H, lam, eps)
    a = 2 * eps / (1 + eps)
    e = 2 / (1 + eps) - 2 * H
    return c**2 * max(a, 1 - a) * horizon**e / e


@dataclass
class NovikovBound:
    value: float
    series: float
    argument: float
    energy_constant: float
    terms: int
    tail_flag: bool


def novikov_bound(H, lam, eps, mu, b_norm, series_terms=60, horizon=1.0, q=1.0, lemma_constant=1.0):
    """Majorant of ``E exp(mu int_0^T theta^2 ds)`` for a drift bounded by ``b_norm``.

    Combines the energy estimate ``int theta^2 <= C_T (1 + int |b|^{(1+eps)/eps})``
    with the exponential moment series ``A(x) = sum_m C^m x^m / (m!)^{1/q}``
    evaluated at ``x = mu C_T ||b||^{(1+eps)/eps} T``. ``lemma_constant`` stands
    in for the non-explicit constant of the exponential moment estimate.
    """
    _check_eps(H, eps)
    if not 1 <= series_terms <= 200:
        raise DomainError("series_terms must lie in 1..200")
    if b_norm < 0:
        raise DomainError("b_norm must be nonnegative")
    ct = energy_constant(H, lam, eps, horizon)
    if mu <= 0:
        # exp(mu * nonnegative) <= 1
        return NovikovBound(1.0, 0.0, 0.0, ct, series_terms, False)
    x = mu * ct * b_norm ** ((1 + eps) / eps) * horizon
    m = np.arange(1, series_terms + 1)
    with np.errstate(divide="ignore"):
        logs = m * np.log(lemma_constant * x) - special.gammaln(m + 1) / q
    terms = np.exp(logs) if x > 0 else np.zeros(series_terms)
    series = float(terms.sum())
    tail = bool(series > 0 and terms[-1] > 1e-12 * series)
    return NovikovBound(float(np.exp(mu * ct) * (1 + series)), series, float(x), ct, series_terms, tail)


# ---------------------------------------------------------------------------
# Weak solutions by reweighting
# ---------------------------------------------------------------------------


@dataclass
class WeakEstimate:
    mean: float
    se: float
    ci_low: float
    ci_high: float
    n_paths: int
    weight_mean: float


def reweighted_samples(spec, level, b, t, x, mc_paths, seed, n_steps=128, method="product", batch=5000, payoff=None):
    """Per-replicate ``(payoff(x + B_t), weight)``.

    The weight is the density for the drift ``-b`` on ``level``; under it
    ``x + B`` solves ``dX = b dt + dB``.
    """
    grid = fbm_core.TimeGrid.uniform(t, n_steps)
    x = np.broadcast_to(np.asarray(x, dtype=float), (spec.dimension,))
    f_vals = np.empty(mc_paths)
    weights = np.empty(mc_paths)
    for start in range(0, mc_paths, batch):
        m = min(batch, mc_paths - start)
        values, dw = regnoise.sample_regularizing_batch(spec, grid, seed, m, start, return_increments=True)
        X = x[:, None] + values
        bvals = drift_along(b, X, grid)
        th = theta_from_drift_values(spec.hurst_seq[level], spec.lambda_seq[level], -bvals, grid, method)
        rec = radon_nikodym(ThetaPath(level, grid, th, method), dw[:, level])
        weights[start : start + m] = rec.xi_T
        f_vals[start : start + m] = payoff(X[..., -1]) if payoff is not None else 1.0
    return f_vals, weights


def weak_solution_expectation(spec, level, b, payoff, t, x, mc_paths, seed, n_steps=128, method="product", level_ci=0.95, batch=5000):
    """Importance-sampling estimate of ``E F(X_t)`` for ``dX = b dt + dB``, ``X_0 = x``."""
    f_vals, w = reweighted_samples(spec, level, b, t, x, mc_paths, seed, n_steps, method, batch, payoff)
    y = f_vals * w
    mean = float(y.mean())
    se = float(y.std(ddof=1) / np.sqrt(mc_paths))
    z = stats.norm.ppf(0.5 + level_ci / 2)
    return WeakEstimate(mean, se, mean - z * se, mean + z * se, mc_paths, float(w.mean()))
