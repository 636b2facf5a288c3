"""Fractional Brownian motion: covariance, Volterra kernel and exact path sampling.

Paths are stored with a trailing time axis. A single :class:`FbmPath` holds
``values`` of shape ``(d, N)``; the batch samplers return arrays of shape
``(n_paths, d, N)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, special

from . import _rng
from .errors import DomainError, GridError, SingularCovarianceError

#: Largest grid accepted by the dense (matrix) methods.
MAX_DENSE_POINTS = 4096


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points starting at 0 and ending at or before ``horizon``."""

    points: np.ndarray
    horizon: float

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise GridError("a time grid needs at least 2 points")
        if pts[0] != 0.0:
            raise GridError("a time grid must start at t=0")
        if np.any(np.diff(pts) <= 0):
            raise GridError("time points must be strictly increasing")
        if self.horizon <= 0 or pts[-1] > self.horizon * (1 + 1e-12):
            raise GridError("last point must not exceed the horizon")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def uniform(cls, horizon=1.0, n_steps=128):
        return cls(np.linspace(0.0, horizon, n_steps + 1), horizon)

    @classmethod
    def graded(cls, horizon=1.0, n_steps=128, power=2.0):
        """Points ``T (k/n)^power``, refined near t=0."""
        return cls(horizon * np.linspace(0.0, 1.0, n_steps + 1) ** power, horizon)

    def __len__(self):
        return self.points.size

    @property
    def steps(self):
        return np.diff(self.points)

    def index_of(self, t, atol=1e-12):
        idx = int(np.argmin(np.abs(self.points - t)))
        if abs(self.points[idx] - t) > atol * max(1.0, abs(t)):
            raise GridError(f"t={t} is not a grid point")
        return idx

    def key(self):
        return (self.points.tobytes(), self.horizon)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


def check_dense_budget(grid):
    if len(grid) > MAX_DENSE_POINTS:
        raise GridError(f"grid has {len(grid)} points; dense methods are capped at {MAX_DENSE_POINTS}")


# ---------------------------------------------------------------------------
# Covariance and kernel
# ---------------------------------------------------------------------------


def _check_hurst(H, upper=1.0):
    if not 0.0 < H < upper:
        raise DomainError(f"Hurst parameter must lie in (0, {upper}), got {H}")


def rh_cov(H, t, s):
    """Covariance ``E[B_t B_s] = (t^2H + s^2H - |t-s|^2H) / 2`` (broadcasts)."""
    _check_hurst(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise DomainError("times must be nonnegative")
    out = 0.5 * (t ** (2 * H) + s ** (2 * H) - np.abs(t - s) ** (2 * H))
    return float(out) if out.ndim == 0 else out


def kernel_constant(H):
    """Normalizing constant ``c_H`` of the Volterra kernel."""
    _check_hurst(H, 0.5)
    return float(np.sqrt(2 * H / ((1 - 2 * H) * special.beta(1 - 2 * H, H + 0.5))))


def kernel_kh(H, t, s):
    """Volterra kernel ``K_H(t, s)`` for ``0 < s < t`` by adaptive quadrature.

    The integral term has an endpoint singularity ``(u - s)^(H-1/2)``; the
    substitution ``u = s + (t - s) v^(1/(H+1/2))`` removes it exactly, leaving
    a smooth integrand on ``[0, 1]``.
    """
    _check_hurst(H, 0.5)
    if not 0.0 < s < t:
        raise DomainError(f"kernel needs 0 < s < t, got s={s}, t={t}")
    q = 1.0 / (H + 0.5)
    val, _ = integrate.quad(
        lambda v: (s + (t - s) * v**q) ** (H - 1.5), 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200
    )
    inner = (t - s) ** (H + 0.5) / (H + 0.5) * val
    first = (t / s) ** (H - 0.5) * (t - s) ** (H - 0.5)
    return kernel_constant(H) * (first + (0.5 - H) * s ** (0.5 - H) * inner)


def kernel_kh_array(H, t, s):
    """Vectorized ``K_H(t, s)``; zero wherever ``s <= 0`` or ``s >= t``.

    Uses the incomplete-beta form of the integral term,
    ``s^(2H-1) B(1-2H, H+1/2) (1 - I_{s/t}(1-2H, H+1/2))``.
    """
    _check_hurst(H, 0.5)
    t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    out = np.zeros(t.shape)
    mask = (s > 0) & (s < t)
    tt, ss = t[mask], s[mask]
    a, b = 1 - 2 * H, H + 0.5
    tail = special.betainc(b, a, 1.0 - ss / tt)
    out[mask] = kernel_constant(H) * (
        (tt / ss) ** (H - 0.5) * (tt - ss) ** (H - 0.5)
        + (0.5 - H) * ss ** (H - 0.5) * special.beta(a, b) * tail
    )
    return out


def graded_panels(a, b, layers=40, ratio=0.5):
    """Panel edges on ``[a, b]`` refined geometrically toward both endpoints."""
    half = 0.5 * (b - a) * ratio ** np.arange(layers)
    edges = np.concatenate([[a], a + half[::-1], b - half, [b]])
    return np.unique(edges)


def kernel_covariance_quad(H, t, s, layers=20, q=12):
    """``int_0^{min(t,s)} K_H(t,u) K_H(s,u) du`` by Gauss-Legendre on geometrically graded panels.

    The two end panels use Gauss-Jacobi rules carrying the endpoint powers
    exactly: ``u^{2H-1}`` at zero and ``(lo-u)^{H-1/2}`` (``(lo-u)^{2H-1}`` when ``t = s``) at the top.
    More than 40 layers would shrink the end panels below double precision.
    """
    _check_hurst(H, 0.5)
    if not 1 <= layers <= 40:
        raise DomainError("layers must lie in 1..40")
    lo, hi = sorted((float(t), float(s)))
    if lo <= 0:
        raise DomainError("times must be positive")
    edges = graded_panels(0.0, lo, layers)

    def f(u):
        return kernel_kh_array(H, t, u) * kernel_kh_array(H, s, u)

    x, w = np.polynomial.legendre.leggauss(q)
    a, b = edges[1:-2], edges[2:-1]
    u = (a[:, None] + (b - a)[:, None] * (x + 1) / 2).ravel()
    total = ((b - a)[:, None] / 2 * w).ravel() @ f(u)
    # left end panel: weight (u - 0)^{2H-1}
    e0, h0 = 2 * H - 1, edges[1]
    xj, wj = special.roots_jacobi(q, 0.0, e0)
    uj = h0 * (xj + 1) / 2
    total += (h0 / 2) ** (1 + e0) * wj @ (f(uj) / uj**e0)
    # right end panel: weight (lo - u)^{e1}
    e1 = 2 * H - 1 if lo == hi else H - 0.5
    h1 = lo - edges[-2]
    xj, wj = special.roots_jacobi(q, e1, 0.0)
    uj = edges[-2] + h1 * (xj + 1) / 2
    total += (h1 / 2) ** (1 + e1) * wj @ (f(uj) / (lo - uj) ** e1)
    return float(total)


def covariance_matrix(H, grid):
    """``R_H(t_i, t_j)`` over all grid points (the t=0 row and column vanish)."""
    check_dense_budget(grid)
    x = grid.points
    return rh_cov(H, x[:, None], x[None, :])


def _cholesky_with_jitter(cov, labels=None):
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        n = cov.shape[0]
        jitter = 1e-12 * np.trace(cov) / n
        try:
            return linalg.cholesky(cov + jitter * np.eye(n), lower=True)
        except linalg.LinAlgError as exc:
            idx = list(labels) if labels is not None else list(range(n))
            raise SingularCovarianceError(
                f"covariance block is not positive definite after jitter (indices {idx})", idx
            ) from exc


@functools.lru_cache(maxsize=32)
def _cholesky_factor(H, grid):
    cov = covariance_matrix(H, grid)[1:, 1:]
    return _cholesky_with_jitter(cov, labels=range(1, len(grid)))


# ---------------------------------------------------------------------------
# Paths and drivers
# ---------------------------------------------------------------------------


@dataclass
class FbmPath:
    grid: TimeGrid
    values: np.ndarray  # (d, N)
    hurst: float

    @property
    def dimension(self):
        return self.values.shape[0]


@dataclass
class GaussianDriver:
    """Brownian increments for every level and component of one replicate.

    ``increments[n, j, k]`` is ``W^{n,j}_{t_{k+1}} - W^{n,j}_{t_k}`` with
    variance equal to the step. ``aux[n, j, k]`` holds two independent
    standard normals per step that the Volterra sampler uses to resolve the
    kernel singularity inside a cell; they are independent of the increments
    and so are untouched by a change of drift.
    """

    grid: TimeGrid
    increments: np.ndarray  # (levels, d, N-1)
    aux: np.ndarray  # (levels, d, N-1, 2)
    seed: int
    replicate: int = 0

    @property
    def dimension(self):
        return self.increments.shape[1]

    @property
    def levels(self):
        return self.increments.shape[0]


def driver_normals(seed, replicates, n_levels, d, n_steps):
    """Raw standard normals with shape ``(M, levels, d, N-1, 3)``."""
    replicates = np.atleast_1d(replicates)
    out = np.empty((replicates.size, n_levels, d, n_steps, _rng.DRAWS_PER_STEP))
    for n in range(n_levels):
        for j in range(d):
            out[:, n, j] = _rng.step_normals(seed, replicates, n, j, n_steps)
    return out


def make_driver(grid, n_levels, d, seed, replicate=0):
    z = driver_normals(seed, [replicate], n_levels, d, len(grid) - 1)[0]
    return GaussianDriver(
        grid=grid,
        increments=z[..., 0] * np.sqrt(grid.steps),
        aux=z[..., 1:].copy(),
        seed=int(seed),
        replicate=int(replicate),
    )


def zero_driver(grid, n_levels=1, d=1):
    n = len(grid) - 1
    return GaussianDriver(grid, np.zeros((n_levels, d, n)), np.zeros((n_levels, d, n, 2)), seed=0)


# ---------------------------------------------------------------------------
# Cholesky sampler
# ---------------------------------------------------------------------------


def fbm_cholesky_from_normals(H, grid, z):
    """Map standard normals ``z[..., N-1]`` to exact fBm values ``[..., N]``."""
    L = _cholesky_factor(H, grid)
    out = np.zeros(z.shape[:-1] + (len(grid),))
    out[..., 1:] = z @ L.T
    return out


def sample_fbm_cholesky_batch(H, grid, d, seed, n_paths, level=0, first_replicate=0):
    """Exact fBm paths of shape ``(n_paths, d, N)`` from the covariance factor."""
    _check_hurst(H, 0.5)
    check_dense_budget(grid)
    reps = np.arange(first_replicate, first_replicate + n_paths)
    z = np.empty((n_paths, d, len(grid) - 1))
    for j in range(d):
        z[:, j] = _rng.step_normals(seed, reps, level, j, len(grid) - 1)[..., 0]
    return fbm_cholesky_from_normals(H, grid, z)


def sample_fbm_cholesky(H, grid, d, seed, replicate=0, level=0):
    values = sample_fbm_cholesky_batch(H, grid, d, seed, 1, level=level, first_replicate=replicate)[0]
    return FbmPath(grid, values, H)


# ---------------------------------------------------------------------------
# Volterra sampler
# ---------------------------------------------------------------------------

_JACOBI_NODES = 48


def _cell_basis(H, a, b, first_cell):
    fns = [lambda s: np.ones_like(s), lambda s: (b - s) ** (H - 0.5)]
    if first_cell:
        fns.append(lambda s: s ** (H - 0.5))
    return fns


@functools.lru_cache(maxsize=32)
def volterra_weights(H, grid):
    """Weights ``(A, C)`` of the Volterra sampler on ``grid``.

    Within each cell the Brownian integral ``int K_H(t_i, s) dW_s`` is
    replaced by its projection onto Gaussian features of that cell: the
    increment ``dW_k`` (coefficient ``A[i, k]``, the cell average of the
    kernel) and up to two auxiliary features capturing the ``(t_{k+1}-s)^(H-1/2)``
    and, on the first cell, ``s^(H-1/2)`` singularities of the kernel
    (coefficients ``C[i, k, :]`` against independent standard normals).
    Inner products use Gauss-Jacobi rules that absorb the endpoint
    singularities.
    """
    _check_hurst(H, 0.5)
    check_dense_budget(grid)
    x = grid.points
    N = x.size
    A = np.zeros((N, N - 1))
    C = np.zeros((N, N - 1, 2))
    alpha = 2 * H - 1
    for k in range(N - 1):
        a, b = x[k], x[k + 1]
        first = k == 0
        beta = alpha if first else 0.0
        u, w = special.roots_jacobi(_JACOBI_NODES, alpha, beta)
        s = a + (b - a) * (u + 1) / 2
        weight = w * ((b - a) / 2) ** (1 + alpha + beta) * (b - s) ** (-alpha) * (s - a) ** (-beta)
        phi = np.array([f(s) for f in _cell_basis(H, a, b, first)])
        gram = (phi * weight) @ phi.T
        chol = np.linalg.cholesky(gram)
        psi = np.linalg.solve(chol, phi)
        # psi[0] is the normalized constant, so <K, psi[0]> psi[0] pairs with dW_k / sqrt(h).
        kmat = kernel_kh_array(H, x[k + 1 :, None], s[None, :])
        coef = (kmat * weight) @ psi.T
        h = b - a
        A[k + 1 :, k] = coef[:, 0] / np.sqrt(h)
        C[k + 1 :, k, : coef.shape[1] - 1] = coef[:, 1:]
    A.setflags(write=False)
    C.setflags(write=False)
    return A, C


def volterra_apply(H, grid, increments, aux):
    """Volterra paths from increments ``[..., N-1]`` and aux ``[..., N-1, 2]``."""
    A, C = volterra_weights(H, grid)
    n = len(grid) - 1
    return increments @ A.T + aux.reshape(aux.shape[:-2] + (2 * n,)) @ C.reshape(len(grid), 2 * n).T


def volterra_covariance(H, grid):
    """Exact covariance of the Volterra sampler's output (no Monte Carlo)."""
    A, C = volterra_weights(H, grid)
    h = grid.steps
    flat = C.reshape(len(grid), -1)
    return (A * h) @ A.T + flat @ flat.T


def sample_fbm_volterra(H, driver, level, grid=None):
    """fBm path ``B_t = int_0^t K_H(t, s) dW_s`` built from one driver level."""
    grid = driver.grid if grid is None else grid
    if grid != driver.grid or not 0 <= level < driver.levels:
        raise GridError("driver does not cover the requested grid/level")
    values = volterra_apply(H, grid, driver.increments[level], driver.aux[level])
    return FbmPath(grid, values, H)


# ---------------------------------------------------------------------------
# Local nondeterminism
# ---------------------------------------------------------------------------


def conditional_variance(H, grid, i, S):
    """``Var[B_{t_i} | B_{t_j}, j in S]`` by a Schur complement."""
    S = sorted(int(j) for j in S)
    if i in S:
        raise DomainError("target index must not belong to the conditioning set")
    cov = covariance_matrix(H, grid)
    if not S:
        return float(cov[i, i])
    sub = cov[np.ix_(S, S)]
    L = _cholesky_with_jitter(sub, labels=S)
    v = linalg.solve_triangular(L, cov[S, i], lower=True)
    return float(cov[i, i] - v @ v)


def slnd_ratio(H, grid, i, r):
    """``Var[B_t | B_s : |t - s| >= r, s > 0] / r^(2H)`` over grid points."""
    x = grid.points
    S = [j for j in range(1, len(x)) if abs(x[j] - x[i]) >= r - 1e-14]
    return conditional_variance(H, grid, i, S) / r ** (2 * H)


@dataclass
class SlndScan:
    hurst: float
    radii: np.ndarray
    ratios: np.ndarray
    fitted_constant: float = field(init=False)

    def __post_init__(self):
        self.fitted_constant = float(np.min(self.ratios))


def slnd_scan(H, grid, radii=None):
    """Minimum over targets of the two-sided nondeterminism ratio, per radius."""
    x = grid.points
    if radii is None:
        radii = x[1:len(x) // 2]
    ratios = []
    for r in radii:
        targets = [i for i in range(1, len(x)) if x[i] > r]
        ratios.append(min(slnd_ratio(H, grid, i, r) for i in targets))
    return SlndScan(H, np.asarray(radii), np.asarray(ratios))
