"""Euler simulation of ``dX = b(t, X) dt + dB``, flows under common noise and their derivatives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import fbm_core, regnoise
from .drift import DriftField, mollify  # noqa: F401  (re-exported)
from .errors import DomainError, GridError, NumericFailure


@dataclass
class Trajectory:
    """Solution values ``(..., d, N)``; ``x0`` has shape ``(..., d)``."""

    grid: fbm_core.TimeGrid
    values: np.ndarray
    x0: np.ndarray
    noise: object = None


def _noise_arrays(noise, grid):
    if hasattr(noise, "values"):
        grid = noise.grid if grid is None else grid
        noise = noise.values
    if grid is None:
        raise GridError("a grid is required when the noise is a plain array")
    noise = np.asarray(noise, dtype=float)
    if noise.shape[-1] != len(grid):
        raise GridError("noise must cover the solve grid")
    return noise, grid


def euler_solve(b, x, noise, grid=None, substeps=0, tol=1e-12):
    """``X_{k+1} = X_k + b(t_k, X_k) h_k + (B_{t_{k+1}} - B_{t_k})``.

    ``x`` has shape ``(..., d)`` and ``noise`` shape ``(..., d, N)``; both
    broadcast, so one noise path can drive many initial points.

    With ``substeps > 0``, rows whose drift changes by more than ``tol``
    across the Euler predictor are re-integrated over the step by
    ``substeps`` Heun steps of ``dX = (b + dB_k / h_k) dt``, i.e. along the
    linearly interpolated noise. For drifts that are constant away from thin
    layers (mollified steps) this resolves the layers without refining the
    noise grid; rows where the drift does not change keep the exact Euler step.
    """
    noise, grid = _noise_arrays(noise, grid)
    x = np.asarray(x, dtype=float)
    shape = np.broadcast_shapes(x.shape + (1,), noise.shape)
    dB = np.broadcast_to(np.diff(noise, axis=-1), shape[:-1] + (shape[-1] - 1,))
    out = np.empty(shape)
    cur = np.broadcast_to(x, shape[:-1]).copy()
    out[..., 0] = cur
    t, h = grid.points, grid.steps
    for k in range(len(grid) - 1):
        drift = b(t[k], cur)
        if not np.all(np.isfinite(drift)):
            raise NumericFailure(f"non-finite drift at step {k}", step=k)
        nxt = cur + drift * h[k] + dB[..., k]
        if substeps > 0:
            flag = np.any(np.abs(b(t[k + 1], nxt) - drift) > tol, axis=-1)
            if flag.any():
                nxt[flag] = _heun_substeps(b, cur[flag], dB[..., k][flag] / h[k], t[k], h[k], substeps)
        cur = nxt
        out[..., k + 1] = cur
    return Trajectory(grid, out, x, noise)


def _heun_substeps(b, y, velocity, t0, h, m):
    dt = h / m
    for j in range(m):
        s = t0 + j * dt
        f1 = b(s, y) + velocity
        f2 = b(s + dt, y + dt * f1) + velocity
        y = y + 0.5 * dt * (f1 + f2)
    if not np.all(np.isfinite(y)):
        raise NumericFailure("non-finite value in drift substeps")
    return y


# ---------------------------------------------------------------------------
# Flows
# ---------------------------------------------------------------------------


@dataclass
class FlowEnsemble:
    """Trajectories from every initial point in ``x_grid`` under one shared noise.

    ``values`` has shape ``(..., n_x, d, N)``; leading axes index noise replicates.
    """

    x_grid: np.ndarray  # (n_x, d)
    trajectories: Trajectory
    replicate: object = 0

    @property
    def values(self):
        return self.trajectories.values

    @property
    def grid(self):
        return self.trajectories.grid

    def at(self, t_index=-1):
        return self.values[..., t_index]


def _as_points(x_grid, d):
    x = np.asarray(x_grid, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if d == 1 else x[None, :]
    if x.shape[-1] != d:
        raise DomainError("initial points must have the drift dimension")
    return x


def flow_map(b, x_grid, noise, grid=None, replicate=0, substeps=0):
    """Flow ``x -> X^x`` with every initial point reading the same noise values.

    ``noise`` is one path ``(d, N)`` or a batch ``(M, d, N)``; the result has
    shape ``(n_x, d, N)`` or ``(M, n_x, d, N)``.
    """
    noise, grid = _noise_arrays(noise, grid)
    x = _as_points(x_grid, noise.shape[-2])
    shared = noise[..., None, :, :]  # broadcast over the x axis
    traj = euler_solve(b, x, shared, grid, substeps)
    return FlowEnsemble(x, traj, replicate)


_FD_STENCILS = {
    1: np.array([-0.5, 0.0, 0.5]),
    2: np.array([1.0, -2.0, 1.0]),
    3: np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
    4: np.array([1.0, -4.0, 6.0, -4.0, 1.0]),
}


@dataclass
class FlowDerivative:
    x: np.ndarray  # interior initial points (n,)
    values: np.ndarray  # (..., n, d)
    order: int
    dx: float


def flow_derivative_fd(ensemble, order=1, t_index=-1, component=0):
    """Second-order central differences of ``d^k X_t / dx^k`` along one coordinate of the x-grid."""
    if order not in _FD_STENCILS:
        raise DomainError("derivative order must be 1..4")
    st = _FD_STENCILS[order]
    xs = ensemble.x_grid[:, component]
    if xs.size < st.size:
        raise DomainError(f"order {order} needs at least {st.size} initial points")
    dx = np.diff(xs)
    if not np.allclose(dx, dx[0], rtol=1e-9, atol=0):
        raise GridError("finite differences need a uniform x-grid")
    dx = float(dx[0])
    Xt = ensemble.at(t_index)  # (..., n_x, d)
    half = st.size // 2
    n = xs.size - 2 * half
    acc = sum(c * Xt[..., j : j + n, :] for j, c in enumerate(st) if c != 0.0)
    return FlowDerivative(xs[half : half + n], acc / dx**order, order, dx)


def richardson_check(b, x_grid_fn, noise, dx, order=1, t_index=-1, grid=None):
    """Max difference between finite differences at spacing ``dx`` and ``dx/2`` at shared points."""
    coarse = flow_derivative_fd(flow_map(b, x_grid_fn(dx), noise, grid), order, t_index)
    fine = flow_derivative_fd(flow_map(b, x_grid_fn(dx / 2), noise, grid), order, t_index)
    idx = np.searchsorted(fine.x, coarse.x)
    ok = (idx < fine.x.size) & np.isclose(fine.x[np.minimum(idx, fine.x.size - 1)], coarse.x)
    return float(np.max(np.abs(coarse.values[..., ok, :] - fine.values[..., idx[ok], :])))


# ---------------------------------------------------------------------------
# Linearized equations
# ---------------------------------------------------------------------------


def _require_jacobian(b):
    if not b.has_jacobian:
        raise DomainError(f"drift '{b.name}' has no Jacobian; mollify it before linearizing")


def variational_solve(b, traj):
    """First variation ``Y_{k+1} = Y_k + b'(t_k, X_k) Y_k h_k``, ``Y_0 = I``; shape ``(..., d, d, N)``."""
    _require_jacobian(b)
    X = traj.values
    d = X.shape[-2]
    grid = traj.grid
    Y = np.empty(X.shape[:-2] + (d, d, len(grid)))
    cur = np.broadcast_to(np.eye(d), X.shape[:-2] + (d, d)).copy()
    Y[..., 0] = cur
    for k in range(len(grid) - 1):
        J = b.jac(grid.points[k], X[..., k])
        cur = cur + (J @ cur) * grid.steps[k]
        Y[..., k + 1] = cur
    return Y


@dataclass
class MalliavinPath:
    """``D_{t0} X_t`` at every grid node, shape ``(..., d, d, N)``; zero for ``t <= t0``."""

    level: int
    t0: float
    t0_index: int
    grid: fbm_core.TimeGrid
    values: np.ndarray


def kernel_cell_integrals(H, grid, k0, nodes=24):
    """``int_{t_k}^{t_{k+1}} K_H(s, t_{k0}) ds`` for ``k >= k0`` (zeros before).

    The first cell carries the ``(s - t0)^{H-1/2}`` singularity and uses a
    Gauss-Jacobi rule; the others use Gauss-Legendre.
    """
    x = grid.points
    t0 = x[k0]
    out = np.zeros(len(grid) - 1)
    a, b = x[k0], x[k0 + 1]
    beta = H - 0.5
    u, w = special.roots_jacobi(nodes, 0.0, beta)
    s = a + (b - a) * (u + 1) / 2
    out[k0] = np.sum(w * ((b - a) / 2) ** (1 + beta) * (s - a) ** (-beta) * fbm_core.kernel_kh_array(H, s, t0))
    if k0 + 1 < len(grid) - 1:
        u, w = np.polynomial.legendre.leggauss(nodes)
        lo, hi = x[k0 + 1 : -1], x[k0 + 2 :]
        s = lo[:, None] + (hi - lo)[:, None] * (u[None, :] + 1) / 2
        out[k0 + 1 :] = ((hi - lo) / 2) * (fbm_core.kernel_kh_array(H, s, t0) @ w)
    return out


def malliavin_solve(b, traj, spec, level, t0):
    """Derivative of ``X_t`` in the direction of level ``level``'s Brownian motion at time ``t0``.

    Solves ``D_t = lambda K_H(t, t0) I + int_{t0}^t b'(s, X_s) D_s ds`` by
    writing ``D = lambda K_H(., t0) I + R`` and stepping
    ``R_{k+1} = R_k + b'_k (lambda int_{cell} K_H(s, t0) ds I + R_k h_k)``,
    which integrates the singular source exactly on each cell.
    """
    _require_jacobian(b)
    grid = traj.grid
    k0 = grid.index_of(t0)
    if not 0 < k0 < len(grid) - 1:
        raise DomainError("t0 must be an interior grid point")
    H, lam = spec.hurst_seq[level], spec.lambda_seq[level]
    X = traj.values
    d = X.shape[-2]
    eye = np.eye(d)
    src = lam * kernel_cell_integrals(H, grid, k0)
    kvals = np.zeros(len(grid))
    kvals[k0 + 1 :] = lam * fbm_core.kernel_kh_array(H, grid.points[k0 + 1 :], t0)
    D = np.zeros(X.shape[:-2] + (d, d, len(grid)))
    R = np.zeros(X.shape[:-2] + (d, d))
    for k in range(k0, len(grid) - 1):
        J = b.jac(grid.points[k], X[..., k])
        R = R + J @ (src[k] * eye + R * grid.steps[k])
        D[..., k + 1] = kvals[k + 1] * eye + R
    return MalliavinPath(level, float(grid.points[k0]), k0, grid, D)


# ---------------------------------------------------------------------------
# Picard-series oracles for constant scalar Jacobians
# ---------------------------------------------------------------------------


def picard_variational(c, t, depth=6):
    """``sum_{m<=depth} (c t)^m / m!``: the Picard iterate of ``Y = 1 + c int_0^t Y``."""
    t = np.asarray(t, dtype=float)
    return sum((c * t) ** m / math.factorial(m) for m in range(depth + 1))


def picard_malliavin(H, lam, c, t0, t, depth=6, nodes=64):
    """Picard iterate of ``D_t = lam K_H(t, t0) + c int_{t0}^t D_s ds``.

    ``D_t = lam [K_H(t, t0) + sum_{m=1}^{depth} c^m int_{t0}^t (t-s)^{m-1}/(m-1)! K_H(s, t0) ds]``,
    each integral by Gauss-Jacobi with the ``(s - t0)^{H-1/2}`` weight.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    beta = H - 0.5
    u, w = special.roots_jacobi(nodes, 0.0, beta)
    out = np.zeros(t.shape)
    for i, ti in enumerate(t):
        if ti <= t0:
            continue
        s = t0 + (ti - t0) * (u + 1) / 2
        base = w * ((ti - t0) / 2) ** (1 + beta) * (s - t0) ** (-beta) * fbm_core.kernel_kh_array(H, s, t0)
        total = fbm_core.kernel_kh_array(H, ti, t0)
        for m in range(1, depth + 1):
            total = total + c**m * np.sum(base * (ti - s) ** (m - 1)) / math.factorial(m - 1)
        out[i] = lam * total
    return out


# ---------------------------------------------------------------------------
# Mollification limits and regularization probes
# ---------------------------------------------------------------------------


@dataclass
class CauchyTable:
    levels: list
    mean_sq: np.ndarray  # E|X^n_t - X^m_t|^2
    se: np.ndarray


def cauchy_convergence_probe(b_raw, spec, t, x, levels, mc_paths, seed, n_steps=512, batch=2000):
    """Common-noise estimates of ``E|X^{(n)}_t - X^{(m)}_t|^2`` over pairs of mollification levels."""
    levels = list(levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise DomainError("mollification levels must be increasing")
    grid = fbm_core.TimeGrid.uniform(t, n_steps)
    fields = [mollify(b_raw, n) for n in levels]
    x = np.broadcast_to(np.asarray(x, dtype=float), (spec.dimension,))
    finals = np.empty((len(levels), mc_paths, spec.dimension))
    for start in range(0, mc_paths, batch):
        m = min(batch, mc_paths - start)
        noise = regnoise.sample_regularizing_batch(spec, grid, seed, m, start)
        for i, bn in enumerate(fields):
            finals[i, start : start + m] = euler_solve(bn, x, noise, grid).values[..., -1]
    L = len(levels)
    mean = np.zeros((L, L))
    se = np.zeros((L, L))
    for i in range(L):
        for j in range(L):
            if i == j:
                continue
            sq = np.sum((finals[i] - finals[j]) ** 2, axis=-1)
            mean[i, j] = sq.mean()
            se[i, j] = sq.std(ddof=1) / np.sqrt(mc_paths)
    return CauchyTable(levels, mean, se)


@dataclass
class DerivativeProbe:
    x: np.ndarray
    rms: np.ndarray  # (n_x_interior,) root mean square over replicates
    sup_rms: float
    order: int


def flow_derivative_rms(b, noise_batch, x_grid, grid, order=1, t_index=-1, substeps=0):
    """RMS over noise replicates of the finite-difference flow derivative, and its sup over x."""
    ens = flow_map(b, x_grid, noise_batch, grid, substeps=substeps)
    fd = flow_derivative_fd(ens, order, t_index)
    vals = fd.values[..., 0]
    rms = np.sqrt(np.mean(vals**2, axis=0)) if vals.ndim > 1 else np.abs(vals)
    return DerivativeProbe(fd.x, rms, float(np.max(rms)), order)
