"""The regularizing process: a finite weighted sum of independent fBms with decreasing Hurst indices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fbm_core
from .errors import DomainError


@dataclass(frozen=True)
class RegularizingSpec:
    """Levels ``n = 0..N-1`` with Hurst indices ``hurst_seq`` and weights ``lambda_seq``."""

    hurst_seq: tuple
    lambda_seq: tuple
    dimension: int = 1

    def __post_init__(self):
        hs = tuple(float(h) for h in self.hurst_seq)
        ls = tuple(float(v) for v in self.lambda_seq)
        object.__setattr__(self, "hurst_seq", hs)
        object.__setattr__(self, "lambda_seq", ls)
        if not hs:
            raise DomainError("at least one level is required")
        if len(hs) != len(ls):
            raise DomainError("hurst_seq and lambda_seq must have the same length")
        if any(not 0.0 < h < 0.5 for h in hs):
            raise DomainError("every Hurst index must lie in (0, 1/2)")
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise DomainError("Hurst indices must be strictly decreasing")
        if any(v == 0.0 or not np.isfinite(v) for v in ls):
            raise DomainError("every weight must be finite and nonzero")
        if self.dimension < 1:
            raise DomainError("dimension must be positive")

    @property
    def truncation(self):
        return len(self.hurst_seq)

    def variance(self, t):
        """Per-component ``Var(B_t) = sum_n lambda_n^2 t^(2 H_n)``."""
        t = np.asarray(t, dtype=float)
        return sum(lam**2 * t ** (2 * h) for h, lam in zip(self.hurst_seq, self.lambda_seq))

    def scaled(self, c):
        return RegularizingSpec(self.hurst_seq, tuple(c * v for v in self.lambda_seq), self.dimension)


def default_lambda(N, c_estimates):
    """Weights ``2^-i exp(-c_i^100)`` for ``i = 1..N``.

    Only the functional form is reproduced; whether a given choice of proxies
    ``c_i`` satisfies the summability conditions behind it is not checked.
    """
    c = np.asarray(c_estimates, dtype=float)
    if N < 1 or c.shape != (N,):
        raise DomainError("c_estimates must have length N >= 1")
    if np.any(c < 0):
        raise DomainError("c_estimates must be nonnegative")
    i = np.arange(1, N + 1)
    return 2.0 ** (-i) * np.exp(-(c**100))


@dataclass
class RegularizingPath:
    grid: fbm_core.TimeGrid
    values: np.ndarray  # (d, N)
    levels: list  # FbmPath per level
    driver: fbm_core.GaussianDriver
    spec: RegularizingSpec


def combine_levels(spec, level_values):
    """``sum_n lambda_n * level_values[n]`` accumulated in ascending ``n``."""
    out = np.zeros_like(level_values[0])
    for lam, v in zip(spec.lambda_seq, level_values):
        out = out + lam * v
    return out


def sample_regularizing(spec, grid, seed, replicate=0, driver=None):
    """One replicate of the regularizing process, built by the Volterra sampler.

    The per-level Brownian drivers are retained on the result so that a
    change of measure can act on exactly the increments that built the path.
    """
    if driver is None:
        driver = fbm_core.make_driver(grid, spec.truncation, spec.dimension, seed, replicate)
    levels = [fbm_core.sample_fbm_volterra(h, driver, n) for n, h in enumerate(spec.hurst_seq)]
    values = combine_levels(spec, [p.values for p in levels])
    return RegularizingPath(grid, values, levels, driver, spec)


def sample_regularizing_batch(spec, grid, seed, n_paths, first_replicate=0, return_levels=False, return_increments=False):
    """Replicates ``first_replicate, ...`` as an array ``(n_paths, d, N)``.

    Replicate ``r`` here is bitwise identical to ``sample_regularizing(..., replicate=r)``.
    Optional extras, in this order: the per-level paths ``(n_paths, levels, d, N)``
    and the Brownian increments ``(n_paths, levels, d, N-1)`` that built them.
    """
    reps = np.arange(first_replicate, first_replicate + n_paths)
    z = fbm_core.driver_normals(seed, reps, spec.truncation, spec.dimension, len(grid) - 1)
    dw = z[..., 0] * np.sqrt(grid.steps)
    level_vals = [
        fbm_core.volterra_apply(h, grid, dw[:, n], z[:, n, :, :, 1:]) for n, h in enumerate(spec.hurst_seq)
    ]
    values = combine_levels(spec, level_vals)
    extras = []
    if return_levels:
        extras.append(np.stack(level_vals, axis=1))
    if return_increments:
        extras.append(dw)
    return (values, *extras) if extras else values


@dataclass
class SpecReport:
    lambda_abs_sum: float
    expected_sup: np.ndarray  # per level MC estimate of E sup_{s<=1} |B^{H_n}_s|
    expected_sup_se: np.ndarray
    continuity_sum: float
    notes: list = field(default_factory=list)


def check_spec(spec, seed, mc_paths=2000, n_steps=511, batch=500):
    """Summability report: ``sum |lambda_n|`` and an MC surrogate of ``sum |lambda_n| E sup |B^{H_n}|``."""
    grid = fbm_core.TimeGrid.uniform(1.0, n_steps)
    sups = np.zeros((spec.truncation, mc_paths))
    for start in range(0, mc_paths, batch):
        m = min(batch, mc_paths - start)
        for n, h in enumerate(spec.hurst_seq):
            paths = fbm_core.sample_fbm_cholesky_batch(h, grid, 1, seed, m, level=n, first_replicate=start)
            sups[n, start : start + m] = np.abs(paths[:, 0]).max(axis=-1)
    mean = sups.mean(axis=1)
    se = sups.std(axis=1, ddof=1) / np.sqrt(mc_paths)
    lam = np.abs(np.asarray(spec.lambda_seq))
    terms = lam * mean
    notes = []
    if spec.truncation >= 3 and np.all(np.diff(terms[-3:]) > 0):
        notes.append("weighted sup terms increase over the last three levels")
    return SpecReport(float(lam.sum()), mean, se, float(terms.sum()), notes)
