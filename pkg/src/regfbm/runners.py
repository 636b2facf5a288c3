"""Experiment runners behind the CLI: a resolved scenario in, a result table out."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import averaging, drift, fbm_core, fraccalc, girsanov, regnoise, sde_flow, shuffle_simplex
from ._rng import auxiliary_generator
from .errors import DomainError


@dataclass
class ResultTable:
    columns: list
    rows: list
    assertions: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError("row width differs from the header")

    @property
    def passed(self):
        return all(self.assertions.values())


def build_spec(sc):
    n = sc["noise"]
    return regnoise.RegularizingSpec(tuple(n["hurst"]), tuple(n["lambda"]), n["dimension"])


def build_drift(sc, d=None):
    cfg = sc["drift"]
    d = sc["noise"]["dimension"] if d is None else d
    name = cfg["name"]
    if name == "zero":
        b = drift.zero(d)
    elif name == "linear":
        b = drift.linear(cfg["coef"], d)
    elif name == "sign-compact":
        b = drift.sign_compact(d, cfg["radius"])
    elif name == "gauss-bump":
        b = drift.gauss_bump(cfg["amplitude"], cfg["width"], d)
    else:
        b = drift.piecewise_table(np.asarray(cfg["edges"], float), np.asarray(cfg["values"], float), d)
    if cfg["mollification"] > 0:
        b = drift.mollify(b, cfg["mollification"])
    return b


def _grid(sc):
    return fbm_core.TimeGrid.uniform(sc["grid"]["horizon"], sc["grid"]["n_steps"])


# ---------------------------------------------------------------------------


def run_noise_stats(sc):
    p = sc["params"]
    spec = build_spec(sc)
    grid = _grid(sc)
    M, batch, seed = sc["mc"]["paths"], sc["mc"]["batch"], sc["seed"]
    if p["sampler"] not in ("volterra", "cholesky"):
        raise DomainError("sampler must be 'volterra' or 'cholesky'")
    n_steps = len(grid) - 1
    steps = sorted({0, n_steps // 2, n_steps - 1})
    idx = [grid.index_of(t) for t in p["times"]]
    vals = np.empty((M, len(idx)))
    incs = np.empty((M, len(steps)))
    for start in range(0, M, batch):
        m = min(batch, M - start)
        if p["sampler"] == "volterra":
            paths = regnoise.sample_regularizing_batch(spec, grid, seed, m, start)[:, 0]
        else:
            levels = [
                fbm_core.sample_fbm_cholesky_batch(h, grid, 1, seed, m, level=n, first_replicate=start)[:, 0]
                for n, h in enumerate(spec.hurst_seq)
            ]
            paths = regnoise.combine_levels(spec, levels)
        vals[start : start + m] = paths[:, idx]
        dp = np.diff(paths, axis=-1)
        incs[start : start + m] = dp[:, steps]
    rows, ok = [], {}
    h = grid.steps
    for name, data, where, exact in [
        ("var", vals, p["times"], [float(spec.variance(t)) for t in p["times"]]),
        ("incr_var", incs, [float(grid.points[k]) for k in steps], [float(spec.variance(h[k])) for k in steps]),
    ]:
        for j, (t, ex) in enumerate(zip(where, exact)):
            x = data[:, j]
            sq = (x - x.mean()) ** 2
            est = float(x.var(ddof=1))
            se = float(sq.std(ddof=1) / math.sqrt(M))
            z = (est - ex) / se
            passed = abs(z) <= p["n_sigma"]
            ok[f"{name}@{t:g}"] = bool(passed)
            rows.append([name, t, est, se, ex, z, int(passed)])
    return ResultTable(["statistic", "t", "mc", "se", "exact", "z", "pass"], rows, ok)


def run_kernel_identity(sc):
    p = sc["params"]
    rng = auxiliary_generator(sc["seed"], "kernel-identity")
    rows, ok = [], {}
    for H in p["hurst"]:
        for i in range(p["n_pairs"]):
            t, s = (float(v) for v in rng.uniform(0.0, 1.0, 2))
            t, s = max(t, 1e-3), max(s, 1e-3)
            q = fbm_core.kernel_covariance_quad(H, t, s, p["layers"])
            exact = fbm_core.rh_cov(H, t, s)
            rel = abs(q - exact) / abs(exact)
            ok[f"H={H:g}#{i}"] = bool(rel <= p["rtol"])
            rows.append([H, t, s, q, exact, rel])
    return ResultTable(["H", "t", "s", "quadrature", "closed_form", "rel_err"], rows, ok)


def run_fraccalc(sc):
    p = sc["params"]
    sizes = list(p["sizes"])
    rows, ok = [], {}
    for a in p["alpha"]:
        errs = []
        for N in sizes:
            g = fbm_core.TimeGrid.uniform(1.0, N)
            f = fraccalc.GridFunction(g, np.sin(g.points))
            back = fraccalc.rl_derivative(a, fraccalc.rl_integral(a, f)).values
            errs.append(float(np.nanmax(np.abs(back - f.values))))
        orders = np.concatenate([[np.nan], fraccalc.observed_order(errs)])
        for N, e, o in zip(sizes, errs, orders):
            rows.append(["D-I sin", a, N, "sup", e, o])
        ok[f"D-I alpha={a:g} error"] = errs[-1] <= p["tol"]
        ok[f"D-I alpha={a:g} order"] = bool(orders[-1] >= p["min_order"])
    for H in p["hurst"]:
        errs = []
        for N in sizes:
            g = fbm_core.TimeGrid.uniform(1.0, N)
            psi = fraccalc.GridFunction(g, np.cos(g.points))
            back = fraccalc.kh_inverse_ac(H, fraccalc.kh_apply(H, psi))
            errs.append(fraccalc.relative_l2_error(back, psi))
        orders = np.concatenate([[np.nan], fraccalc.observed_order(errs)])
        for N, e, o in zip(sizes, errs, orders):
            rows.append(["KH-inverse cos", H, N, "rel_l2", e, o])
        ok[f"KH H={H:g} error"] = errs[-1] <= p["tol"]
    return ResultTable(["test", "parameter", "N", "metric", "error", "order"], rows, ok)


def run_girsanov(sc):
    p = sc["params"]
    spec = build_spec(sc)
    grid = _grid(sc)
    b = build_drift(sc)
    level = p["level"]
    M, batch, seed = sc["mc"]["paths"], sc["mc"]["batch"], sc["seed"]
    x0 = np.full(spec.dimension, p["x0"])
    rows = []
    xi = np.empty(M)
    for start in range(0, M, batch):
        m = min(batch, M - start)
        values, dw = regnoise.sample_regularizing_batch(spec, grid, seed, m, start, return_increments=True)
        X = x0[:, None] + values
        th = girsanov.compute_theta(spec, level, b, X, grid, p["method"])
        rec = girsanov.radon_nikodym(th, dw[:, level])
        xi[start : start + m] = rec.xi_T
        if p["write_paths"]:
            for r in range(m):
                rows.append([start + r, float(rec.stochastic_integral[r]), float(rec.energy[r]), float(rec.xi_T[r])])
    mean = float(xi.mean())
    se = float(xi.std(ddof=1) / math.sqrt(M))
    ok = {"mean xi within 3 SE of 1": bool(abs(mean - 1.0) <= 3 * se) if se > 0 else mean == 1.0}
    summary = {"mean_xi": mean, "se": se}
    if not p["write_paths"]:
        rows = [["mean", mean, se, float(np.min(xi))]]
        return ResultTable(["statistic", "value", "se", "min_xi"], rows, ok, summary)
    return ResultTable(["replicate", "stochastic_integral", "energy", "xi"], rows, ok, summary)


def _flow_probe(sc):
    p = sc["params"]
    spec = build_spec(sc)
    if spec.dimension != 1:
        raise DomainError("the flow probe runs in d = 1")
    grid = _grid(sc)
    M, batch, seed = sc["mc"]["paths"], sc["mc"]["batch"], sc["seed"]
    n_x = int(round((p["x_max"] - p["x_min"]) / p["dx"])) + 1
    xs = np.round(p["x_min"] + p["dx"] * np.arange(n_x), 12)
    raw = build_drift(sc)
    baseline = drift.gauss_bump() if p["baseline"] == "gauss-bump" else drift.zero()
    zero_noise = np.zeros((1, 1, len(grid)))

    def sup_rms(b, order, noisy=True, substeps=p["substeps"]):
        if not noisy:
            return sde_flow.flow_derivative_rms(b, zero_noise, xs, grid, order, substeps=substeps).sup_rms
        sq = 0.0
        for start in range(0, M, batch):
            m = min(batch, M - start)
            noise = regnoise.sample_regularizing_batch(spec, grid, seed, m, start)
            ens = sde_flow.flow_map(b, xs, noise, grid, substeps=substeps)
            v = sde_flow.flow_derivative_fd(ens, order).values[..., 0]
            sq = sq + np.sum(v**2, axis=0)
        return float(np.sqrt(sq / M).max())

    rows, ok = [], {}
    for order in p["orders"]:
        # the smooth baseline is resolved by plain Euler steps
        base = sup_rms(baseline, order, substeps=0)
        cap = p["cap_factor"] * base
        rows.append(["baseline", 0, "regularizing", order, base, cap, 1])
        for n in p["levels"]:
            bn = drift.mollify(raw, n)
            noisy = sup_rms(bn, order)
            det = sup_rms(bn, order, noisy=False)
            ok[f"order {order} n={n} noisy below cap"] = bool(noisy <= cap)
            ok[f"order {order} n={n} deterministic above cap"] = bool(det > cap)
            rows.append([raw.name, n, "regularizing", order, noisy, cap, int(noisy <= cap)])
            rows.append([raw.name, n, "zero", order, det, cap, int(det > cap)])
    return ResultTable(["drift", "mollification", "noise", "order", "sup_rms", "cap", "pass"], rows, ok)


def _flow_picard(sc):
    p = sc["params"]
    spec = build_spec(sc)
    grid = _grid(sc)
    rows, ok = [], {}
    x0 = np.zeros(1)
    stride = max(1, (len(grid) - 1) // 32)
    for c in p["coefs"]:
        b = drift.linear(c, 1)
        traj = sde_flow.euler_solve(b, x0, np.zeros((1, len(grid))), grid)
        Y = sde_flow.variational_solve(b, traj)[0, 0]
        P = sde_flow.picard_variational(c, grid.points, p["depth"])
        rel_v = float(np.max(np.abs(Y - P)) / np.max(np.abs(Y)))
        M = sde_flow.malliavin_solve(b, traj, spec, 0, p["t0"])
        sel = np.arange(0, len(grid), stride)
        sel = sel[grid.points[sel] > p["t0"]]
        D = M.values[0, 0, sel]
        Pm = sde_flow.picard_malliavin(spec.hurst_seq[0], spec.lambda_seq[0], c, p["t0"], grid.points[sel], p["depth"])
        rel_m = float(np.max(np.abs(D - Pm)) / np.max(np.abs(D)))
        rows.append(["variational", c, rel_v, p["rtol"], int(rel_v <= p["rtol"])])
        rows.append(["malliavin", c, rel_m, p["rtol"], int(rel_m <= p["rtol"])])
        ok[f"variational c={c:g}"] = rel_v <= p["rtol"]
        ok[f"malliavin c={c:g}"] = rel_m <= p["rtol"]
    # b' = 0: the derivative is the kernel itself
    b0 = drift.zero(1)
    traj = sde_flow.euler_solve(b0, x0, np.zeros((1, len(grid))), grid)
    M = sde_flow.malliavin_solve(b0, traj, spec, 0, p["t0"])
    k0 = M.t0_index
    exact = spec.lambda_seq[0] * fbm_core.kernel_kh_array(spec.hurst_seq[0], grid.points[k0 + 1 :], p["t0"])
    err = float(np.max(np.abs(M.values[0, 0, k0 + 1 :] - exact)))
    rows.append(["kernel", 0.0, err, 0.0, int(err == 0.0)])
    ok["zero Jacobian reproduces the kernel"] = err == 0.0
    return ResultTable(["equation", "c", "rel_err", "tol", "pass"], rows, ok)


def run_flow(sc):
    mode = sc["params"]["mode"]
    if mode == "probe":
        return _flow_probe(sc)
    if mode == "picard":
        return _flow_picard(sc)
    raise DomainError("flow mode must be 'probe' or 'picard'")


def run_averaging(sc):
    p = sc["params"]
    spec = build_spec(sc)
    if spec.dimension != 1:
        raise DomainError("averaging runs in d = 1")
    grid = _grid(sc)
    b = build_drift(sc, 1)
    M = sc["mc"]["paths"]
    paths = regnoise.sample_regularizing_batch(spec, grid, sc["seed"], M)[:, 0]
    xs = np.linspace(p["x_min"], p["x_max"], p["n_x"])
    res = averaging.averaging_operator(b, paths, grid, p["t"], xs)
    z = np.linspace(p["z_min"], p["z_max"], p["n_z"])
    L = averaging.occupation_density(paths[0], grid, p["t"], z, p["bandwidth"] or None)
    rows, ok = [], {}
    for j, x in enumerate(xs):
        kde = L.pair(lambda zz: b(0.0, (x + zz)[:, None])[:, 0])
        diff = abs(kde - res.per_path[0, j])
        rows.append([x, float(res.mean[j]), float(res.se[j]), float(res.per_path[0, j]), kde, diff])
    worst = max(r[-1] for r in rows)
    ok["occupation pairing matches the time integral"] = worst <= p["tol"]
    ok["occupation mass equals t"] = abs(L.mass() - p["t"]) <= 1e-6 * p["t"]
    return ResultTable(["x", "mean", "se", "path0", "path0_kde", "abs_diff"], rows, ok, {"bandwidth": L.bandwidth})


def run_bounds(sc):
    p = sc["params"]
    spec = build_spec(sc)
    M, seed = sc["mc"]["paths"], sc["seed"]
    m = len(p["alpha"])
    fac = {"gaussian": averaging.SmoothFactor.gaussian, "odd": averaging.SmoothFactor.odd, "plateau": averaging.SmoothFactor.plateau}
    if p["factor"] not in fac:
        raise DomainError(f"unknown factor '{p['factor']}'")
    factors = [fac[p["factor"]]() for _ in range(m)]
    gamma = p["gamma"] or None
    res = averaging.moment_bound_check(
        spec, p["r0"], p["r"], factors, p["alpha"], p["eps"], p["theta"], p["t"], M, seed, gamma, n_steps=sc["grid"]["n_steps"]
    )
    rows = [["moment", res.lhs, res.se, res.rhs, int(res.passed)]]
    ok = {"moment bound": res.passed}
    # exponential energy moment against its majorant
    H, lam = spec.hurst_seq[0], spec.lambda_seq[0]
    b = build_drift(sc)
    grid = fbm_core.TimeGrid.uniform(p["t"], sc["grid"]["n_steps"])
    values = regnoise.sample_regularizing_batch(spec, grid, seed, min(M, 2000))
    th = girsanov.compute_theta(spec, 0, b, values, grid)
    energy = np.sum(th.values**2 * grid.steps, axis=(-2, -1))
    samples = np.exp(p["mu"] * energy)
    est, se = float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))
    bound = girsanov.novikov_bound(H, lam, p["holder_eps"], p["mu"], b.sup_bound if np.isfinite(b.sup_bound) else 1.0, horizon=p["t"])
    rows.append(["novikov", est, se, bound.value, int(est <= bound.value)])
    ok["novikov majorant"] = est <= bound.value
    return ResultTable(["bound", "lhs", "se", "rhs", "pass"], rows, ok)


def _lemma_shuffle(sc, rows, ok):
    P = np.polynomial.Polynomial
    rng = auxiliary_generator(sc["seed"], "shuffle")
    worst = 0.0
    for m1 in range(1, 4):
        for m2 in range(1, 5 - m1):
            for _ in range(3):
                polys = [P(rng.integers(-3, 4, size=3).astype(float)) for _ in range(m1 + m2)]
                lhs = shuffle_simplex.polynomial_simplex_integral(polys[:m1], np.zeros(m1), 0.0, 1.0)
                lhs *= shuffle_simplex.polynomial_simplex_integral(polys[m1:], np.zeros(m2), 0.0, 1.0)
                inv = shuffle_simplex.enumerate_shuffles(m1, m2).inverse()
                rhs = sum(shuffle_simplex.polynomial_simplex_integral([polys[i] for i in row], np.zeros(m1 + m2), 0.0, 1.0) for row in inv)
                worst = max(worst, abs(lhs - rhs))
                rows.append(["shuffle", f"{m1}+{m2}", lhs, rhs, abs(lhs - rhs), int(abs(lhs - rhs) <= 1e-6)])
    ok["shuffle identity"] = worst <= 1e-6
    bad = 0
    for total in range(1, 11):
        for sizes in shuffle_simplex.compositions(total):
            if len(shuffle_simplex.enumerate_shuffles(*sizes)) != shuffle_simplex.multinomial(sizes):
                bad += 1
    rows.append(["cardinality", "all compositions <= 10", 0.0, float(bad), float(bad), int(bad == 0)])
    ok["shuffle cardinalities"] = bad == 0


def _lemma_dirichlet(sc, rows, ok):
    worst_cf, worst_q = 0.0, 0.0
    for m in range(1, 6):
        params = shuffle_simplex.BoundParams(0.3, 0.0, [0] * m, [0.0] * m)
        cf = shuffle_simplex.dirichlet_gamma_bound(params, None, 0.2, 1.0)
        vol = shuffle_simplex.simplex_volume(m, 0.2, 1.0)
        q = shuffle_simplex.simplex_quad(shuffle_simplex.SimplexIntegrand(m, 0.2, 1.0))
        worst_cf = max(worst_cf, abs(cf / vol - 1))
        worst_q = max(worst_q, abs(q / vol - 1))
        rows.append(["dirichlet", f"m={m}", cf, vol, abs(cf - vol), int(abs(cf / vol - 1) <= 1e-8 and abs(q / vol - 1) <= 1e-6)])
    ok["dirichlet closed form"] = worst_cf <= 1e-8
    ok["dirichlet quadrature"] = worst_q <= 1e-6


def random_kernel_draw(rng):
    """A random configuration ``(H, eps, w, theta, t)`` for the single-kernel simplex bound."""
    m = int(rng.integers(1, 5))
    H = float(rng.uniform(0.05, 0.45))
    eps = rng.integers(0, 2, size=m)
    lo = np.where(eps == 1, -0.5 - H + 0.05, -0.6)
    w = rng.uniform(lo, 0.8)
    theta = float(rng.uniform(0.05, 0.7))
    t = float(rng.uniform(theta + 0.05, 1.0))
    return H, eps, w, theta, t


def _lemma_iterative(sc, rows, ok):
    rng = auxiliary_generator(sc["seed"], "iterative")
    fails = 0
    constants = {}
    for i in range(sc["params"]["draws"]):
        H, eps, w, theta, t = random_kernel_draw(rng)
        key = round(H, 12)
        if key not in constants:
            constants[key] = shuffle_simplex.kernel_ratio_constant(H)
        params = shuffle_simplex.BoundParams(H, 0.0, eps, w)
        num = shuffle_simplex.kernel_simplex_integral(H, eps, w, theta, t, tol=1e-7)
        bound = shuffle_simplex.dirichlet_gamma_bound(params, None, theta, t, constants[key])
        passed = num <= bound
        fails += not passed
        rows.append(["iterative", f"draw {i} m={len(eps)} H={H:.3f}", num, bound, bound - num, int(passed)])
    ok["kernel simplex bound dominates"] = fails == 0


def _lemma_doubleint(sc, rows, ok):
    H = 0.1
    gamma = H / 5
    res = shuffle_simplex.kernel_double_integral(H, gamma / 2)
    rows.append(["doubleint", "H=0.1 beta=0.01", res.value, res.values[-2], abs(res.value - res.values[-2]), int(res.converged)])
    ok["double integral finite"] = res.converged and math.isfinite(res.value)


def _lemma_product_moment(sc, rows, ok):
    rng = auxiliary_generator(sc["seed"], "product-moment")
    fails = 0
    for i in range(sc["params"]["product_draws"]):
        S = averaging.random_psd(3, rng)
        r = averaging.gaussian_product_moment_check(S, sc["mc"]["paths"], [sc["seed"], i])
        fails += not r.passed
        rows.append(["product-moment", f"draw {i}", r.mc_estimate, r.sqrt_perm, r.se, int(r.passed)])
    ok["product moment bound"] = fails == 0


def _lemma_condvar(sc, rows, ok):
    cases = [
        ("n=1 g=1", [[1.7]], lambda v: np.ones_like(v)),
        ("n=1 g=cos", [[0.8]], np.cos),
        ("n=2 rho=0.6 g=v^2", [[1.0, 0.6], [0.6, 1.0]], lambda v: v**2),
        ("n=2 general g=exp(-v^2)", [[2.0, -0.3], [-0.3, 0.5]], lambda v: np.exp(-(v**2))),
    ]
    worst = 0.0
    for name, S, g in cases:
        r = averaging.conditional_variance_identity_check(np.asarray(S), g)
        worst = max(worst, r.abs_diff)
        rows.append(["condvar", name, r.lhs, r.rhs, r.abs_diff, int(r.abs_diff <= 1e-8)])
    ok["conditional variance identity"] = worst <= 1e-8


LEMMAS = {
    "shuffle": _lemma_shuffle,
    "dirichlet": _lemma_dirichlet,
    "iterative": _lemma_iterative,
    "doubleint": _lemma_doubleint,
    "product-moment": _lemma_product_moment,
    "condvar": _lemma_condvar,
}


def run_lemmas(sc):
    rows, ok = [], {}
    for name in sc["params"]["which"]:
        if name not in LEMMAS:
            raise DomainError(f"unknown lemma check '{name}'")
        LEMMAS[name](sc, rows, ok)
    return ResultTable(["check", "case", "lhs", "rhs", "gap", "pass"], rows, ok)


RUNNERS = {
    "noise-stats": run_noise_stats,
    "kernel-identity": run_kernel_identity,
    "fraccalc-roundtrip": run_fraccalc,
    "girsanov": run_girsanov,
    "flow": run_flow,
    "averaging": run_averaging,
    "bounds": run_bounds,
    "lemmas": run_lemmas,
}

MODULE_OF = {
    "noise-stats": "regnoise",
    "kernel-identity": "fbm_core",
    "fraccalc-roundtrip": "fraccalc",
    "girsanov": "girsanov",
    "flow": "sde_flow",
    "averaging": "averaging",
    "bounds": "averaging",
    "lemmas": "shuffle_simplex",
}


def run(sc):
    return RUNNERS[sc["kind"]](sc)
