import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from regfbm import shuffle_simplex as ss
from regfbm.errors import BudgetExceededError, DomainError, QuadratureError
from regfbm.shuffle_simplex import BoundParams, SimplexIntegrand

P = np.polynomial.Polynomial


class TestShuffles:
    @pytest.mark.parametrize("sizes", [(1,), (1, 1), (2, 1), (2, 3), (1, 2, 1), (3, 3, 2), (2, 2, 2, 1), (1, 1, 1, 1, 1)])
    def test_matches_brute_force(self, sizes):
        S = ss.enumerate_shuffles(*sizes)
        fast = {tuple(r) for r in S.perms.tolist()}
        slow = {tuple(r) for r in ss.brute_force_shuffles(*sizes).tolist()}
        assert fast == slow
        assert ss.validate_shuffles(S).ok

    @pytest.mark.parametrize("total", range(1, 8))
    def test_cardinality_all_compositions(self, total):
        comps = list(ss.compositions(total))
        assert len(comps) == 2 ** (total - 1)
        for sizes in comps:
            assert len(ss.enumerate_shuffles(*sizes)) == ss.multinomial(sizes)

    def test_multinomial(self):
        assert ss.multinomial((2, 3)) == 10
        assert ss.multinomial((1, 1, 1)) == 6
        assert ss.multinomial((4, 3, 3)) == math.factorial(10) // (24 * 6 * 6)

    def test_inverse(self):
        S = ss.enumerate_shuffles(2, 2)
        inv = S.inverse()
        rows = np.arange(len(S))[:, None]
        np.testing.assert_array_equal(S.perms[rows, inv], np.tile(np.arange(4), (len(S), 1)))

    @pytest.mark.parametrize("sizes", [(0, 2), ()])
    def test_invalid_sizes(self, sizes):
        with pytest.raises(DomainError):
            ss.enumerate_shuffles(*sizes)

    def test_budget(self):
        with pytest.raises(BudgetExceededError):
            ss.enumerate_shuffles(7, 6)
        with pytest.raises(BudgetExceededError):
            ss.brute_force_shuffles(5, 4)

    def test_validation_catches_bad_rows(self):
        S = ss.enumerate_shuffles(2, 1)
        bad = ss.ShuffleSet(S.sizes, S.perms.copy())
        bad.perms[0] = bad.perms[0][::-1]
        v = ss.validate_shuffles(bad)
        assert not v.ok and not v.block_increasing

    @pytest.mark.parametrize("sizes,js", [((2, 2), (1,)), ((2, 2), (2,)), ((1, 2, 2), (2, 1)), ((2, 1, 3), (1, 2))])
    def test_restricted_against_filter(self, sizes, js):
        R = ss.restricted_shuffles(sizes, js)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        full = ss.brute_force_shuffles(*sizes)
        keep = np.ones(len(full), dtype=bool)
        for i, j in enumerate(js, start=1):
            for l in range(offsets[i] + j, offsets[i + 1] + 1):
                keep &= full[:, l - 1] == l - 1
        assert {tuple(r) for r in R.perms.tolist()} == {tuple(r) for r in full[keep].tolist()}

    def test_restricted_index_range(self):
        with pytest.raises(DomainError):
            ss.restricted_shuffles((2, 2), (3,))
        with pytest.raises(DomainError):
            ss.restricted_shuffles((2, 2), ())


class TestSimplexQuad:
    @pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
    def test_volume(self, m):
        val = ss.simplex_quad(SimplexIntegrand(m, 0.2, 0.9))
        assert val == pytest.approx(0.7**m / math.factorial(m), rel=1e-12)

    @pytest.mark.parametrize("w1,w2", [(0.0, 0.0), (-0.4, 0.3), (0.5, -0.7)])
    def test_two_gaps_beta(self, w1, w2):
        # int (s1-th)^w1 (s2-s1)^w2 = (t-th)^(2+w1+w2) B(w1+1, w2+1) / (w1+w2+2)
        exact = 0.8 ** (2 + w1 + w2) * special.beta(w1 + 1, w2 + 1) / (w1 + w2 + 2)
        assert ss.dirichlet_integral([w1, w2], [0, 0], 0.1, 0.9) == pytest.approx(exact, rel=1e-12)
        assert ss.simplex_quad(SimplexIntegrand(2, 0.1, 0.9, [w1, w2])) == pytest.approx(exact, rel=1e-10)

    def test_anchored_exponent_single(self):
        v = -0.35
        assert ss.dirichlet_integral([0.2], [v], 0.0, 2.0) == pytest.approx(2.0 ** (1.2 + v) / (1.2 + v))

    @given(st.lists(st.lists(st.integers(-3, 3), min_size=1, max_size=3), min_size=1, max_size=4))
    @settings(max_examples=30, deadline=None)
    def test_polynomials_exact(self, coefs):
        polys = [P(np.asarray(c, dtype=float)) for c in coefs]
        m = len(polys)
        w = np.linspace(-0.3, 0.4, m)
        exact = ss.polynomial_simplex_integral(polys, w, 0.25, 1.0)
        quad = ss.simplex_quad(SimplexIntegrand(m, 0.25, 1.0, w, polys))
        assert quad == pytest.approx(exact, rel=1e-9, abs=1e-12)

    def test_failure_reports_level(self):
        kink = lambda s: np.abs(s - 0.517) ** 0.5
        with pytest.raises(QuadratureError) as info:
            ss.simplex_quad(SimplexIntegrand(2, 0.0, 1.0, factors=[None, kink]), tol=1e-14, max_order=24)
        assert info.value.level in (1, 2)

    def test_domain(self):
        with pytest.raises(DomainError):
            ss.simplex_quad(SimplexIntegrand(6, 0.0, 1.0))
        with pytest.raises(DomainError):
            SimplexIntegrand(2, 1.0, 0.5)
        with pytest.raises(DomainError):
            SimplexIntegrand(2, 0.0, 1.0, w=[-1.0, 0.0])
        with pytest.raises(DomainError):
            SimplexIntegrand(1, 0.0, 1.0, v=[-1.2])

    def test_full_output(self):
        res = ss.simplex_quad(SimplexIntegrand(2, 0.0, 1.0, factors=[np.cos, np.exp]), full_output=True)
        assert res.error <= 1e-9 and len(res.orders) == 2


class TestShuffleIdentity:
    @pytest.mark.parametrize("m1,m2", [(1, 1), (1, 2), (2, 2), (1, 3)])
    def test_smooth_factors(self, m1, m2):
        fs = [np.cos, np.exp, lambda s: 1 / (1 + s**2), np.sin][: m1 + m2]
        r = ss.shuffle_identity_check(fs, m1, m2, 0.1, 1.2)
        assert r.abs_diff < 1e-10

    def test_polynomials_exact(self):
        polys = [P([1.0, -2.0]), P([0.0, 1.0, 3.0]), P([2.0])]
        lhs = ss.polynomial_simplex_integral(polys[:1], [0.0], 0.0, 1.0)
        lhs *= ss.polynomial_simplex_integral(polys[1:], [0.0, 0.0], 0.0, 1.0)
        rhs = sum(
            ss.polynomial_simplex_integral([polys[i] for i in row], np.zeros(3), 0.0, 1.0)
            for row in ss.enumerate_shuffles(1, 2).inverse()
        )
        assert lhs == pytest.approx(rhs, abs=1e-14)

    def test_factor_count(self):
        with pytest.raises(DomainError):
            ss.shuffle_identity_check([np.cos], 1, 1, 0.0, 1.0)


class TestBounds:
    @pytest.mark.parametrize("m", [1, 3, 5])
    def test_volume_factor(self, m):
        assert ss.gamma_product(BoundParams(0.3, 0.0, [0] * m, [0.0] * m)) == pytest.approx(1 / math.factorial(m))

    def test_classical_case_is_volume(self):
        p = BoundParams(0.3, 0.0, [0, 0, 0], [0.0, 0.0, 0.0])
        assert ss.dirichlet_gamma_bound(p, None, 0.2, 1.0) == pytest.approx(ss.simplex_volume(3, 0.2, 1.0), rel=1e-12)

    @pytest.mark.parametrize(
        "H,gamma,eps,w",
        [(0.0, 0.0, [0], [0.0]), (0.3, 0.3, [1], [0.0]), (0.3, 0.0, [1, 0], [0.0]), (0.3, 0.0, [2], [0.0]), (0.1, 0.0, [1], [-0.7])],
    )
    def test_invalid_params(self, H, gamma, eps, w):
        with pytest.raises(DomainError):
            BoundParams(H, gamma, eps, w)

    def test_ratio_constant(self):
        assert ss.kernel_ratio_constant(0.2) >= 1.1

    @pytest.mark.parametrize("seed", range(6))
    def test_single_kernel_bound_dominates(self, seed):
        from regfbm.runners import random_kernel_draw

        H, eps, w, theta, t = random_kernel_draw(np.random.default_rng(seed))
        num = ss.kernel_simplex_integral(H, eps, w, theta, t, tol=1e-7)
        bound = ss.dirichlet_gamma_bound(BoundParams(H, 0.0, eps, w), None, theta, t, ss.kernel_ratio_constant(H))
        assert 0 < num <= bound

    def test_kernel_difference_needs_order(self):
        p = BoundParams(0.2, 0.02, [1], [0.0])
        with pytest.raises(DomainError):
            ss.dirichlet_gamma_bound(p, 0.5, 0.3, 1.0)


class TestKernelDifference:
    @pytest.mark.parametrize("H,gamma", [(0.1, 0.02), (0.3, 0.05)])
    def test_fitted_constant_homogeneity(self, H, gamma):
        t0, t0p = ss.kernel_diff_sweep(H, gamma, 1.0, n=30)
        base = ss.kernel_diff_bound_check(H, gamma, 1.0, t0, t0p).fitted_C
        for lam in (0.5, 2.0):
            c = ss.kernel_diff_bound_check(H, gamma, lam, lam * t0, lam * t0p).fitted_C
            assert c == pytest.approx(lam ** (0.5 - H + 3 * gamma) * base, rel=1e-9)

    def test_bounded_on_random_pairs(self):
        rng = np.random.default_rng(3)
        t0, t0p = ss.kernel_diff_sweep(0.1, 0.02, 1.0, n=40, rng=rng)
        chk = ss.kernel_diff_bound_check(0.1, 0.02, 1.0, t0, t0p)
        assert np.isfinite(chk.fitted_C) and 0 < chk.fitted_C < 1.0

    def test_order_required(self):
        with pytest.raises(DomainError):
            ss.kernel_diff_bound_check(0.1, 0.02, 1.0, 0.2, 0.3)


class TestDoubleIntegral:
    def test_converges(self):
        res = ss.kernel_double_integral(0.3, 0.03, layers=(40, 80))
        assert res.converged and res.value > 0

    def test_grows_with_beta(self):
        a = ss.kernel_double_integral(0.3, 0.01, layers=(40, 80)).value
        b = ss.kernel_double_integral(0.3, 0.05, layers=(40, 80)).value
        assert b > a
