import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from regfbm import fraccalc
from regfbm.errors import DomainError, GridError
from regfbm.fbm_core import TimeGrid
from regfbm.fraccalc import FracOrder, GridFunction


def _power_integral(p, a, x):
    return special.gamma(p + 1) / special.gamma(p + 1 + a) * x ** (p + a)


@pytest.fixture(params=["uniform", "graded"])
def grid(request):
    if request.param == "uniform":
        return TimeGrid.uniform(1.0, 200)
    return TimeGrid.graded(1.0, 200, power=2.0)


class TestOrder:
    @pytest.mark.parametrize("a", [0.0, 1.0, -0.2, 1.5])
    def test_range(self, a):
        with pytest.raises(DomainError):
            FracOrder(a)

    def test_grid_function_shape(self):
        with pytest.raises(GridError):
            GridFunction(TimeGrid.uniform(1.0, 4), np.zeros(4))

    def test_grid_function_algebra(self):
        g = TimeGrid.uniform(1.0, 4)
        f = GridFunction.from_callable(g, np.sin)
        np.testing.assert_allclose((2 * f + f).values, 3 * np.sin(g.points))


class TestIntegral:
    @pytest.mark.parametrize("a", [0.1, 0.5, 0.9])
    @pytest.mark.parametrize("p", [0, 1])
    def test_exact_on_linear(self, grid, a, p):
        f = GridFunction(grid, grid.points**p)
        out = fraccalc.rl_integral(a, f).values
        np.testing.assert_allclose(out, _power_integral(p, a, grid.points), atol=1e-13)

    @pytest.mark.parametrize("a", [0.3, 0.7])
    def test_quadratic_converges(self, a):
        errs = []
        for n in (64, 128, 256):
            g = TimeGrid.uniform(1.0, n)
            out = fraccalc.rl_integral(a, GridFunction(g, g.points**2)).values
            errs.append(np.abs(out - _power_integral(2, a, g.points)).max())
        assert np.all(fraccalc.observed_order(errs) > 1.9)

    def test_right_side(self, grid):
        f = GridFunction(grid, np.ones(len(grid)))
        out = fraccalc.rl_integral(0.4, f, side="right").values
        np.testing.assert_allclose(out, (1 - grid.points) ** 0.4 / special.gamma(1.4), atol=1e-13)

    def test_semigroup(self):
        errs = []
        for n in (100, 400):
            g = TimeGrid.uniform(1.0, n)
            f = GridFunction(g, np.cos(3 * g.points))
            two = fraccalc.rl_integral(0.3, fraccalc.rl_integral(0.4, f))
            errs.append(fraccalc.relative_l2_error(two, fraccalc.rl_integral(0.7, f)))
        assert errs[1] < 1e-3 and errs[1] < errs[0] / 2

    def test_shifted_interval(self):
        x = np.linspace(0.0, 1.0, 101)
        g0, g1 = TimeGrid(x, 1.0), TimeGrid(x + 0.0, 1.0)
        a = fraccalc.rl_integral(0.5, GridFunction(g0, x)).values
        b = fraccalc.rl_integral(0.5, GridFunction(g1, x)).values
        np.testing.assert_array_equal(a, b)

    @given(c=st.floats(-5, 5), d=st.floats(-5, 5))
    def test_linear_in_f(self, c, d):
        g = TimeGrid.uniform(1.0, 32)
        f, h = GridFunction(g, np.sin(g.points)), GridFunction(g, g.points**2)
        lhs = fraccalc.rl_integral(0.35, c * f + d * h).values
        rhs = c * fraccalc.rl_integral(0.35, f).values + d * fraccalc.rl_integral(0.35, h).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestWeighted:
    @pytest.mark.parametrize("a", [0.2, 0.6])
    def test_constant_g_exact_without_weight(self, a):
        g = TimeGrid.uniform(1.0, 100)
        out = fraccalc.weighted_rl_integral(a, 0.0, GridFunction(g, np.ones(len(g)))).values
        np.testing.assert_allclose(out, _power_integral(0.0, a, g.points), atol=1e-13)

    @pytest.mark.parametrize("power", [-0.4, 0.3])
    @pytest.mark.parametrize("a", [0.2, 0.6])
    def test_constant_g_converges(self, power, a):
        # pointwise errors next to a singular weight do not shrink; the L2 error does
        errs = []
        for n in (100, 400):
            g = TimeGrid.uniform(1.0, n)
            out = fraccalc.weighted_rl_integral(a, power, GridFunction(g, np.ones(len(g))))
            exact = np.r_[0.0, _power_integral(power, a, g.points[1:])]
            errs.append(fraccalc.relative_l2_error(out, GridFunction(g, exact)))
        assert errs[1] < 2e-3 and errs[1] < errs[0]

    def test_origin_limit(self):
        g = TimeGrid.uniform(1.0, 16)
        one = GridFunction(g, np.ones(len(g)))
        assert fraccalc.weighted_rl_integral(0.3, 0.2, one).values[0] == 0.0
        assert fraccalc.weighted_rl_integral(0.3, -0.3, one).values[0] == pytest.approx(special.gamma(0.7))
        assert np.isinf(fraccalc.weighted_rl_integral(0.3, -0.5, one).values[0])

    def test_needs_left_side(self):
        g = TimeGrid.uniform(1.0, 8)
        with pytest.raises(DomainError):
            fraccalc.weighted_rl_integral(0.3, 0.0, GridFunction(g, np.ones(9)), side="right")


class TestDerivative:
    @pytest.mark.parametrize("a", [0.2, 0.5, 0.8])
    def test_exact_on_identity(self, grid, a):
        out = fraccalc.rl_derivative(a, GridFunction(grid, grid.points)).values
        assert np.isnan(out[0])
        np.testing.assert_allclose(out[1:], grid.points[1:] ** (1 - a) / special.gamma(2 - a), rtol=1e-10)

    def test_warns_when_base_value_nonzero(self):
        g = TimeGrid.uniform(1.0, 16)
        with pytest.warns(RuntimeWarning):
            fraccalc.rl_derivative(0.5, GridFunction(g, np.cos(g.points)))

    @pytest.mark.parametrize("a", [0.2, 0.5, 0.8])
    def test_inverts_integral(self, a):
        g = TimeGrid.uniform(1.0, 512)
        f = GridFunction(g, np.sin(g.points))
        back = fraccalc.rl_derivative(a, fraccalc.rl_integral(a, f)).values
        assert np.nanmax(np.abs(back - f.values)) < 2e-2

    def test_right_side_mirrors_left(self):
        g = TimeGrid.uniform(1.0, 64)
        f = GridFunction(g, (1 - g.points) ** 2)
        right = fraccalc.rl_derivative(0.4, f, side="right").values
        left = fraccalc.rl_derivative(0.4, GridFunction(g, g.points**2)).values
        np.testing.assert_allclose(right[:-1], left[::-1][:-1], rtol=1e-12)


class TestKH:
    @pytest.mark.parametrize("H", [0.1, 0.3])
    def test_inverse_of_identity_function(self, H):
        errs = []
        for n in (64, 256, 1024):
            g = TimeGrid.uniform(1.0, n)
            out = fraccalc.kh_inverse_ac(H, GridFunction(g, g.points), GridFunction(g, np.ones(len(g))))
            exact = np.r_[0.0, fraccalc.kh_inverse_linear(H, g.points[1:])]
            errs.append(fraccalc.relative_l2_error(out, GridFunction(g, exact)))
        assert errs[-1] < 1e-4
        assert np.all(np.diff(errs) < 0)

    @pytest.mark.parametrize("H", [0.1, 0.3])
    def test_round_trip(self, H):
        g = TimeGrid.uniform(1.0, 512)
        psi = GridFunction(g, np.cos(g.points))
        back = fraccalc.kh_inverse_ac(H, fraccalc.kh_apply(H, psi))
        assert fraccalc.relative_l2_error(back, psi) < 2e-2

    @pytest.mark.parametrize("H", [0.0, 0.5])
    def test_hurst_range(self, H):
        g = TimeGrid.uniform(1.0, 8)
        with pytest.raises(DomainError):
            fraccalc.kh_apply(H, GridFunction(g, np.ones(9)))

    def test_central_difference_exact_on_quadratic(self):
        g = TimeGrid.graded(1.0, 20)
        d = fraccalc.central_difference(GridFunction(g, g.points**2)).values
        np.testing.assert_allclose(d, 2 * g.points, atol=1e-12)


def test_observed_order():
    np.testing.assert_allclose(fraccalc.observed_order([1.0, 0.5, 0.25]), [1.0, 1.0])
    np.testing.assert_allclose(fraccalc.observed_order([1.0, 0.25], ratio=2.0), [2.0])


def test_relative_l2_skips_base_node():
    g = TimeGrid.uniform(1.0, 10)
    exact = GridFunction(g, np.ones(11))
    approx = GridFunction(g, np.r_[np.nan, np.ones(10)])
    assert fraccalc.relative_l2_error(approx, exact) == 0.0
