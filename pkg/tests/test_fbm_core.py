import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from regfbm import _rng, fbm_core
from regfbm.errors import DomainError, GridError, SingularCovarianceError
from regfbm.fbm_core import TimeGrid


class TestTimeGrid:
    def test_uniform(self):
        g = TimeGrid.uniform(2.0, 8)
        assert len(g) == 9
        np.testing.assert_allclose(g.steps, 0.25)
        assert g.index_of(1.5) == 6

    def test_graded_refines_near_zero(self):
        g = TimeGrid.graded(1.0, 16, power=2.0)
        assert np.all(np.diff(g.steps) > 0)

    @pytest.mark.parametrize(
        "points,horizon",
        [([0.0], 1.0), ([0.1, 0.5, 1.0], 1.0), ([0.0, 0.5, 0.5, 1.0], 1.0), ([0.0, 0.5, 2.0], 1.0)],
    )
    def test_rejects_bad_points(self, points, horizon):
        with pytest.raises(GridError):
            TimeGrid(np.array(points), horizon)

    def test_index_of_off_grid(self):
        with pytest.raises(GridError):
            TimeGrid.uniform(1.0, 4).index_of(0.3)

    def test_equality_is_by_value(self):
        assert TimeGrid.uniform(1.0, 4) == TimeGrid.uniform(1.0, 4)
        assert hash(TimeGrid.uniform(1.0, 4)) == hash(TimeGrid.uniform(1.0, 4))
        assert TimeGrid.uniform(1.0, 4) != TimeGrid.uniform(1.0, 8)

    def test_points_are_read_only(self):
        g = TimeGrid.uniform(1.0, 4)
        with pytest.raises(ValueError):
            g.points[1] = 0.3

    def test_dense_budget(self):
        with pytest.raises(GridError):
            fbm_core.covariance_matrix(0.3, TimeGrid.uniform(1.0, fbm_core.MAX_DENSE_POINTS))


class TestCovariance:
    def test_brownian_case(self):
        t = np.array([0.2, 0.7, 1.0])
        np.testing.assert_allclose(fbm_core.rh_cov(0.5, t[:, None], t[None, :]), np.minimum.outer(t, t))

    @given(H=st.floats(0.02, 0.98), t=st.floats(0.0, 5.0), s=st.floats(0.0, 5.0))
    def test_symmetric_and_diagonal(self, H, t, s):
        assert fbm_core.rh_cov(H, t, s) == fbm_core.rh_cov(H, s, t)
        assert fbm_core.rh_cov(H, t, t) == pytest.approx(t ** (2 * H))

    @pytest.mark.parametrize("H", [0.0, 1.0, -0.1])
    def test_hurst_range(self, H):
        with pytest.raises(DomainError):
            fbm_core.rh_cov(H, 1.0, 0.5)

    def test_negative_time(self):
        with pytest.raises(DomainError):
            fbm_core.rh_cov(0.3, -1.0, 0.5)

    @pytest.mark.parametrize("H", [0.1, 0.3, 0.45])
    def test_matrix_is_positive_definite(self, H):
        C = fbm_core.covariance_matrix(H, TimeGrid.uniform(1.0, 64))[1:, 1:]
        assert np.linalg.eigvalsh(C).min() > 0


class TestKernel:
    @pytest.mark.parametrize("H", [0.05, 0.2, 0.4])
    @pytest.mark.parametrize("t,s", [(1.0, 0.3), (0.5, 0.49), (2.0, 1e-3)])
    def test_vectorized_matches_quadrature(self, H, t, s):
        assert fbm_core.kernel_kh_array(H, t, s) == pytest.approx(fbm_core.kernel_kh(H, t, s), rel=1e-10)

    def test_zero_outside_triangle(self):
        assert np.all(fbm_core.kernel_kh_array(0.3, 1.0, np.array([-0.1, 0.0, 1.0, 1.5])) == 0.0)

    def test_scalar_kernel_domain(self):
        with pytest.raises(DomainError):
            fbm_core.kernel_kh(0.3, 0.5, 0.7)
        with pytest.raises(DomainError):
            fbm_core.kernel_kh(0.6, 1.0, 0.5)

    @pytest.mark.parametrize("H", [0.15, 0.35])
    def test_variance_by_generic_quadrature(self, H):
        # independent oracle: scipy's adaptive rule with the algebraic end weights
        t = 0.8
        val, _ = integrate.quad(lambda u: fbm_core.kernel_kh_array(H, t, u) ** 2, 0.0, t, limit=400)
        assert val == pytest.approx(t ** (2 * H), rel=1e-5)

    @pytest.mark.parametrize("H", [0.05, 0.1, 0.2, 0.3, 0.45])
    @pytest.mark.parametrize("t,s", [(1.0, 1.0), (0.9, 0.2), (0.013, 0.6), (0.5, 0.51)])
    def test_covariance_identity(self, H, t, s):
        assert fbm_core.kernel_covariance_quad(H, t, s) == pytest.approx(fbm_core.rh_cov(H, t, s), rel=1e-8)

    @pytest.mark.parametrize("layers", [0, 41])
    def test_layer_range(self, layers):
        with pytest.raises(DomainError):
            fbm_core.kernel_covariance_quad(0.3, 1.0, 0.5, layers=layers)

    def test_graded_panels_cover_interval(self):
        e = fbm_core.graded_panels(0.2, 1.0, layers=10)
        assert e[0] == 0.2 and e[-1] == 1.0
        assert np.all(np.diff(e) > 0)
        assert np.diff(e)[0] == pytest.approx(0.8 * 0.5**10)


class TestCholesky:
    def test_factor_reproduces_covariance(self):
        g = TimeGrid.uniform(1.0, 32)
        L = fbm_core._cholesky_factor(0.2, g)
        np.testing.assert_allclose(L @ L.T, fbm_core.covariance_matrix(0.2, g)[1:, 1:], atol=1e-13)

    def test_singular_block_reports_indices(self):
        cov = np.ones((3, 3))
        cov[2, 2] = 0.0
        with pytest.raises(SingularCovarianceError) as info:
            fbm_core._cholesky_with_jitter(cov, labels=[4, 5, 6])
        assert info.value.indices == (4, 5, 6)

    def test_replicate_is_batch_row(self):
        g = TimeGrid.uniform(1.0, 16)
        batch = fbm_core.sample_fbm_cholesky_batch(0.3, g, 2, seed=5, n_paths=4)
        one = fbm_core.sample_fbm_cholesky(0.3, g, 2, seed=5, replicate=2)
        np.testing.assert_array_equal(one.values, batch[2])
        assert np.all(batch[..., 0] == 0.0)

    def test_sample_covariance(self):
        g = TimeGrid.uniform(1.0, 8)
        x = fbm_core.sample_fbm_cholesky_batch(0.25, g, 1, seed=3, n_paths=20000)[:, 0, 1:]
        exact = fbm_core.covariance_matrix(0.25, g)[1:, 1:]
        prods = x[:, :, None] * x[:, None, :]
        se = prods.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
        assert np.all(np.abs(prods.mean(axis=0) - exact) <= 5 * se)


class TestVolterra:
    @pytest.mark.parametrize("H", [0.1, 0.25, 0.4])
    def test_covariance_close_to_exact(self, H):
        g = TimeGrid.uniform(1.0, 128)
        err = np.abs(fbm_core.volterra_covariance(H, g) - fbm_core.covariance_matrix(H, g)).max()
        assert err < 1e-3

    def test_covariance_improves_with_refinement(self):
        errs = []
        for n in (32, 128):
            g = TimeGrid.uniform(1.0, n)
            errs.append(np.abs(fbm_core.volterra_covariance(0.2, g) - fbm_core.covariance_matrix(0.2, g)).max())
        assert errs[1] < errs[0]

    def test_path_matches_weights(self):
        g = TimeGrid.uniform(1.0, 16)
        drv = fbm_core.make_driver(g, 2, 1, seed=9)
        path = fbm_core.sample_fbm_volterra(0.3, drv, 1)
        A, C = fbm_core.volterra_weights(0.3, g)
        expect = A @ drv.increments[1, 0] + C.reshape(len(g), -1) @ drv.aux[1, 0].reshape(-1)
        np.testing.assert_allclose(path.values[0], expect, atol=1e-14)
        assert path.values[0, 0] == 0.0

    def test_zero_driver_gives_zero_path(self):
        g = TimeGrid.uniform(1.0, 8)
        assert np.all(fbm_core.sample_fbm_volterra(0.2, fbm_core.zero_driver(g), 0).values == 0.0)

    def test_level_out_of_range(self):
        g = TimeGrid.uniform(1.0, 8)
        with pytest.raises(GridError):
            fbm_core.sample_fbm_volterra(0.2, fbm_core.make_driver(g, 1, 1, 0), 1)

    def test_driver_increment_variance(self):
        z = fbm_core.driver_normals(1, np.arange(5000), 1, 1, 4)
        assert z.shape == (5000, 1, 1, 4, _rng.DRAWS_PER_STEP)
        assert abs(z.var() - 1.0) < 0.03


class TestLocalNondeterminism:
    def test_unconditioned_is_variance(self):
        g = TimeGrid.uniform(1.0, 16)
        assert fbm_core.conditional_variance(0.3, g, 8, []) == pytest.approx(0.5 ** 0.6)

    def test_more_conditioning_lowers_variance(self):
        g = TimeGrid.uniform(1.0, 32)
        v1 = fbm_core.conditional_variance(0.3, g, 16, [4, 28])
        v2 = fbm_core.conditional_variance(0.3, g, 16, [4, 12, 20, 28])
        assert 0 < v2 < v1

    def test_target_in_set(self):
        with pytest.raises(DomainError):
            fbm_core.conditional_variance(0.3, TimeGrid.uniform(1.0, 8), 3, [3])

    def test_brownian_two_sided(self):
        # Markov property: only the nearest points matter, and the bridge over [t-r, t+r] has variance r/2
        g = TimeGrid.uniform(1.0, 16)
        assert fbm_core.slnd_ratio(0.5, g, 8, 4 / 16) == pytest.approx(0.5, rel=1e-10)

    @pytest.mark.parametrize("H", [0.1, 0.3])
    def test_ratio_bounded_below(self, H):
        scan = fbm_core.slnd_scan(H, TimeGrid.uniform(1.0, 32))
        assert scan.fitted_constant > 0.05
        assert scan.ratios.shape == scan.radii.shape


class TestRng:
    def test_streams_are_reproducible(self):
        a = _rng.step_normals(42, [0, 3], 1, 0, 10)
        b = _rng.step_normals(42, [3], 1, 0, 10)
        np.testing.assert_array_equal(a[1], b[0])

    def test_streams_differ_by_key(self):
        a = _rng.step_normals(42, [0], 0, 0, 10)
        assert not np.array_equal(a, _rng.step_normals(42, [0], 1, 0, 10))
        assert not np.array_equal(a, _rng.step_normals(42, [0], 0, 1, 10))
        assert not np.array_equal(a, _rng.step_normals(43, [0], 0, 0, 10))

    def test_auxiliary_tags(self):
        x = _rng.auxiliary_generator(1, "product-moment").standard_normal(3)
        y = _rng.auxiliary_generator(1, "product-moment").standard_normal(3)
        z = _rng.auxiliary_generator(1, "shuffle").standard_normal(3)
        np.testing.assert_array_equal(x, y)
        assert not np.array_equal(x, z)
