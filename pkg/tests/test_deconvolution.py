import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from addinv.backfitting import BackfitConfig, backfit
from addinv.deconvolution import (
    ComponentEstimate,
    DeconvConfig,
    assemble_additive,
    confidence_band,
    deconvolution_kernel,
    density_weights,
    empirical_fourier_g,
    invert_component,
    invert_synthetic,
    linear_weights,
    residuals,
    truncated_density_weight,
    variance_cross,
    variance_Vnj,
)
from addinv.empirical import Dataset, TransformedDataset, ecdf_transform
from addinv.kernels import ConvolutionFamily
from addinv.simulation import ConvolvedComponent, DesignDensity

LAPLACE1 = ConvolutionFamily.laplace(1.0)
LAPLACE3 = ConvolutionFamily.laplace(3.0)
UNIFORM2 = DesignDensity("uniform", 0.5)


def _cos_quarter(y):
    return 0.25 * np.cos(np.asarray(y, dtype=float))


class TestResiduals:
    def test_one_dimension(self):
        rng = np.random.default_rng(0)
        data = Dataset(rng.normal(size=(50, 1)), rng.normal(size=50))
        fit = backfit(ecdf_transform(data), data.Y, BackfitConfig(h_B=0.3))
        np.testing.assert_allclose(residuals(data, fit, 0), data.Y - data.Y.mean(), atol=1e-14)

    def test_zero_response(self):
        rng = np.random.default_rng(1)
        data = Dataset(rng.normal(size=(80, 2)), np.zeros(80))
        fit = backfit(ecdf_transform(data), data.Y, BackfitConfig(h_B=0.3))
        assert np.all(residuals(data, fit, 1) == 0.0)

    def test_noiseless_additive(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(size=(2000, 2))
        g = [X[:, 0] - 0.5, np.sin(2 * np.pi * X[:, 1])]
        data = Dataset(X, g[0] + g[1])
        fit = backfit(TransformedDataset(X, data), data.Y, BackfitConfig(h_B=0.02))
        for j in range(2):
            assert np.max(np.abs(residuals(data, fit, j) - g[j])) < 0.15


class TestTruncatedWeight:
    def test_examples(self):
        assert truncated_density_weight(0.5, 0.1) == 2.0
        assert truncated_density_weight(0.01, 0.1) == 10.0
        assert truncated_density_weight(0.1, 0.1) == 10.0

    def test_both_non_positive(self):
        with pytest.raises(ValueError):
            truncated_density_weight(0.0, 0.0)

    def test_exact_density_weights(self):
        X = np.array([-3.0, -1.0, 0.0, 2.0])
        w = density_weights(X, UNIFORM2, DeconvConfig(h=0.5, a_N=0.5))
        np.testing.assert_array_equal(w, [4.0, 4.0, 4.0, 4.0])


class TestEmpiricalFourier:
    def test_zero_residuals(self):
        X = np.linspace(-1, 1, 9)
        np.testing.assert_array_equal(empirical_fourier_g(X, np.zeros(9), np.ones(9), np.linspace(-5, 5, 7)), 0)

    def test_zero_frequency(self):
        rng = np.random.default_rng(3)
        X, U, w = rng.normal(size=30), rng.normal(size=30), rng.uniform(1, 2, size=30)
        val = empirical_fourier_g(X, U, w, 0.0)
        assert val.imag == 0.0
        assert val.real == pytest.approx(np.mean(U * w))

    def test_single_term(self):
        w = np.array([-7.0, 0.3, 11.0])
        np.testing.assert_allclose(empirical_fourier_g([0.0], [2.0], [1.0], w), 2.0)

    def test_matches_direct_sum_across_chunks(self):
        rng = np.random.default_rng(4)
        X, U = rng.normal(size=2500), rng.normal(size=2500)
        direct = np.mean(np.exp(1j * 1.7 * X) * U)
        assert empirical_fourier_g(X, U, np.ones(2500), 1.7) == pytest.approx(direct, rel=1e-12)


class TestInversion:
    @pytest.mark.parametrize("h", [0.2, 0.5, 1.0])
    def test_synthetic_injection(self, h):
        cfg = DeconvConfig(h=h)
        x = np.array([-1.3, -0.2, 0.7, 2.9])
        got = invert_synthetic(lambda w: LAPLACE3.fourier(0, w), LAPLACE3, 0, cfg, x)
        np.testing.assert_allclose(got.real, np.sin(x / h) / (np.pi * x), rtol=0, atol=1e-9)
        np.testing.assert_allclose(got.imag, 0.0, atol=1e-12)
        at0 = invert_synthetic(lambda w: LAPLACE3.fourier(0, w), LAPLACE3, 0, cfg, 0.0)
        assert at0.real == pytest.approx(1 / (np.pi * h), rel=1e-10)

    def test_zero_residuals(self):
        X = np.linspace(-2, 2, 40)
        out = invert_component(X, np.zeros(40), np.ones(40), LAPLACE3, 0, DeconvConfig(h=0.4), np.linspace(-2, 2, 5))
        assert np.all(out == 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_linear_representation(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 120))
        lam = float(rng.uniform(0.5, 5.0))
        fam = ConvolutionFamily.laplace(lam)
        cfg = DeconvConfig(h=float(rng.uniform(0.1, 1.5)), n_panels=256)
        X = rng.normal(scale=1.5, size=n)
        U = rng.normal(size=n)
        rho = rng.uniform(0.5, 5.0, size=n)
        x = rng.uniform(-3, 3, size=4)
        direct = invert_component(X, U, rho, fam, 0, cfg, x)
        W = linear_weights(X, rho, fam, 0, cfg, x)
        scale = max(1.0, np.max(np.abs(direct)))
        np.testing.assert_allclose(W @ U, direct, rtol=0, atol=1e-10 * scale)

    def test_unit_vector_picks_weight(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=20)
        rho = rng.uniform(1, 2, size=20)
        cfg = DeconvConfig(h=0.3)
        e = np.zeros(20)
        e[7] = 1.0
        assert invert_component(X, e, rho, LAPLACE3, 0, cfg, 0.4) == pytest.approx(
            linear_weights(X, rho, LAPLACE3, 0, cfg, 0.4)[7], abs=1e-13)

    def test_equal_positions_equal_weights(self):
        W = linear_weights(np.full(6, 0.8), np.ones(6), LAPLACE3, 0, DeconvConfig(h=0.3), 0.1)
        np.testing.assert_allclose(W, W[0], rtol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_realness_residue(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-2, 2, size=200)
        U = rng.normal(size=200)
        cfg = DeconvConfig(h=float(rng.uniform(0.15, 1.0)))
        real, imag = invert_component(X, U, np.full(200, 4.0), LAPLACE3, 0, cfg, np.linspace(-2, 2, 41),
                                      return_imag=True)
        assert np.max(np.abs(imag)) < 1e-8 * max(1.0, np.max(np.abs(real)))

    @pytest.mark.parametrize("c", [-3.0, 0.75, 10.0])
    def test_shift_equivariance(self, c):
        rng = np.random.default_rng(6)
        X = rng.uniform(-2, 2, size=300)
        U = np.cos(X) + 0.1 * rng.normal(size=300)
        cfg = DeconvConfig(h=0.35)
        x = np.linspace(-1.5, 1.5, 13)
        rho = density_weights(X, UNIFORM2, cfg)
        shifted = lambda t: UNIFORM2(np.asarray(t) - c)  # noqa: E731
        shifted_rho = truncated_density_weight(shifted(X + c), float(shifted(cfg.edge + c)))
        np.testing.assert_array_equal(rho, shifted_rho)
        a = invert_component(X, U, rho, LAPLACE3, 0, cfg, x)
        b = invert_component(X + c, U, shifted_rho, LAPLACE3, 0, cfg, x + c)
        np.testing.assert_allclose(b, a, rtol=0, atol=1e-10)

    def test_sup_error_decreases_with_bandwidth(self):
        # noiseless one-dimensional pipeline; the design covers the support of g
        theta = lambda t: np.exp(-(np.asarray(t) - 0.4) ** 2)  # noqa: E731
        g = ConvolvedComponent(theta, 3.0)
        density = DesignDensity("uniform", 0.25)
        X = np.random.default_rng(0).uniform(-4, 4, size=4000)
        U = g(X) - g(X).mean()
        x = np.linspace(-2, 2, 201)
        errs = []
        for h in (0.6, 0.4, 0.25):
            cfg = DeconvConfig(h=h, a_N=0.25)
            est = invert_component(X, U, density_weights(X, density, cfg), LAPLACE3, 0, cfg, x)
            errs.append(np.max(np.abs(est - (theta(x) - g(X).mean()))))
        assert errs[0] > errs[1] > errs[2]


class TestVariance:
    cfg = DeconvConfig(h=0.5, a_N=0.5, n_panels=256)
    x = np.array([-0.5, 0.0, 0.5])

    def test_zero_integrand(self):
        v = variance_Vnj(self.x, LAPLACE1, 0, self.cfg, UNIFORM2, lambda y: 0 * y, 0.0, 701, (-2, 2))
        assert np.all(v == 0.0)

    def test_halves_with_double_n(self):
        a = variance_Vnj(self.x, LAPLACE1, 0, self.cfg, UNIFORM2, _cos_quarter, 0.25, 701, (-2, 2))
        b = variance_Vnj(self.x, LAPLACE1, 0, self.cfg, UNIFORM2, _cos_quarter, 0.25, 1402, (-2, 2))
        np.testing.assert_allclose(b, a / 2, rtol=1e-15)

    def test_negative_noise(self):
        with pytest.raises(ValueError):
            variance_Vnj(0.0, LAPLACE1, 0, self.cfg, UNIFORM2, _cos_quarter, -1.0, 10, (-2, 2))

    def test_matches_direct_quadrature(self):
        x, h = 0.3, self.cfg.h

        def kernel_sq(y):
            re = integrate.quad(lambda v: np.cos(v * (x - y) / h) * (1 + v ** 2 / h ** 2), -1, 1)[0]
            return re ** 2

        integrand = lambda y: kernel_sq(y) * (_cos_quarter(y) ** 2 + 0.25) * 0.25 / 0.25 ** 2  # noqa: E731
        expected = integrate.quad(integrand, -2, 2, limit=200)[0] / (701 * h ** 2 * (2 * np.pi) ** 2)
        got = variance_Vnj(x, LAPLACE1, 0, self.cfg, UNIFORM2, _cos_quarter, 0.25, 701, (-2, 2))
        assert got == pytest.approx(expected, rel=1e-6)

    @pytest.mark.parametrize("h", [0.1, 0.2, 0.3, 0.5])
    def test_sandwich_scaling(self, h):
        # constants calibrated once on this uniform, rate-one case and frozen
        c_lo, c_hi = 0.04, 0.1
        cfg = DeconvConfig(h=h, a_N=0.5, n_panels=512)
        v = variance_Vnj(np.array([-1.0, 0.0, 1.0]), LAPLACE1, 0, cfg, UNIFORM2, _cos_quarter, 0.25, 701, (-2, 2))
        scaled = v * 701 * h ** (2 * LAPLACE1.betas[0] + 1)
        f_edge = float(UNIFORM2(cfg.edge))
        assert np.all(scaled >= c_lo) and np.all(scaled <= c_hi / f_edge)

    def test_monte_carlo_agreement(self):
        V = variance_Vnj(self.x, LAPLACE1, 0, self.cfg, UNIFORM2, _cos_quarter, 0.25, 701, (-2, 2))
        rng = np.random.default_rng(2024)
        draws = np.empty((2000, self.x.size))
        for r in range(2000):
            X = rng.uniform(-2, 2, size=701)
            U = _cos_quarter(X) + 0.5 * rng.normal(size=701)
            draws[r] = linear_weights(X, density_weights(X, UNIFORM2, self.cfg), LAPLACE1, 0, self.cfg, self.x) @ U
        np.testing.assert_allclose(draws.var(axis=0, ddof=1), V, rtol=0.25)


class TestVarianceCross:
    cfg = DeconvConfig(h=0.5, a_N=0.5, n_panels=256)
    fam = ConvolutionFamily.laplace(1.0, 2.0)

    def _cross(self, g_k, g_l, sigma2, joint=None, xk=0.2, xl=-0.4, k=0, l=1):
        joint = joint or (lambda y, z: UNIFORM2(y) * UNIFORM2(z))
        return variance_cross(xk, xl, self.fam, k, l, self.cfg, joint, UNIFORM2, UNIFORM2, g_k, g_l, sigma2,
                              500, (-2, 2), (-2, 2), n_nodes=400)

    def test_zero(self):
        zero = lambda y: 0 * np.asarray(y)  # noqa: E731
        assert self._cross(zero, zero, 0.0) == 0

    def test_factorises(self):
        zero = lambda y: 0 * np.asarray(y)  # noqa: E731
        got = self._cross(zero, zero, 0.3)
        h = self.cfg.h
        y = np.linspace(-2, 2, 4001)

        def single(j, x):
            k = deconvolution_kernel(self.fam, j, self.cfg, (x - y) / h)
            return np.trapezoid(k * UNIFORM2(y) / 0.25, y)

        expected = 0.3 * single(0, 0.2) * np.conj(single(1, -0.4)) / (500 * h ** 2 * (2 * np.pi) ** 2)
        assert got == pytest.approx(expected, rel=1e-5)

    def test_conjugate_symmetry(self):
        joint = lambda y, z: UNIFORM2(y) * UNIFORM2(z) * (1 + 0.5 * np.sin(y) * np.sin(z))  # noqa: E731
        g_k, g_l = np.cos, lambda t: np.exp(-np.asarray(t) ** 2)
        a = variance_cross(0.2, -0.4, self.fam, 0, 1, self.cfg, joint, UNIFORM2, UNIFORM2, g_k, g_l, 0.25,
                           500, (-2, 2), (-2, 2), n_nodes=400)
        b = variance_cross(-0.4, 0.2, self.fam, 1, 0, self.cfg, lambda z, y: joint(y, z), UNIFORM2, UNIFORM2,
                           g_l, g_k, 0.25, 500, (-2, 2), (-2, 2), n_nodes=400)
        assert a == pytest.approx(np.conj(b), rel=1e-12)
        assert a.real == pytest.approx(b.real, rel=1e-12)

    def test_same_axis(self):
        with pytest.raises(ValueError):
            self._cross(np.cos, np.cos, 0.1, k=0, l=0)


class TestConfidenceBand:
    def test_one_sigma(self):
        # alpha = 0.3174 is the two-sided level of z = 1 to four digits
        lo, hi = confidence_band(np.array([1.0, 2.0]), np.array([4.0, 0.25]), 0.3174)
        np.testing.assert_allclose(hi - np.array([1.0, 2.0]), [2.0, 0.5], rtol=5e-4)
        np.testing.assert_allclose(np.array([1.0, 2.0]) - lo, [2.0, 0.5], rtol=5e-4)

    def test_zero_variance(self):
        lo, hi = confidence_band(np.array([0.3, -1.0]), np.zeros(2), 0.1)
        np.testing.assert_array_equal(lo, [0.3, -1.0])
        np.testing.assert_array_equal(hi, [0.3, -1.0])

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
    def test_bad_level(self, alpha):
        with pytest.raises(ValueError):
            confidence_band(np.zeros(1), np.ones(1), alpha)

    def test_coverage(self):
        # oracle residuals for the first uniform-design component, centred on the estimator's mean
        h, x0, n = 0.4, 0.3, 301
        cfg = DeconvConfig(h=h, a_N=0.5, n_panels=256)
        g_raw = ConvolvedComponent(lambda t: np.exp(-(np.asarray(t) - 0.4) ** 2), 3.0)
        gx, gw = np.polynomial.legendre.leggauss(200)
        nodes, weights = 2 * gx, 2 * gw
        c = float(weights @ g_raw(nodes)) / 4
        g = lambda t: g_raw(t) - c  # noqa: E731

        def phi_mean(w):
            # E[rho(X) g(X) exp(iwX)] for the uniform design
            return np.exp(1j * np.multiply.outer(w, nodes)) @ (weights * g(nodes))

        centre = invert_synthetic(phi_mean, LAPLACE3, 0, cfg, x0).real
        var = variance_Vnj(x0, LAPLACE3, 0, cfg, UNIFORM2, g, 0.25, n, (-2, 2))
        lo, hi = confidence_band(0.0, var, 0.1)
        rng = np.random.default_rng(77)
        hits = 0
        for _ in range(500):
            X = rng.uniform(-2, 2, size=n)
            U = g(X) + 0.5 * rng.normal(size=n)
            est = invert_component(X, U, density_weights(X, UNIFORM2, cfg), LAPLACE3, 0, cfg, x0)
            hits += lo <= est - centre <= hi
        assert 0.85 <= hits / 500 <= 0.95


class TestAssemble:
    grid = np.linspace(-2, 2, 5)

    def _comp(self, j, value):
        return ComponentEstimate(axis=j, grid=self.grid, values=np.full(5, value), imag=np.zeros(5))

    def test_zero_components(self):
        comps = [self._comp(0, 0.0), self._comp(1, 0.0)]
        assert assemble_additive(comps, 1.5, [0.3, -0.2]) == 1.5

    def test_constants_add(self):
        comps = [self._comp(0, 0.4), self._comp(1, -1.1)]
        assert assemble_additive(comps, 2.0, [0.3, -0.2]) == pytest.approx(1.3)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            assemble_additive([self._comp(0, 0.0)], 0.0, [0.1, 0.2])
