"""
Static estimators: KRR, LMMSE, bandlimited, parametric and semi-parametric fits
"""
import numpy as np
import pytest
from scipy import optimize

from conftest import random_pd
from graphkernel.errors import (
    DimensionMismatch,
    RankDeficient,
    RankDeficientBasis,
    SolverDidNotConverge,
)
from graphkernel.kernels import KernelMatrix, laplacian_kernel
from graphkernel.models import EpsSolverConfig, SpectralMapSpec
from graphkernel.static_estimators import (
    Observation,
    ParametricBasis,
    SamplingMask,
    bl_estimate,
    eps_insensitive_objective,
    krr_fit,
    lmmse_estimate,
    parametric_fit,
    semiparametric_fit_eps,
    semiparametric_fit_square,
)


def observe(f, indices, noise=None):
    f = np.asarray(f, dtype=float)
    mask = SamplingMask(indices=np.asarray(indices), n=f.shape[0])
    y = mask.sample(f) if noise is None else mask.sample(f) + noise
    return Observation(mask=mask, y=y)


class TestSampling:

    def test_selection_matrix(self):
        mask = SamplingMask(indices=np.array([0, 2]), n=3)
        np.testing.assert_allclose(mask.matrix(), [[1, 0, 0], [0, 0, 1]])
        np.testing.assert_allclose(mask.sample([5.0, 6.0, 7.0]), [5.0, 7.0])

    def test_indices_must_increase(self):
        with pytest.raises(DimensionMismatch):
            SamplingMask(indices=np.array([2, 1]), n=3)
        with pytest.raises(DimensionMismatch):
            SamplingMask(indices=np.array([0, 3]), n=3)

    def test_value_count(self):
        with pytest.raises(DimensionMismatch):
            Observation(mask=SamplingMask.full(3), y=np.zeros(2))


class TestKrr:

    def test_identity_kernel_full_sampling(self):
        y = np.array([1.0, -2.0, 3.0, 0.5])
        mu = 0.1
        alpha, f_hat = krr_fit(KernelMatrix(np.eye(4)), observe(y, range(4)), mu)
        np.testing.assert_allclose(f_hat, y / (1.0 + mu * 4))
        np.testing.assert_allclose(alpha, f_hat)

    def test_matches_dense_variational_solution(self, rng):
        n, mu = 8, 0.05
        k = random_pd(rng, n)
        obs = observe(rng.standard_normal(n), [0, 2, 3, 6])
        s = obs.size
        phi = obs.mask.matrix()
        dense = np.linalg.solve(phi.T @ phi / s + mu * np.linalg.inv(k), phi.T @ obs.y / s)
        _, f_hat = krr_fit(KernelMatrix(k), obs, mu)
        np.testing.assert_allclose(f_hat, dense, atol=1e-9)

    def test_equals_lmmse_with_matched_weight(self, rng):
        n, sigma2 = 7, 0.3
        c = random_pd(rng, n)
        obs = observe(rng.standard_normal(n), [1, 2, 4, 5])
        _, f_krr = krr_fit(KernelMatrix(c), obs, sigma2 / obs.size)
        f_lmmse = lmmse_estimate(KernelMatrix(c), obs, sigma2)
        np.testing.assert_allclose(f_krr, f_lmmse, atol=1e-10)

    @pytest.mark.parametrize("instance", range(50))
    def test_representer_form_matches_variational_solution(self, instance):
        rng = np.random.default_rng(instance)
        n = int(rng.integers(2, 31))
        s = int(rng.integers(1, n + 1))
        mu = float(10.0 ** rng.uniform(-3, 0))
        k = random_pd(rng, n)
        obs = observe(rng.standard_normal(n), np.sort(rng.choice(n, size=s, replace=False)))
        phi = obs.mask.matrix()
        dense = np.linalg.solve(phi.T @ phi / s + mu * np.linalg.inv(k), phi.T @ obs.y / s)
        _, f_hat = krr_fit(KernelMatrix(k), obs, mu)
        np.testing.assert_allclose(f_hat, dense, atol=1e-8)

    @pytest.mark.parametrize("instance", range(50))
    def test_lmmse_identity_across_instances(self, instance):
        rng = np.random.default_rng(1000 + instance)
        n = int(rng.integers(2, 21))
        s = int(rng.integers(1, n + 1))
        sigma2 = float(rng.uniform(0.01, 1.0))
        c = random_pd(rng, n)
        obs = observe(rng.standard_normal(n), np.sort(rng.choice(n, size=s, replace=False)))
        _, f_krr = krr_fit(KernelMatrix(c), obs, sigma2 / s)
        f_lmmse = lmmse_estimate(KernelMatrix(c), obs, sigma2)
        np.testing.assert_allclose(f_krr, f_lmmse, rtol=1e-12, atol=1e-12)

    def test_rkhs_norm_shrinks_with_mu(self, rng):
        n = 10
        k = KernelMatrix(random_pd(rng, n))
        obs = observe(rng.standard_normal(n), [0, 1, 3, 4, 7, 9])
        k_bar = k.sampled(obs.mask.indices)
        norms = []
        for mu in np.logspace(-4, 1, 8):
            alpha, _ = krr_fit(k, obs, float(mu))
            norms.append(float(alpha @ k_bar @ alpha))
        assert np.all(np.diff(norms) < 0)

    def test_estimate_lies_in_kernel_span(self, small_decomp, rng):
        kernel = laplacian_kernel(small_decomp, SpectralMapSpec.diffusion(1.0))
        obs = observe(rng.standard_normal(small_decomp.n), [0, 3, 5, 9])
        alpha, f_hat = krr_fit(kernel, obs, 1e-3)
        np.testing.assert_allclose(f_hat, kernel.columns(obs.mask.indices) @ alpha)

    def test_rejects_bad_inputs(self):
        obs = observe(np.ones(3), [0, 1])
        with pytest.raises(ValueError):
            krr_fit(KernelMatrix(np.eye(3)), obs, 0.0)
        with pytest.raises(DimensionMismatch):
            krr_fit(KernelMatrix(np.eye(4)), obs, 0.1)


class TestLmmse:

    def test_noise_free_full_sampling_interpolates(self, rng):
        c = random_pd(rng, 5)
        f = rng.standard_normal(5)
        np.testing.assert_allclose(lmmse_estimate(KernelMatrix(c), observe(f, range(5)), 0.0), f, atol=1e-9)

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            lmmse_estimate(KernelMatrix(np.eye(2)), observe([1.0, 2.0], [0]), -1.0)


class TestBandlimited:

    def test_recovers_bandlimited_signal(self, small_decomp, rng):
        f = small_decomp.basis(3) @ rng.standard_normal(3)
        obs = observe(f, range(small_decomp.n))
        np.testing.assert_allclose(bl_estimate(small_decomp, obs, 3), f, atol=1e-10)

    def test_bandwidth_above_samples(self, small_decomp):
        obs = observe(np.ones(small_decomp.n), [0, 1])
        with pytest.raises(RankDeficient):
            bl_estimate(small_decomp, obs, 3)

    def test_bandwidth_out_of_range(self, small_decomp):
        obs = observe(np.ones(small_decomp.n), range(small_decomp.n))
        with pytest.raises(DimensionMismatch):
            bl_estimate(small_decomp, obs, 0)
        with pytest.raises(DimensionMismatch):
            bl_estimate(small_decomp, obs, small_decomp.n + 1)


class TestParametric:

    def test_recovers_signal_in_basis(self, rng):
        b = rng.standard_normal((6, 2))
        f = b @ np.array([1.5, -0.5])
        fit = parametric_fit(ParametricBasis(b), observe(f, [0, 2, 4]))
        np.testing.assert_allclose(fit.f_hat, f, atol=1e-10)
        np.testing.assert_allclose(fit.beta, [1.5, -0.5], atol=1e-10)

    def test_rank_deficient_sampled_basis(self):
        b = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(RankDeficientBasis):
            parametric_fit(ParametricBasis(b), observe([1.0, 1.0, 2.0], [0, 1]))

    def test_empty_basis(self):
        with pytest.raises(RankDeficientBasis):
            ParametricBasis(np.zeros((3, 0)))


class TestSemiparametricSquare:

    def test_parametric_data_gives_zero_alpha(self, rng):
        n = 8
        k = KernelMatrix(random_pd(rng, n))
        b = rng.standard_normal((n, 2))
        f = b @ np.array([2.0, -1.0])
        fit = semiparametric_fit_square(k, ParametricBasis(b), observe(f, [0, 1, 3, 4, 6]), 0.1)
        np.testing.assert_allclose(fit.alpha, 0.0, atol=1e-10)
        np.testing.assert_allclose(fit.beta, [2.0, -1.0], atol=1e-10)
        np.testing.assert_allclose(fit.f_hat, f, atol=1e-10)

    def test_optimality_conditions(self, rng):
        n, mu = 9, 0.05
        k = KernelMatrix(random_pd(rng, n))
        b = ParametricBasis(rng.standard_normal((n, 2)))
        obs = observe(rng.standard_normal(n), [0, 2, 3, 5, 7, 8])
        fit = semiparametric_fit_square(k, b, obs, mu)
        k_bar = k.sampled(obs.mask.indices)
        b_bar = b.sampled(obs.mask)
        s = obs.size
        np.testing.assert_allclose(b_bar.T @ fit.alpha, 0.0, atol=1e-10)
        np.testing.assert_allclose(k_bar @ fit.alpha + b_bar @ fit.beta + mu * s * fit.alpha, obs.y, atol=1e-10)


class TestSemiparametricEps:

    def test_objective(self):
        value = eps_insensitive_objective(np.array([0.5, -2.0]), np.zeros(2), np.eye(2), 1.0, 1.0)
        assert value == pytest.approx(0.5)

    def test_iteration_cap(self, rng):
        n = 6
        k = KernelMatrix(random_pd(rng, n))
        b = ParametricBasis(np.ones(n))
        obs = observe(rng.standard_normal(n), range(n))
        with pytest.raises(SolverDidNotConverge) as exc:
            semiparametric_fit_eps(k, b, obs, 0.1, 0.01, EpsSolverConfig(max_iters=1))
        assert exc.value.iterations == 1

    def test_best_objective_trace(self, rng):
        n = 6
        k = KernelMatrix(random_pd(rng, n))
        b = ParametricBasis(np.ones(n))
        obs = observe(rng.standard_normal(n), range(n))
        fit = semiparametric_fit_eps(k, b, obs, 0.1, 0.05)
        trace = np.array(fit.objective_trace)
        assert np.all(np.diff(trace) <= 1e-12)
        start = eps_insensitive_objective(obs.y, np.zeros(n), k.sampled(obs.mask.indices), 0.1, 0.05)
        assert trace[-1] <= start
        assert np.all(np.isfinite(fit.f_hat))

    def test_rejects_negative_epsilon(self):
        obs = observe(np.ones(3), range(3))
        with pytest.raises(ValueError):
            semiparametric_fit_eps(KernelMatrix(np.eye(3)), ParametricBasis(np.ones(3)), obs, 0.1, -1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_constrained_oracle(self, seed):
        # the loss as t >= |r| - eps, t >= 0, solved by SLSQP
        rng = np.random.default_rng(seed)
        n, mu, epsilon = 8, 0.05, 0.1
        k = KernelMatrix(random_pd(rng, n))
        b = ParametricBasis(np.column_stack([np.ones(n), np.arange(n) / n]))
        obs = observe(rng.standard_normal(n), [0, 1, 3, 4, 6, 7])
        s, m = obs.size, b.m
        k_bar = k.sampled(obs.mask.indices)
        b_bar = b.sampled(obs.mask)
        y = obs.y
        a = np.hstack([k_bar, b_bar])

        def split(z):
            return z[:s + m], z[s + m:]

        def objective(z):
            x, t = split(z)
            return float(np.sum(t)) / s + mu * float(x[:s] @ k_bar @ x[:s])

        def residual(z):
            x, t = split(z)
            r = y - a @ x
            return np.concatenate([t - r + epsilon, t + r + epsilon, t])

        start = np.concatenate([np.zeros(s + m), np.abs(y)])
        oracle = optimize.minimize(
            objective, start, method="SLSQP",
            constraints=[{"type": "ineq", "fun": residual}],
            options={"ftol": 1e-12, "maxiter": 2000},
        )
        x_star, _ = split(oracle.x)
        best = eps_insensitive_objective(y - a @ x_star, x_star[:s], k_bar, mu, epsilon)

        fit = semiparametric_fit_eps(k, b, obs, mu, epsilon)
        found = eps_insensitive_objective(
            y - k_bar @ fit.alpha - b_bar @ fit.beta, fit.alpha, k_bar, mu, epsilon
        )
        assert found == pytest.approx(best, rel=1e-3, abs=1e-6)

    def test_wide_tube_gives_zero_alpha(self, rng):
        n = 6
        k = KernelMatrix(random_pd(rng, n))
        b = ParametricBasis(np.ones(n))
        obs = observe(rng.standard_normal(n), range(n))
        epsilon = 2.0 * float(np.max(np.abs(obs.y)))
        fit = semiparametric_fit_eps(k, b, obs, 0.1, epsilon)
        np.testing.assert_allclose(fit.alpha, 0.0, atol=1e-8)
        assert np.all(np.abs(fit.f_hat[obs.mask.indices] - obs.y) <= epsilon + 1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_l1_fit_beats_square_fit_on_l1_objective(self, seed):
        rng = np.random.default_rng(100 + seed)
        n, mu = 9, 0.05
        k = KernelMatrix(random_pd(rng, n))
        b = ParametricBasis(np.ones(n))
        obs = observe(rng.standard_normal(n), [0, 2, 3, 5, 7, 8])
        k_bar = k.sampled(obs.mask.indices)
        b_bar = b.sampled(obs.mask)

        def l1_objective(fit):
            residual = obs.y - k_bar @ fit.alpha - b_bar @ fit.beta
            return eps_insensitive_objective(residual, fit.alpha, k_bar, mu, 0.0)

        l1 = semiparametric_fit_eps(k, b, obs, mu, 0.0)
        square = semiparametric_fit_square(k, b, obs, mu)
        assert l1_objective(l1) <= l1_objective(square) + 1e-6
