"""
Kernel kriged Kalman filtering with fixed and learned kernels
"""
import numpy as np
import pytest

from conftest import random_pd
from graphkernel.dynamic import KkfParameters, TimeSeriesObservations, kkf_noise_variances, kkf_run
from graphkernel.errors import DimensionMismatch, EmptyHistory, SingularInstantaneous
from graphkernel.kernels import (
    KernelDictionary,
    KernelMatrix,
    combine,
    diffusion_dictionary,
    scaled_identity_dictionary,
)
from graphkernel.kriged import (
    KrigedState,
    SpatioTemporalModel,
    SufficientStatistics,
    ThetaState,
    kekrikf_run,
    kekrikf_step,
    minimize_theta,
    mkrikf_run,
    svarm_to_varm,
    theta_eta_update,
    theta_history,
    transition_matrix,
)
from graphkernel.models import KrigedConfig, TransitionKind, TransitionSpec
from graphkernel.static_estimators import Observation, SamplingMask


def random_series(rng, n, counts, fixed=False):
    slots = []
    idx = np.sort(rng.choice(n, size=counts[0], replace=False))
    for s in counts:
        if not fixed:
            idx = np.sort(rng.choice(n, size=s, replace=False))
        slots.append(Observation(mask=SamplingMask(indices=idx, n=n), y=rng.standard_normal(idx.size)))
    return TimeSeriesObservations(slots=tuple(slots))


def dense_filtered(model, obs, t):
    """Posterior means of chi(t) and nu(t) given slots 0..t, by joint Gaussian conditioning"""
    n, t_len = model.n, t + 1
    a = model.transition
    q = model.kernel_eta.matrix / model.mu1
    lower = np.eye(n * t_len)
    for tau in range(1, t_len):
        lower[tau * n:(tau + 1) * n, (tau - 1) * n:tau * n] = -a
    lower_inv = np.linalg.inv(lower)
    cov_chi = lower_inv @ np.kron(np.eye(t_len), q) @ lower_inv.T
    cov_nu = np.kron(np.eye(t_len), model.kernel_nu.matrix / model.mu2)
    cov = np.block([
        [cov_chi, np.zeros_like(cov_chi)],
        [np.zeros_like(cov_nu), cov_nu],
    ])

    rows, values, noise = [], [], []
    for tau in range(t_len):
        slot = obs.slots[tau]
        for i, y in zip(slot.mask.indices, slot.y):
            h = np.zeros(2 * n * t_len)
            h[tau * n + i] = 1.0
            h[n * t_len + tau * n + i] = 1.0
            rows.append(h)
            values.append(y)
            noise.append(float(slot.size))
    h = np.array(rows)
    gain = cov @ h.T @ np.linalg.inv(h @ cov @ h.T + np.diag(noise))
    mean = gain @ np.array(values)
    chi = mean[t * n:(t + 1) * n]
    nu = mean[n * t_len + t * n:n * t_len + (t + 1) * n]
    return chi, nu


class TestTransitions:

    def test_svarm_to_varm(self):
        np.testing.assert_allclose(svarm_to_varm(0.5 * np.eye(2), np.eye(2)), 2.0 * np.eye(2))

    def test_singular_instantaneous(self):
        with pytest.raises(SingularInstantaneous):
            svarm_to_varm(np.eye(2), np.eye(2))

    def test_transition_kinds(self):
        adjacency = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(transition_matrix(TransitionSpec(alpha=0.3), adjacency), 0.3 * np.eye(2))
        spec = TransitionSpec(kind=TransitionKind.SCALED_ADJACENCY, alpha=0.5)
        np.testing.assert_allclose(transition_matrix(spec, adjacency), 0.5 * adjacency)


class TestKekrikf:

    def make_model(self, rng, n, instantaneous=None):
        return SpatioTemporalModel(
            transition=0.8 * np.eye(n) + 0.05 * rng.standard_normal((n, n)),
            kernel_nu=KernelMatrix(random_pd(rng, n)),
            kernel_eta=KernelMatrix(random_pd(rng, n)),
            mu1=2.0,
            mu2=0.5,
            instantaneous=instantaneous,
        )

    def test_matches_joint_gaussian_posterior(self, rng):
        n = 3
        model = self.make_model(rng, n)
        obs = random_series(rng, n, [2, 1, 3, 2])
        states = kekrikf_run(model, obs)
        for t, state in enumerate(states):
            chi, nu = dense_filtered(model, obs, t)
            np.testing.assert_allclose(state.chi, chi, atol=1e-9)
            np.testing.assert_allclose(state.nu, nu, atol=1e-9)
            np.testing.assert_allclose(state.f_hat, chi + nu, atol=1e-9)

    @pytest.mark.parametrize("instance", range(10))
    def test_joint_posterior_across_instances(self, instance):
        rng = np.random.default_rng(instance)
        n = int(rng.integers(2, 7))
        t_len = int(rng.integers(2, 11))
        model = self.make_model(rng, n)
        counts = rng.integers(0, n + 1, size=t_len)
        counts[0] = max(int(counts[0]), 1)
        obs = random_series(rng, n, counts.tolist())
        for t, state in enumerate(kekrikf_run(model, obs)):
            chi, nu = dense_filtered(model, obs, t)
            assert np.linalg.norm(state.f_hat - (chi + nu)) <= 1e-5 * np.linalg.norm(chi + nu) + 1e-12
            assert np.linalg.norm(state.chi - chi) <= 1e-5 * np.linalg.norm(chi) + 1e-12

    def test_vanishing_fluctuation_reduces_to_kkf(self, rng):
        n, t_len = 4, 5
        model = self.make_model(rng, n)
        model = SpatioTemporalModel(
            transition=model.transition,
            kernel_nu=KernelMatrix(1e-12 * np.eye(n)),
            kernel_eta=model.kernel_eta,
            mu1=model.mu1,
            mu2=model.mu2,
        )
        obs = random_series(rng, n, [2, 3, 0, 1, 4])
        q = model.kernel_eta.matrix / model.mu1
        params = KkfParameters(
            transitions=(model.transition,) * (t_len - 1),
            noise_kernels=(q,) * t_len,
        )
        kkf = kkf_run(params, obs, kkf_noise_variances(obs, 1.0))
        state = KrigedState.initial(n)
        for slot, expected in zip(obs.slots, kkf):
            state = kekrikf_step(state, model, slot)
            np.testing.assert_allclose(state.chi, expected.f_hat, atol=1e-9)
            np.testing.assert_allclose(state.f_hat, expected.f_hat, atol=1e-9)

    def test_empty_slot(self, rng):
        n = 3
        model = self.make_model(rng, n)
        state = kekrikf_step(KrigedState.initial(n), model, random_series(rng, n, [2]).slots[0])
        empty = Observation(mask=SamplingMask(indices=np.zeros(0, dtype=int), n=n), y=np.zeros(0))
        after = kekrikf_step(state, model, empty)
        np.testing.assert_allclose(after.nu, 0.0)
        np.testing.assert_allclose(after.chi, model.transition @ state.chi)
        assert after.t == state.t + 1

    def test_instantaneous_model_equals_varm(self, rng):
        n = 3
        a_tt = 0.2 * np.eye(n)
        model = self.make_model(rng, n, instantaneous=a_tt)
        varm = model.to_varm()
        assert varm.instantaneous is None
        np.testing.assert_allclose(varm.transition, np.linalg.solve(np.eye(n) - a_tt, model.transition))
        obs = random_series(rng, n, [2, 2, 2])
        for s1, s2 in zip(kekrikf_run(model, obs), kekrikf_run(varm, obs)):
            np.testing.assert_allclose(s1.f_hat, s2.f_hat)

    def test_model_checks(self, rng):
        with pytest.raises(DimensionMismatch):
            SpatioTemporalModel(
                transition=np.eye(2), kernel_nu=KernelMatrix(np.eye(3)),
                kernel_eta=KernelMatrix(np.eye(3)), mu1=1.0, mu2=1.0,
            )
        with pytest.raises(ValueError):
            SpatioTemporalModel(
                transition=np.eye(2), kernel_nu=KernelMatrix(np.eye(2)),
                kernel_eta=KernelMatrix(np.eye(2)), mu1=0.0, mu2=1.0,
            )


class TestThetaUpdates:

    def test_single_kernel_closed_form(self, rng):
        n, weight = 5, 0.5
        x = rng.standard_normal(n)
        stats = SufficientStatistics.empty(n).add(x)
        dictionary = scaled_identity_dictionary(n, [1.0])
        solution = minimize_theta(stats, dictionary, weight)
        expected = (float(x @ x) / (2.0 * weight)) ** (1.0 / 3.0)
        assert solution.theta[0] == pytest.approx(expected, rel=1e-4)
        assert not solution.fast_path

    def test_fast_path_agrees(self, rng, small_decomp):
        n = small_decomp.n
        dictionary = diffusion_dictionary(small_decomp, [0.1, 0.3])
        stats = SufficientStatistics.empty(n, small_decomp)
        for _ in range(3):
            stats = stats.add(rng.standard_normal(n))
        fast = minimize_theta(stats, dictionary, 0.1)
        slow = minimize_theta(stats, dictionary, 0.1, fast_path=False)
        assert fast.fast_path
        np.testing.assert_allclose(fast.theta, slow.theta, rtol=1e-3, atol=1e-6)
        assert np.all(fast.theta >= 0)

    def test_objective_never_increases(self, rng, small_decomp):
        dictionary = diffusion_dictionary(small_decomp, [0.1, 0.2, 0.4])
        stats = SufficientStatistics.empty(small_decomp.n, small_decomp).add(rng.standard_normal(small_decomp.n))
        trace = np.array(minimize_theta(stats, dictionary, 0.05).objective_trace)
        assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]))

    def test_eta_update_closed_form(self, rng):
        # theta^3 = c mu / (2 rho t) for a single identity kernel
        n, rho, mu1 = 4, 0.2, 1.5
        dict_eta = scaled_identity_dictionary(n, [1.0])
        dict_nu = scaled_identity_dictionary(n, [1.0])
        x1, x2 = rng.standard_normal(n), rng.standard_normal(n)
        state = ThetaState.initial(dict_nu, dict_eta)
        state = ThetaState(
            theta_nu=state.theta_nu,
            theta_eta=state.theta_eta,
            nu_stats=state.nu_stats,
            eta_stats=state.eta_stats.add(x1).add(x2),
        )
        theta = theta_eta_update(state, dict_eta, rho, mu1)
        c = float(x1 @ x1 + x2 @ x2)
        assert theta[0] == pytest.approx((c * mu1 / (2.0 * rho * 2)) ** (1.0 / 3.0), rel=1e-4)


    def test_recovers_well_separated_entry(self, rng, small_decomp):
        # history drawn from the low band; the high-band kernel explains none of it
        u = small_decomp.eigenvectors
        low, high = u[:, :4], u[:, 8:]
        members = [
            KernelMatrix(low @ low.T + 1e-3 * np.eye(small_decomp.n)),
            KernelMatrix(high @ high.T + 1e-3 * np.eye(small_decomp.n)),
        ]
        stats = SufficientStatistics.empty(small_decomp.n)
        for _ in range(20):
            stats = stats.add(low @ rng.standard_normal(4))
        solution = minimize_theta(stats, KernelDictionary(members=tuple(members)), 0.1)
        assert solution.theta[0] > 0
        assert solution.theta[0] > 10.0 * solution.theta[1]

    def test_empty_history(self):
        with pytest.raises(EmptyHistory):
            minimize_theta(SufficientStatistics.empty(3), scaled_identity_dictionary(3, [1.0]), 0.1)


class TestMkrikf:

    def test_replays_as_kekrikf_with_previous_coefficients(self, rng, small_decomp):
        n = small_decomp.n
        dict_nu = diffusion_dictionary(small_decomp, [0.2, 0.5])
        dict_eta = scaled_identity_dictionary(n, [0.5, 1.0], small_decomp)
        transition = 0.9 * np.eye(n)
        config = KrigedConfig(mu1=1.0, mu2=1.0)
        obs = random_series(rng, n, [4, 4, 4, 4], fixed=True)
        steps = mkrikf_run(obs, dict_nu, dict_eta, transition, config)

        state = KrigedState.initial(n)
        theta_nu = np.full(2, 0.5)
        theta_eta = np.full(2, 0.5)
        for step, slot in zip(steps, obs.slots):
            model = SpatioTemporalModel(
                transition=transition,
                kernel_nu=combine(dict_nu, theta_nu),
                kernel_eta=combine(dict_eta, theta_eta),
                mu1=1.0,
                mu2=1.0,
            )
            state = kekrikf_step(state, model, slot)
            np.testing.assert_allclose(step.state.f_hat, state.f_hat, atol=1e-10)
            theta_nu, theta_eta = step.theta.theta_nu, step.theta.theta_eta
            assert np.all(theta_nu >= 0) and np.all(theta_eta >= 0)

    def test_theta_history(self, rng, small_decomp):
        n = small_decomp.n
        dict_nu = diffusion_dictionary(small_decomp, [0.1, 0.2, 0.4])
        dict_eta = scaled_identity_dictionary(n, [1.0], small_decomp)
        obs = random_series(rng, n, [3, 3, 3], fixed=True)
        steps = mkrikf_run(obs, dict_nu, dict_eta, np.eye(n), KrigedConfig(theta_updates_per_slot=2))
        history = theta_history(steps)
        assert history["theta_nu"].shape == (3, 3)
        assert history["theta_eta"].shape == (3, 1)
        assert steps[-1].theta.nu_stats.count == 3

    def test_requires_fixed_mask(self, rng, small_decomp):
        n = small_decomp.n
        obs = TimeSeriesObservations(slots=(
            Observation(mask=SamplingMask(indices=np.array([0, 1]), n=n), y=np.ones(2)),
            Observation(mask=SamplingMask(indices=np.array([0, 2]), n=n), y=np.ones(2)),
        ))
        dictionary = diffusion_dictionary(small_decomp, [1.0])
        with pytest.raises(DimensionMismatch):
            mkrikf_run(obs, dictionary, scaled_identity_dictionary(n, [1.0]), np.eye(n))

    def test_without_samples(self, small_decomp):
        n = small_decomp.n
        empty = Observation(mask=SamplingMask(indices=np.zeros(0, dtype=int), n=n), y=np.zeros(0))
        obs = TimeSeriesObservations(slots=(empty,) * 3)
        dict_nu = diffusion_dictionary(small_decomp, [0.2, 0.5])
        dict_eta = scaled_identity_dictionary(n, [1.0], small_decomp)
        steps = mkrikf_run(obs, dict_nu, dict_eta, 0.9 * np.eye(n))
        for step in steps:
            np.testing.assert_array_equal(step.state.f_hat, 0.0)
            assert np.all(np.isfinite(step.theta.theta_nu)) and np.all(step.theta.theta_nu >= 0)
            assert np.all(np.isfinite(step.theta.theta_eta)) and np.all(step.theta.theta_eta >= 0)
        assert steps[-1].theta.nu_stats.count == 3
