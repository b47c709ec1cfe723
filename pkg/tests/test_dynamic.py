"""
Time-varying reconstruction: instantaneous, batch space-time and kernel Kalman filtering
"""
import numpy as np
import pytest

import graphkernel.dynamic as dynamic
from conftest import random_pd
from graphkernel.errors import DimensionMismatch, EmptySlot, NotPositiveDefinite
from graphkernel.kernels import BlockTridiagonalMatrix, KernelMatrix, space_time_kernel_from_inverse
from graphkernel.dynamic import (
    KkfParameters,
    TimeSeriesObservations,
    batch_space_time_fit,
    ie_run,
    instantaneous_estimate,
    kkf_noise_variances,
    kkf_parameters,
    kkf_run,
    online_krr_oracle,
    space_time_kkf,
    unstack,
)
from graphkernel.static_estimators import Observation, SamplingMask, krr_fit


def slot(n, indices, values):
    return Observation(mask=SamplingMask(indices=np.asarray(indices, dtype=int), n=n), y=np.asarray(values, dtype=float))


def random_block_tridiagonal(rng, n, t_len, off_scale=0.2):
    diag = tuple(random_pd(rng, n, floor=2.5) for _ in range(t_len))
    off = tuple(off_scale * rng.standard_normal((n, n)) for _ in range(t_len - 1))
    return BlockTridiagonalMatrix(diag_blocks=diag, off_blocks=off)


def random_series(rng, n, counts):
    slots = []
    for s in counts:
        idx = np.sort(rng.choice(n, size=s, replace=False))
        slots.append(slot(n, idx, rng.standard_normal(s)))
    return TimeSeriesObservations(slots=tuple(slots))


class TestTimeSeriesObservations:

    def test_needs_a_slot(self):
        with pytest.raises(DimensionMismatch):
            TimeSeriesObservations(slots=())

    def test_vertex_counts_agree(self):
        with pytest.raises(DimensionMismatch):
            TimeSeriesObservations(slots=(slot(3, [0], [1.0]), slot(4, [0], [1.0])))

    def test_truncated_empties_later_slots(self, rng):
        obs = random_series(rng, 4, [2, 3, 1])
        truncated = obs.truncated(0)
        assert truncated.sample_counts == [2, 0, 0]
        assert truncated.t_len == 3


class TestKkfParameters:

    def test_scalar_chain(self):
        c = 0.5
        inv = BlockTridiagonalMatrix(
            diag_blocks=(np.eye(1), np.eye(1)),
            off_blocks=(-c * np.eye(1),),
        )
        params = kkf_parameters(inv)
        np.testing.assert_allclose(params.transitions[0], [[c]])
        np.testing.assert_allclose(params.noise_kernels[1], [[1.0]])
        np.testing.assert_allclose(params.noise_kernels[0], [[1.0 / (1.0 - c * c)]])
        np.testing.assert_allclose(params.transition(0), [[0.0]])

    def test_parameters_reproduce_inverse(self, rng):
        # K^-1 = (I - P)^T Q^-1 (I - P) with P the block sub-diagonal of transitions
        n, t_len = 3, 4
        inv = random_block_tridiagonal(rng, n, t_len)
        params = kkf_parameters(inv)
        lower = np.eye(n * t_len)
        for t in range(1, t_len):
            lower[t * n:(t + 1) * n, (t - 1) * n:t * n] = -params.transition(t)
        q_inv = np.zeros((n * t_len, n * t_len))
        for t, q in enumerate(params.noise_kernels):
            q_inv[t * n:(t + 1) * n, t * n:(t + 1) * n] = np.linalg.inv(q)
        np.testing.assert_allclose(lower.T @ q_inv @ lower, inv.assemble(), atol=1e-10)

    def test_length_check(self):
        with pytest.raises(DimensionMismatch):
            KkfParameters(transitions=(np.eye(1),), noise_kernels=(np.eye(1),))

    def test_indefinite_inverse_is_rejected(self):
        # the jittered retry would accept this block
        inv = BlockTridiagonalMatrix(diag_blocks=(np.diag([1.0, -1e-14]),), off_blocks=())
        with pytest.raises(NotPositiveDefinite):
            kkf_parameters(inv)
        with pytest.raises(NotPositiveDefinite):
            space_time_kernel_from_inverse(inv)

    def test_indefinite_schur_complement_is_rejected(self):
        inv = BlockTridiagonalMatrix(
            diag_blocks=(np.eye(1), np.eye(1)),
            off_blocks=(-np.eye(1),),
        )
        with pytest.raises(NotPositiveDefinite):
            kkf_parameters(inv)


class TestKkfRun:

    def test_scalar_update(self):
        params = KkfParameters(transitions=(), noise_kernels=(np.eye(1),))
        obs = TimeSeriesObservations(slots=(slot(1, [0], [2.0]),))
        states = kkf_run(params, obs, [1.0])
        np.testing.assert_allclose(states[0].f_hat, [1.0])
        np.testing.assert_allclose(states[0].m, [[0.5]])

    def test_matches_online_oracle(self, rng):
        n, t_len, mu = 3, 5, 0.1
        inv = random_block_tridiagonal(rng, n, t_len)
        obs = random_series(rng, n, [2, 3, 0, 1, 3])
        k_ext = space_time_kernel_from_inverse(inv)
        filtered = space_time_kkf(inv, obs, mu)
        for t in range(t_len):
            oracle = online_krr_oracle(k_ext, obs, mu, t)
            np.testing.assert_allclose(filtered[t], oracle[t], atol=1e-9)

    @pytest.mark.parametrize("instance", range(20))
    def test_matches_online_oracle_across_instances(self, instance):
        rng = np.random.default_rng(instance)
        n = (4, 8)[instance % 2]
        t_len = (10, 30)[(instance // 2) % 2]
        mu = 0.1
        inv = random_block_tridiagonal(rng, n, t_len, off_scale=0.1)
        obs = random_series(rng, n, np.minimum(rng.integers(0, 6, size=t_len), n).tolist())
        k_ext = space_time_kernel_from_inverse(inv)
        filtered = space_time_kkf(inv, obs, mu)
        for t in range(t_len):
            oracle = online_krr_oracle(k_ext, obs, mu, t)[t]
            assert np.linalg.norm(filtered[t] - oracle) <= 1e-6 * np.linalg.norm(oracle)

    def test_unobserved_slots_give_zero(self, rng):
        n, t_len = 3, 4
        inv = random_block_tridiagonal(rng, n, t_len)
        obs = random_series(rng, n, [0] * t_len)
        states = kkf_run(kkf_parameters(inv), obs, kkf_noise_variances(obs, 0.1))
        for state in states:
            np.testing.assert_array_equal(state.f_hat, 0.0)
        np.testing.assert_array_equal(space_time_kkf(inv, obs, 0.1), 0.0)

    def test_last_slot_matches_batch(self, rng):
        n, t_len, mu = 4, 3, 0.05
        inv = random_block_tridiagonal(rng, n, t_len)
        obs = random_series(rng, n, [3, 2, 4])
        batch = unstack(batch_space_time_fit(space_time_kernel_from_inverse(inv), obs, mu), n)
        np.testing.assert_allclose(space_time_kkf(inv, obs, mu)[-1], batch[-1], atol=1e-9)

    def test_per_slot_cost_does_not_grow(self, rng, monkeypatch):
        n, t_len = 3, 6
        counts = [2, 2, 0, 2, 2, 2]
        params = kkf_parameters(random_block_tridiagonal(rng, n, t_len))
        obs = random_series(rng, n, counts)
        shapes = []
        original = dynamic.pd_solve

        def counting_solve(a, b, **kwargs):
            shapes.append(np.shape(a))
            return original(a, b, **kwargs)

        monkeypatch.setattr(dynamic, "pd_solve", counting_solve)
        kkf_run(params, obs, kkf_noise_variances(obs, 0.1))
        assert shapes == [(2, 2)] * 5

    def test_empty_slot_predicts(self, rng):
        n = 2
        params = kkf_parameters(random_block_tridiagonal(rng, n, 2))
        obs = TimeSeriesObservations(slots=(slot(n, [0, 1], [1.0, -1.0]), slot(n, [], [])))
        states = kkf_run(params, obs, [0.1, 0.0])
        np.testing.assert_allclose(states[1].f_hat, params.transition(1) @ states[0].f_hat)

    def test_dimension_checks(self):
        params = KkfParameters(transitions=(), noise_kernels=(np.eye(2),))
        obs = TimeSeriesObservations(slots=(slot(2, [0], [1.0]), slot(2, [1], [1.0])))
        with pytest.raises(DimensionMismatch):
            kkf_run(params, obs, [0.1, 0.1])


class TestInstantaneousAndBatch:

    def test_empty_slot(self):
        with pytest.raises(EmptySlot):
            instantaneous_estimate(KernelMatrix(np.eye(2)), slot(2, [], []), 0.1)

    def test_ie_zero_for_empty_slots(self, rng):
        k = KernelMatrix(random_pd(rng, 4))
        obs = random_series(rng, 4, [2, 0, 3])
        estimates = ie_run([k] * 3, obs, 0.1)
        np.testing.assert_allclose(estimates[1], 0.0)
        np.testing.assert_allclose(estimates[0], krr_fit(k, obs.slots[0], 0.1)[1])

    def test_uncoupled_batch_is_per_slot_krr(self, rng):
        n, mu = 4, 0.05
        k = random_pd(rng, n)
        k_ext = KernelMatrix(np.kron(np.eye(2), k))
        obs = random_series(rng, n, [2, 3])
        batch = unstack(batch_space_time_fit(k_ext, obs, mu), n)
        for t in range(2):
            np.testing.assert_allclose(batch[t], krr_fit(KernelMatrix(k), obs.slots[t], mu)[1], atol=1e-10)

    def test_oracle_slot_range(self, rng):
        obs = random_series(rng, 2, [1, 1])
        with pytest.raises(DimensionMismatch):
            online_krr_oracle(KernelMatrix(np.eye(4)), obs, 0.1, 2)

    def test_batch_kernel_size(self, rng):
        obs = random_series(rng, 2, [1, 1])
        with pytest.raises(DimensionMismatch):
            batch_space_time_fit(KernelMatrix(np.eye(3)), obs, 0.1)
