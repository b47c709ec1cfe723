"""
Reconstruction of time-varying graph signals on extended graphs

- Instantaneous estimator (KRR slot by slot)
- Batch space-time KRR and the online KRR oracle
- Kernel Kalman filter (KKF): parameters from a block-tridiagonal kernel
  inverse, then a per-slot predict/correct recursion whose cost does not grow
  with t
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from graphkernel.errors import (
    DimensionMismatch,
    EmptySlot,
    NotPositiveDefinite,
    SingularInnovation,
    SingularSystem,
)
from graphkernel.kernels import BlockTridiagonalMatrix, KernelMatrix
from graphkernel.linalg import pd_inverse, pd_solve, symmetrize
from graphkernel.static_estimators import Observation, SamplingMask, krr_fit

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TimeSeriesObservations:
    """Per-slot observations y(t) = Phi(t) f(t) + e(t), slots 0..T-1"""
    slots: Tuple[Observation, ...]

    def __post_init__(self):
        slots = tuple(self.slots)
        if not slots:
            raise DimensionMismatch("A time series needs at least one slot")
        n = slots[0].n
        for t, obs in enumerate(slots):
            if obs.n != n:
                raise DimensionMismatch(f"Slot {t} observes {obs.n} vertices, expected {n}")
        object.__setattr__(self, "slots", slots)

    @property
    def n(self) -> int:
        return self.slots[0].n

    @property
    def t_len(self) -> int:
        return len(self.slots)

    @property
    def sample_counts(self) -> List[int]:
        return [obs.size for obs in self.slots]

    def truncated(self, t: int) -> "TimeSeriesObservations":
        """Same horizon, with slots after t emptied"""
        empty = SamplingMask(indices=np.zeros(0, dtype=int), n=self.n)
        return TimeSeriesObservations(slots=tuple(
            obs if tau <= t else Observation(mask=empty, y=np.zeros(0))
            for tau, obs in enumerate(self.slots)
        ))


@dataclass(frozen=True, eq=False)
class KkfParameters:
    """
    Transitions and state-noise kernels of the KKF

    transitions[j] is P at slot j+1 (0-based); the transition into slot 0 is zero.
    """
    transitions: Tuple[np.ndarray, ...]
    noise_kernels: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.transitions) != len(self.noise_kernels) - 1:
            raise DimensionMismatch(
                f"{len(self.noise_kernels)} noise kernels need "
                f"{len(self.noise_kernels) - 1} transitions"
            )

    @property
    def n(self) -> int:
        return self.noise_kernels[0].shape[0]

    @property
    def t_len(self) -> int:
        return len(self.noise_kernels)

    def transition(self, t: int) -> np.ndarray:
        if t == 0:
            return np.zeros((self.n, self.n))
        return self.transitions[t - 1]


@dataclass(frozen=True, eq=False)
class KkfState:
    """Filtered estimate f(t|t) and its error matrix M(t|t)"""
    t: int
    f_hat: np.ndarray
    m: np.ndarray


def _stacked_indices(obs: TimeSeriesObservations) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Indices into the NT-vector, stacked values and per-sample S_t"""
    n = obs.n
    idx, values, counts = [], [], []
    for t, slot in enumerate(obs.slots):
        idx.append(slot.mask.indices + t * n)
        values.append(slot.y)
        counts.append(np.full(slot.size, float(slot.size)))
    return (
        np.concatenate(idx).astype(int),
        np.concatenate(values),
        np.concatenate(counts),
    )


def unstack(f: np.ndarray, n: int) -> np.ndarray:
    """NT-vector to T x n array"""
    return np.asarray(f).reshape(-1, n)


def instantaneous_estimate(k_t: KernelMatrix, obs_t: Observation, mu: float) -> np.ndarray:
    """KRR on a single slot"""
    if obs_t.size == 0:
        raise EmptySlot("Instantaneous estimate needs at least one sample")
    return krr_fit(k_t, obs_t, mu)[1]


def batch_space_time_fit(
    k_ext: KernelMatrix,
    obs: TimeSeriesObservations,
    mu: float,
) -> np.ndarray:
    """
    Batch KRR on the extended graph

    f_hat = K Phi^T (Phi K Phi^T + mu Sigma)^-1 y with Sigma holding S_t on the
    diagonal entries of slot t.
    """
    if k_ext.n != obs.n * obs.t_len:
        raise DimensionMismatch(
            f"Space-time kernel of size {k_ext.n} for n={obs.n}, T={obs.t_len}"
        )
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    idx, y, counts = _stacked_indices(obs)
    if idx.size == 0:
        return np.zeros(k_ext.n)
    system = k_ext.sampled(idx) + np.diag(mu * counts)
    alpha = pd_solve(system, y, error=SingularSystem, what="space-time ridge system")
    return k_ext.columns(idx) @ alpha


def online_krr_oracle(
    k_ext: KernelMatrix,
    obs: TimeSeriesObservations,
    mu: float,
    t: int,
) -> np.ndarray:
    """
    KRR estimates f(tau|t) for every slot tau from the data up to slot t

    Returns a T x n array. Cost grows with t; use kkf_run for filtering.
    """
    if not 0 <= t < obs.t_len:
        raise DimensionMismatch(f"Slot {t} outside [0, {obs.t_len})")
    return unstack(batch_space_time_fit(k_ext, obs.truncated(t), mu), obs.n)


def kkf_parameters(inv: BlockTridiagonalMatrix) -> KkfParameters:
    """
    KKF parameters from the block-tridiagonal inverse of a space-time kernel

    Q(T)^-1 = D(T); for t = T..2: P(t) = -Q(t) E(t) and
    Q(t-1)^-1 = D(t-1) - P(t)^T Q(t)^-1 P(t).
    """
    t_len = inv.t_len
    noise = [None] * t_len
    transitions = [None] * (t_len - 1)

    q_inv = np.array(inv.diag_blocks[-1])
    noise[-1] = pd_inverse(
        q_inv, error=NotPositiveDefinite, what=f"Q({t_len})^-1", jitter=False
    )
    for t in range(t_len - 1, 0, -1):
        e = inv.off_blocks[t - 1]
        p = -noise[t] @ e
        transitions[t - 1] = p
        q_inv_prev = symmetrize(inv.diag_blocks[t - 1] - p.T @ q_inv @ p)
        noise[t - 1] = pd_inverse(
            q_inv_prev, error=NotPositiveDefinite, what=f"Q({t})^-1", jitter=False
        )
        q_inv = q_inv_prev

    return KkfParameters(transitions=tuple(transitions), noise_kernels=tuple(noise))


def kkf_noise_variances(obs: TimeSeriesObservations, mu: float) -> List[float]:
    """sigma_t^2 = mu * S_t"""
    return [mu * s for s in obs.sample_counts]


def kkf_run(
    params: KkfParameters,
    obs: TimeSeriesObservations,
    noise_variances: Sequence[float],
) -> List[KkfState]:
    """
    Kernel Kalman filter

    Starts from f(0|0) = 0, M(0|0) = 0. Slots without samples only predict.
    """
    if params.t_len != obs.t_len or params.n != obs.n:
        raise DimensionMismatch(
            f"Parameters for n={params.n}, T={params.t_len}; data for n={obs.n}, T={obs.t_len}"
        )
    if len(noise_variances) != obs.t_len:
        raise DimensionMismatch(f"{len(noise_variances)} noise variances for {obs.t_len} slots")

    n = obs.n
    f_hat = np.zeros(n)
    m = np.zeros((n, n))
    states = []
    for t, slot in enumerate(obs.slots):
        p = params.transition(t)
        f_pred = p @ f_hat
        m_pred = symmetrize(p @ m @ p.T + params.noise_kernels[t])

        if slot.size == 0:
            f_hat, m = f_pred, m_pred
        else:
            idx = slot.mask.indices
            innovation = noise_variances[t] * np.eye(slot.size) + m_pred[np.ix_(idx, idx)]
            # G^T = innovation^-1 Phi M(t|t-1)
            gain_t = pd_solve(
                innovation, m_pred[idx, :], error=SingularInnovation, what="innovation matrix"
            )
            f_hat = f_pred + gain_t.T @ (slot.y - f_pred[idx])
            m = symmetrize(m_pred - gain_t.T @ m_pred[idx, :])

        states.append(KkfState(t=t, f_hat=f_hat.copy(), m=m.copy()))

    logger.debug(f"KKF processed {obs.t_len} slots of {n} vertices")
    return states


def ie_run(
    kernels: Sequence[KernelMatrix],
    obs: TimeSeriesObservations,
    mu: float,
) -> np.ndarray:
    """Instantaneous estimates for every slot; empty slots give zeros"""
    if len(kernels) != obs.t_len:
        raise DimensionMismatch(f"{len(kernels)} kernels for {obs.t_len} slots")
    out = np.zeros((obs.t_len, obs.n))
    for t, (k, slot) in enumerate(zip(kernels, obs.slots)):
        if slot.size:
            out[t] = instantaneous_estimate(k, slot, mu)
    return out


def kkf_estimates(states: Sequence[KkfState]) -> np.ndarray:
    return np.vstack([s.f_hat for s in states])


def space_time_kkf(
    inv: BlockTridiagonalMatrix,
    obs: TimeSeriesObservations,
    mu: float,
    params: Optional[KkfParameters] = None,
) -> np.ndarray:
    """Filtered KKF estimates (T x n) with sigma_t^2 = mu * S_t"""
    params = params or kkf_parameters(inv)
    states = kkf_run(params, obs, kkf_noise_variances(obs, mu))
    return kkf_estimates(states)
