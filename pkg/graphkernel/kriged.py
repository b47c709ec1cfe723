"""
Kernel kriged Kalman filtering

The signal splits into a trend chi(t) = A(t,t-1) chi(t-1) + eta(t), filtered
sequentially, and a fluctuation nu(t) without temporal memory, kriged from
the residuals of every slot.

- KeKriKF: one filter step per slot with given kernels
- MKriKF: the kernels are non-negative combinations of dictionaries whose
  coefficients are re-estimated online from running sufficient statistics
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from graphkernel.errors import (
    DimensionMismatch,
    EmptyHistory,
    SingularCombination,
    SingularInnovation,
    SingularInstantaneous,
)
from graphkernel.dynamic import TimeSeriesObservations
from graphkernel.graph import SpectralDecomposition
from graphkernel.kernels import KernelDictionary, KernelMatrix, combine
from graphkernel.linalg import pd_solve, symmetrize
from graphkernel.models import KrigedConfig, ThetaSolverConfig, TransitionKind, TransitionSpec
from graphkernel.static_estimators import Observation

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-10
ARMIJO = 1e-4
MAX_HALVINGS = 60


# ==================== Model ====================


def transition_matrix(spec: TransitionSpec, adjacency: np.ndarray) -> np.ndarray:
    """alpha*I or alpha*A"""
    n = adjacency.shape[0]
    if spec.kind == TransitionKind.SCALED_IDENTITY:
        return spec.alpha * np.eye(n)
    return spec.alpha * np.asarray(adjacency, dtype=float)


def svarm_to_varm(a_tt: np.ndarray, a_prev: np.ndarray) -> np.ndarray:
    """Effective transition (I - A(t,t))^-1 A(t,t-1) of a structural VAR model"""
    a_tt = np.asarray(a_tt, dtype=float)
    a_prev = np.asarray(a_prev, dtype=float)
    if a_tt.shape != a_prev.shape or a_tt.shape[0] != a_tt.shape[1]:
        raise DimensionMismatch(f"Transitions of shapes {a_tt.shape} and {a_prev.shape}")
    n = a_tt.shape[0]
    system = np.eye(n) - a_tt
    if np.linalg.matrix_rank(system) < n:
        raise SingularInstantaneous("I - A(t,t) is singular")
    try:
        return linalg.solve(system, a_prev)
    except linalg.LinAlgError as e:
        raise SingularInstantaneous("I - A(t,t) is singular") from e


@dataclass(frozen=True, eq=False)
class SpatioTemporalModel:
    """Transition, kernels and regularization weights of the kriged model"""
    transition: np.ndarray
    kernel_nu: KernelMatrix
    kernel_eta: KernelMatrix
    mu1: float
    mu2: float
    instantaneous: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.kernel_nu.n
        if self.kernel_eta.n != n or np.shape(self.transition) != (n, n):
            raise DimensionMismatch("Transition and kernels must share the vertex count")
        if self.instantaneous is not None and np.shape(self.instantaneous) != (n, n):
            raise DimensionMismatch("Instantaneous transition has the wrong shape")
        if self.mu1 <= 0 or self.mu2 <= 0:
            raise ValueError(f"mu1 and mu2 must be positive, got {self.mu1}, {self.mu2}")

    @property
    def n(self) -> int:
        return self.kernel_nu.n

    def to_varm(self) -> "SpatioTemporalModel":
        """
        Equivalent model without instantaneous term

        The transition becomes (I - A_tt)^-1 A_prev and the state noise kernel
        (I - A_tt)^-1 K_eta (I - A_tt)^-T.
        """
        if self.instantaneous is None:
            return self
        a_eff = svarm_to_varm(self.instantaneous, self.transition)
        mixing = linalg.solve(np.eye(self.n) - self.instantaneous, np.eye(self.n))
        k_eta = KernelMatrix(
            matrix=symmetrize(mixing @ self.kernel_eta.matrix @ mixing.T),
            provenance=f"svarm:{self.kernel_eta.provenance}",
            validate=False,
        )
        return replace(self, transition=a_eff, kernel_eta=k_eta, instantaneous=None)


@dataclass(frozen=True, eq=False)
class KrigedState:
    """Filtered trend chi(t|t), fluctuation nu(t|t) and trend error matrix M(t|t)"""
    t: int
    chi: np.ndarray
    nu: np.ndarray
    m: np.ndarray

    @classmethod
    def initial(cls, n: int) -> "KrigedState":
        return cls(t=-1, chi=np.zeros(n), nu=np.zeros(n), m=np.zeros((n, n)))

    @property
    def f_hat(self) -> np.ndarray:
        return self.chi + self.nu


def kekrikf_step(
    state: KrigedState,
    model: SpatioTemporalModel,
    obs_t: Observation,
) -> KrigedState:
    """
    One KeKriKF slot

    K_chi = (1/mu2) Phi K_nu Phi^T + S I plays the role of the observation
    noise of the trend filter, whose state noise is K_eta / mu1. The
    fluctuation is kriged as (1/mu2) K_nu Phi^T K_chi^-1 (y - Phi chi(t|t));
    without samples it is zero.
    """
    model = model.to_varm()
    if obs_t.n != model.n:
        raise DimensionMismatch(f"Observation on {obs_t.n} vertices, model on {model.n}")

    a = model.transition
    chi_pred = a @ state.chi
    m_pred = symmetrize(a @ state.m @ a.T + model.kernel_eta.matrix / model.mu1)

    if obs_t.size == 0:
        return KrigedState(t=state.t + 1, chi=chi_pred, nu=np.zeros(model.n), m=m_pred)

    idx = obs_t.mask.indices
    s = obs_t.size
    k_chi = model.kernel_nu.sampled(idx) / model.mu2 + s * np.eye(s)
    innovation = k_chi + m_pred[np.ix_(idx, idx)]
    gain_t = pd_solve(innovation, m_pred[idx, :], error=SingularInnovation, what="innovation matrix")

    chi = chi_pred + gain_t.T @ (obs_t.y - chi_pred[idx])
    m = symmetrize(m_pred - gain_t.T @ m_pred[idx, :])
    weights = pd_solve(k_chi, obs_t.y - chi[idx], error=SingularInnovation, what="kriging system")
    nu = model.kernel_nu.columns(idx) @ weights / model.mu2
    return KrigedState(t=state.t + 1, chi=chi, nu=nu, m=m)


def kekrikf_run(
    model: SpatioTemporalModel,
    obs: TimeSeriesObservations,
) -> List[KrigedState]:
    """KeKriKF over all slots with fixed kernels"""
    model = model.to_varm()
    state = KrigedState.initial(model.n)
    states = []
    for slot in obs.slots:
        state = kekrikf_step(state, model, slot)
        states.append(state)
    return states


# ==================== Online kernel combination ====================


@dataclass(frozen=True, eq=False)
class SufficientStatistics:
    """
    Running sums of a signal history

    outer is sum_tau x x^T; spectral, when an eigenbasis is tracked, holds
    sum_tau (U^T x)^2.
    """
    count: int
    outer: np.ndarray
    spectral: Optional[np.ndarray] = None
    basis: Optional[SpectralDecomposition] = None

    @classmethod
    def empty(cls, n: int, basis: Optional[SpectralDecomposition] = None) -> "SufficientStatistics":
        return cls(
            count=0,
            outer=np.zeros((n, n)),
            spectral=np.zeros(n) if basis is not None else None,
            basis=basis,
        )

    def add(self, x: np.ndarray) -> "SufficientStatistics":
        x = np.asarray(x, dtype=float)
        spectral = None
        if self.basis is not None:
            spectral = self.spectral + (self.basis.eigenvectors.T @ x) ** 2
        return SufficientStatistics(
            count=self.count + 1,
            outer=self.outer + np.outer(x, x),
            spectral=spectral,
            basis=self.basis,
        )


@dataclass(frozen=True, eq=False)
class ThetaState:
    """Combination coefficients of both dictionaries and their statistics"""
    theta_nu: np.ndarray
    theta_eta: np.ndarray
    nu_stats: SufficientStatistics
    eta_stats: SufficientStatistics

    @classmethod
    def initial(cls, dict_nu: KernelDictionary, dict_eta: KernelDictionary) -> "ThetaState":
        return cls(
            theta_nu=np.full(len(dict_nu), 1.0 / len(dict_nu)),
            theta_eta=np.full(len(dict_eta), 1.0 / len(dict_eta)),
            nu_stats=SufficientStatistics.empty(dict_nu.n, dict_nu.shared_eigenbasis),
            eta_stats=SufficientStatistics.empty(dict_eta.n, dict_eta.shared_eigenbasis),
        )


@dataclass
class ThetaSolution:
    theta: np.ndarray
    objective_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    projected_gradient: float = 0.0
    fast_path: bool = False


class _ThetaObjective:
    """
    (1/t) tr(K(theta)^-1 C) + weight ||theta||^2 and its gradient

    Eigenvalues of K(theta) are floored at 1e-10 * trace/n; a zero kernel
    gives a zero data term when C = 0 and +inf otherwise.
    """

    def __init__(
        self,
        dictionary: KernelDictionary,
        stats: SufficientStatistics,
        weight: float,
        fast_path: bool,
    ):
        self.dictionary = dictionary
        self.count = stats.count
        self.weight = weight
        self.fast_path = fast_path
        self.n = dictionary.n
        if fast_path:
            self.spectra = dictionary.spectra()
            self.c = np.asarray(stats.spectral)
            self.c_is_zero = not np.any(self.c)
        else:
            self.members = [m.matrix for m in dictionary.members]
            self.outer = stats.outer
            self.c_is_zero = not np.any(self.outer)

    def __call__(self, theta: np.ndarray) -> Tuple[float, np.ndarray]:
        penalty = self.weight * float(theta @ theta)
        penalty_grad = 2.0 * self.weight * theta
        if self.fast_path:
            s = theta @ self.spectra
            trace = float(np.sum(s))
            if trace <= 0.0:
                return self._degenerate(penalty, penalty_grad)
            s_floor = np.maximum(s, EIGEN_FLOOR * trace / self.n)
            data = float(np.sum(self.c / s_floor))
            data_grad = -self.spectra @ (self.c / s_floor ** 2)
        else:
            k = sum(t * m for t, m in zip(theta, self.members))
            trace = float(np.trace(k))
            if trace <= 0.0:
                return self._degenerate(penalty, penalty_grad)
            w, v = linalg.eigh(symmetrize(k))
            w_floor = np.maximum(w, EIGEN_FLOOR * trace / self.n)
            k_inv = (v / w_floor) @ v.T
            data = float(np.sum(k_inv * self.outer))
            weighted = k_inv @ self.outer @ k_inv
            data_grad = -np.array([float(np.sum(m * weighted)) for m in self.members])
        return data / self.count + penalty, data_grad / self.count + penalty_grad

    def _degenerate(self, penalty: float, penalty_grad: np.ndarray) -> Tuple[float, np.ndarray]:
        if self.c_is_zero:
            return penalty, penalty_grad
        return np.inf, np.full_like(penalty_grad, np.nan)


def minimize_theta(
    stats: SufficientStatistics,
    dictionary: KernelDictionary,
    weight: float,
    start: Optional[np.ndarray] = None,
    config: Optional[ThetaSolverConfig] = None,
    fast_path: Optional[bool] = None,
) -> ThetaSolution:
    """
    Projected gradient descent over theta >= 0

    Barzilai-Borwein step proposals (the first one config.initial_step) with
    Armijo backtracking by halving; stops when the projected gradient norm
    drops below config.tol.
    """
    if stats.count == 0:
        raise EmptyHistory("Kernel coefficients need at least one slot of history")
    config = config or ThetaSolverConfig()
    if fast_path is None:
        fast_path = (
            dictionary.shared_eigenbasis is not None
            and stats.spectral is not None
            and stats.basis is dictionary.shared_eigenbasis
        )
    objective = _ThetaObjective(dictionary, stats, weight, fast_path)

    n_kernels = len(dictionary)
    theta = np.full(n_kernels, 1.0 / n_kernels) if start is None else np.maximum(start, 0.0)
    value, grad = objective(theta)
    if not np.isfinite(value):
        theta = np.full(n_kernels, 1.0 / n_kernels)
        value, grad = objective(theta)
        if not np.isfinite(value):
            raise SingularCombination("Kernel combination is singular for every start")

    trace = [value]
    theta_prev, grad_prev = None, None
    pg_norm = float(np.linalg.norm(theta - np.maximum(theta - grad, 0.0)))
    iteration = 0

    while pg_norm > config.tol and iteration < config.max_iters:
        iteration += 1
        step = config.initial_step
        if theta_prev is not None:
            s_vec, y_vec = theta - theta_prev, grad - grad_prev
            curvature = float(s_vec @ y_vec)
            if curvature > 0:
                step = float(s_vec @ s_vec) / curvature

        accepted = False
        for _ in range(MAX_HALVINGS):
            candidate = np.maximum(theta - step * grad, 0.0)
            cand_value, cand_grad = objective(candidate)
            if np.isfinite(cand_value) and cand_value <= value + ARMIJO * float(
                grad @ (candidate - theta)
            ):
                accepted = True
                break
            step /= 2.0
        if not accepted:
            logger.debug(f"theta line search stalled at iteration {iteration}")
            break

        theta_prev, grad_prev = theta, grad
        theta, value, grad = candidate, cand_value, cand_grad
        trace.append(value)
        pg_norm = float(np.linalg.norm(theta - np.maximum(theta - grad, 0.0)))

    if pg_norm > config.tol:
        logger.warning(
            f"theta update stopped after {iteration} iterations with projected gradient {pg_norm:.3e}"
        )
    return ThetaSolution(
        theta=theta,
        objective_trace=trace,
        iterations=iteration,
        projected_gradient=pg_norm,
        fast_path=fast_path,
    )


def theta_eta_update(
    state: ThetaState,
    dict_eta: KernelDictionary,
    rho_eta: float,
    mu1: float,
    config: Optional[ThetaSolverConfig] = None,
    fast_path: Optional[bool] = None,
) -> np.ndarray:
    """Coefficients of the state-noise dictionary from the trend innovations"""
    solution = minimize_theta(
        state.eta_stats, dict_eta, rho_eta / mu1,
        start=state.theta_eta, config=config, fast_path=fast_path,
    )
    return solution.theta


def theta_nu_update(
    state: ThetaState,
    dict_nu: KernelDictionary,
    rho_nu: float,
    mu2: float,
    config: Optional[ThetaSolverConfig] = None,
    fast_path: Optional[bool] = None,
) -> np.ndarray:
    """Coefficients of the fluctuation dictionary from the kriged fluctuations"""
    solution = minimize_theta(
        state.nu_stats, dict_nu, rho_nu / mu2,
        start=state.theta_nu, config=config, fast_path=fast_path,
    )
    return solution.theta


@dataclass
class MkrikfStep:
    state: KrigedState
    theta: ThetaState


def _check_fixed_sampling(obs: TimeSeriesObservations):
    first = obs.slots[0].mask.indices
    for t, slot in enumerate(obs.slots):
        if not np.array_equal(slot.mask.indices, first):
            raise DimensionMismatch(f"Slot {t} samples different vertices; MKriKF needs a fixed mask")


def mkrikf_run(
    obs: TimeSeriesObservations,
    dict_nu: KernelDictionary,
    dict_eta: KernelDictionary,
    transition: np.ndarray,
    config: Optional[KrigedConfig] = None,
    instantaneous: Optional[np.ndarray] = None,
) -> List[MkrikfStep]:
    """
    Multi-kernel KeKriKF

    Each slot runs kekrikf_step with the current combinations, adds the trend
    innovation chi(t|t) - A chi(t-1|t-1) and the fluctuation nu(t|t) to the
    running statistics, and re-estimates both coefficient vectors. With
    theta_updates_per_slot > 1 the slot is re-filtered with the new
    coefficients, replacing its contribution to the statistics.
    """
    config = config or KrigedConfig()
    if dict_nu.n != obs.n or dict_eta.n != obs.n:
        raise DimensionMismatch("Dictionaries and observations must share the vertex count")
    _check_fixed_sampling(obs)

    effective = transition
    if instantaneous is not None:
        effective = svarm_to_varm(instantaneous, transition)
    mixing = None
    if instantaneous is not None:
        mixing = linalg.solve(np.eye(obs.n) - instantaneous, np.eye(obs.n))

    state = KrigedState.initial(obs.n)
    theta_state = ThetaState.initial(dict_nu, dict_eta)
    steps = []

    for t, slot in enumerate(obs.slots):
        base = theta_state
        theta_nu, theta_eta = base.theta_nu, base.theta_eta
        for _ in range(config.theta_updates_per_slot):
            k_nu = combine(dict_nu, theta_nu)
            k_eta = combine(dict_eta, theta_eta)
            if mixing is not None:
                k_eta = KernelMatrix(
                    matrix=symmetrize(mixing @ k_eta.matrix @ mixing.T),
                    provenance="svarm:combination",
                    validate=False,
                )
            model = SpatioTemporalModel(
                transition=effective, kernel_nu=k_nu, kernel_eta=k_eta,
                mu1=config.mu1, mu2=config.mu2,
            )
            new_state = kekrikf_step(state, model, slot)
            candidate = replace(
                base,
                theta_nu=theta_nu,
                theta_eta=theta_eta,
                nu_stats=base.nu_stats.add(new_state.nu),
                eta_stats=base.eta_stats.add(new_state.chi - effective @ state.chi),
            )
            theta_eta = theta_eta_update(
                candidate, dict_eta, config.rho_eta, config.mu1, config.theta_solver
            )
            theta_nu = theta_nu_update(
                candidate, dict_nu, config.rho_nu, config.mu2, config.theta_solver
            )
            theta_state = replace(candidate, theta_nu=theta_nu, theta_eta=theta_eta)

        state = new_state
        steps.append(MkrikfStep(state=state, theta=theta_state))
        logger.debug(f"MKriKF slot {t}: theta_nu={theta_nu}, theta_eta={theta_eta}")

    return steps


def theta_history(steps: Sequence[MkrikfStep]) -> Dict[str, np.ndarray]:
    """theta trajectories as (T x M) arrays"""
    return {
        "theta_nu": np.vstack([s.theta.theta_nu for s in steps]),
        "theta_eta": np.vstack([s.theta.theta_eta for s in steps]),
    }
