"""
Time-invariant reconstruction of graph signals from noisy samples

- Kernel ridge regression (KRR) through S representer coefficients
- Bandlimited least-squares (BL) baseline
- LMMSE with a covariance kernel
- Parametric (P) and semi-parametric estimators with square and
  epsilon-insensitive losses
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from graphkernel.errors import (
    DimensionMismatch,
    RankDeficient,
    RankDeficientBasis,
    SingularSystem,
    SolverDidNotConverge,
)
from graphkernel.graph import SpectralDecomposition
from graphkernel.kernels import KernelMatrix
from graphkernel.linalg import cho_factor_jittered, pd_solve
from graphkernel.models import EpsSolverConfig
from graphkernel.traces import write_trace

logger = logging.getLogger(__name__)

RESIDUAL_BALANCE = 10.0


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Sampled vertex indices; realizes the S x n selection matrix Phi"""
    indices: np.ndarray
    n: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int).ravel()
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.n):
            raise DimensionMismatch(
                f"Sample indices must be strictly increasing within [0, {self.n})"
            )
        idx = idx.copy()
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, n: int) -> "SamplingMask":
        return cls(indices=np.arange(n), n=n)

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])

    def matrix(self) -> np.ndarray:
        phi = np.zeros((self.size, self.n))
        phi[np.arange(self.size), self.indices] = 1.0
        return phi

    def sample(self, f) -> np.ndarray:
        return np.asarray(f, dtype=float)[self.indices]


@dataclass(frozen=True, eq=False)
class Observation:
    """Noisy samples y = Phi f + e"""
    mask: SamplingMask
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel().copy()
        if y.shape[0] != self.mask.size:
            raise DimensionMismatch(f"{y.shape[0]} values for {self.mask.size} sampled vertices")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.mask.n

    @property
    def size(self) -> int:
        return self.mask.size


@dataclass(frozen=True, eq=False)
class ParametricBasis:
    """n x M matrix whose columns are basis signals"""
    b: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float, copy=True)
        if b.ndim == 1:
            b = b[:, np.newaxis]
        if b.ndim != 2 or b.shape[1] == 0:
            raise RankDeficientBasis("Parametric basis needs at least one column")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    def sampled(self, mask: SamplingMask) -> np.ndarray:
        """B_bar = Phi B, checked for full column rank"""
        if self.n != mask.n:
            raise DimensionMismatch(f"Basis on {self.n} vertices, mask on {mask.n}")
        b_bar = np.array(self.b[mask.indices, :])
        if b_bar.shape[0] < self.m or np.linalg.matrix_rank(b_bar) < self.m:
            raise RankDeficientBasis(
                f"Sampled basis has rank {np.linalg.matrix_rank(b_bar)} < {self.m}"
            )
        return b_bar


@dataclass
class SemiparametricFit:
    """Coefficients and estimate of a (semi-)parametric fit"""
    alpha: np.ndarray
    beta: np.ndarray
    f_hat: np.ndarray
    objective_trace: List[float] = field(default_factory=list)
    iterations: int = 0


def _check_kernel(k: KernelMatrix, obs: Observation):
    if k.n != obs.n:
        raise DimensionMismatch(f"Kernel of size {k.n}, observation on {obs.n} vertices")


def ridge_coefficients(k_bar: np.ndarray, y: np.ndarray, regularizer: float) -> np.ndarray:
    """(K_bar + regularizer*I)^-1 y"""
    if y.shape[0] == 0:
        return np.zeros(0)
    system = k_bar + regularizer * np.eye(k_bar.shape[0])
    return pd_solve(system, y, error=SingularSystem, what="ridge system")


def krr_fit(k: KernelMatrix, obs: Observation, mu: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Kernel ridge regression with the 1/S-normalized square loss

    alpha = (K_bar + mu*S*I)^-1 y and f_hat = K Phi^T alpha.
    """
    _check_kernel(k, obs)
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    idx = obs.mask.indices
    alpha = ridge_coefficients(k.sampled(idx), obs.y, mu * obs.size)
    return alpha, k.columns(idx) @ alpha


def lmmse_estimate(c: KernelMatrix, obs: Observation, noise_variance: float) -> np.ndarray:
    """f_hat = C Phi^T (Phi C Phi^T + sigma_e^2 I)^-1 y"""
    _check_kernel(c, obs)
    if noise_variance < 0:
        raise ValueError(f"Noise variance must be non-negative, got {noise_variance}")
    idx = obs.mask.indices
    weights = ridge_coefficients(c.sampled(idx), obs.y, noise_variance)
    return c.columns(idx) @ weights


def bl_estimate(decomp: SpectralDecomposition, obs: Observation, bandwidth: int) -> np.ndarray:
    """Least-squares fit over the first `bandwidth` Laplacian eigenvectors"""
    if decomp.n != obs.n:
        raise DimensionMismatch(f"Spectrum of size {decomp.n}, observation on {obs.n} vertices")
    if bandwidth < 1 or bandwidth > decomp.n:
        raise DimensionMismatch(f"Bandwidth {bandwidth} outside [1, {decomp.n}]")
    if bandwidth > obs.size:
        raise RankDeficient(f"Bandwidth {bandwidth} exceeds the {obs.size} samples")

    u_b = decomp.basis(bandwidth)
    u_sampled = u_b[obs.mask.indices, :]
    rank = np.linalg.matrix_rank(u_sampled)
    if rank < bandwidth:
        raise RankDeficient(f"Sampled eigenvectors have rank {rank} < {bandwidth}")
    coeffs, _, _, _ = linalg.lstsq(u_sampled, obs.y)
    return u_b @ coeffs


def parametric_fit(basis: ParametricBasis, obs: Observation) -> SemiparametricFit:
    """Purely parametric estimate: least squares of y on B_bar"""
    b_bar = basis.sampled(obs.mask)
    beta, _, _, _ = linalg.lstsq(b_bar, obs.y)
    return SemiparametricFit(alpha=np.zeros(obs.size), beta=beta, f_hat=basis.b @ beta)


def semiparametric_fit_square(
    k: KernelMatrix,
    basis: ParametricBasis,
    obs: Observation,
    mu: float,
) -> SemiparametricFit:
    """
    Semi-parametric fit f = B beta + f_NP under the square loss

    With P the projector onto the orthogonal complement of range(B_bar):
    alpha = (P K_bar + mu*S*I)^-1 P y, beta = B_bar^+ (y - K_bar alpha).
    """
    _check_kernel(k, obs)
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    b_bar = basis.sampled(obs.mask)
    idx = obs.mask.indices
    s = obs.size
    k_bar = k.sampled(idx)

    projector = np.eye(s) - b_bar @ linalg.pinv(b_bar)
    try:
        alpha = linalg.solve(projector @ k_bar + mu * s * np.eye(s), projector @ obs.y)
    except linalg.LinAlgError as e:
        raise SingularSystem("Semi-parametric system is singular") from e
    beta, _, _, _ = linalg.lstsq(b_bar, obs.y - k_bar @ alpha)
    f_hat = basis.b @ beta + k.columns(idx) @ alpha
    return SemiparametricFit(alpha=alpha, beta=beta, f_hat=f_hat)


def eps_insensitive_objective(
    residual: np.ndarray,
    alpha: np.ndarray,
    k_bar: np.ndarray,
    mu: float,
    epsilon: float,
) -> float:
    """(1/S) sum max(0, |r| - eps) + mu alpha^T K_bar alpha"""
    s = max(residual.shape[0], 1)
    loss = float(np.sum(np.maximum(np.abs(residual) - epsilon, 0.0))) / s
    return loss + mu * float(alpha @ k_bar @ alpha)


def _prox_eps_insensitive(v: np.ndarray, epsilon: float, step: float) -> np.ndarray:
    """Elementwise prox of step*max(0, |v| - eps)"""
    a = np.abs(v)
    sign = np.sign(v)
    return np.where(
        a <= epsilon,
        v,
        np.where(a <= epsilon + step, sign * epsilon, v - step * sign),
    )


def semiparametric_fit_eps(
    k: KernelMatrix,
    basis: ParametricBasis,
    obs: Observation,
    mu: float,
    epsilon: float,
    config: Optional[EpsSolverConfig] = None,
) -> SemiparametricFit:
    """
    Semi-parametric fit under the epsilon-insensitive loss

    ADMM on the split r = y - K_bar alpha - B_bar beta. The x-update solves
    a quadratic in (alpha, beta); the r-update is the prox of the loss. The
    best iterate is returned, and objective_trace holds the best objective
    seen so far at every iteration.
    """
    _check_kernel(k, obs)
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    config = config or EpsSolverConfig()
    started = time.time()

    b_bar = basis.sampled(obs.mask)
    idx = obs.mask.indices
    s, m = obs.size, basis.m
    k_bar = k.sampled(idx)
    y = obs.y
    a_mat = np.hstack([k_bar, b_bar])  # maps x = (alpha, beta) to the fitted samples

    def factorize(rho: float):
        h = np.zeros((s + m, s + m))
        h[:s, :s] = 2.0 * mu * k_bar + rho * k_bar @ k_bar
        h[:s, s:] = rho * k_bar @ b_bar
        h[s:, :s] = h[:s, s:].T
        h[s:, s:] = rho * b_bar.T @ b_bar
        return cho_factor_jittered(0.5 * (h + h.T), error=SingularSystem, what="ADMM x-update")

    rho = config.rho
    factor = factorize(rho)
    x = np.zeros(s + m)
    r = y.copy()
    u = np.zeros(s)

    best_x = x.copy()
    best_obj = eps_insensitive_objective(y, x[:s], k_bar, mu, epsilon)
    trace = []
    records = []
    tol = config.tol

    for iteration in range(1, config.max_iters + 1):
        c = y - r - u
        x = linalg.cho_solve(factor, rho * (a_mat.T @ c))
        fitted = a_mat @ x

        r_prev = r
        r = _prox_eps_insensitive(y - fitted - u, epsilon, 1.0 / (s * rho))
        primal = fitted + r - y
        u = u + primal

        obj = eps_insensitive_objective(y - fitted, x[:s], k_bar, mu, epsilon)
        if obj < best_obj:
            best_obj = obj
            best_x = x.copy()
        trace.append(best_obj)

        primal_norm = float(np.linalg.norm(primal))
        dual_norm = rho * float(np.linalg.norm(a_mat.T @ (r - r_prev)))
        eps_primal = np.sqrt(s) * tol + tol * max(
            float(np.linalg.norm(fitted)), float(np.linalg.norm(r)), float(np.linalg.norm(y))
        )
        eps_dual = np.sqrt(s + m) * tol + tol * rho * float(np.linalg.norm(a_mat.T @ u))
        records.append({
            "iteration": iteration, "objective": best_obj,
            "primal_residual": primal_norm, "dual_residual": dual_norm, "rho": rho,
        })

        if primal_norm <= eps_primal and dual_norm <= eps_dual:
            logger.debug(
                f"eps-insensitive ADMM converged in {iteration} iterations "
                f"({time.time() - started:.2f}s), objective {best_obj:.6e}"
            )
            if obj <= best_obj:
                best_x = x.copy()
            write_trace(records, config.trace_path)
            alpha, beta = best_x[:s], best_x[s:]
            f_hat = basis.b @ beta + k.columns(idx) @ alpha
            return SemiparametricFit(
                alpha=alpha, beta=beta, f_hat=f_hat,
                objective_trace=trace, iterations=iteration,
            )

        if primal_norm > RESIDUAL_BALANCE * dual_norm:
            rho *= 2.0
            u /= 2.0
            factor = factorize(rho)
        elif dual_norm > RESIDUAL_BALANCE * primal_norm:
            rho /= 2.0
            u *= 2.0
            factor = factorize(rho)

    write_trace(records, config.trace_path)
    logger.warning(
        f"eps-insensitive ADMM hit {config.max_iters} iterations, best objective {best_obj:.6e}"
    )
    raise SolverDidNotConverge(
        f"epsilon-insensitive solver did not converge in {config.max_iters} iterations",
        iterations=config.max_iters,
    )
