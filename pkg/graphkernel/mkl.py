"""
Multi-kernel learning for static reconstruction

- RKHS superposition: group-sparse fit over a kernel dictionary, solved by ADMM
  in the transformed variables z_m = K_bar_m^{1/2} alpha_m
- Kernel combination: alternating minimization over (theta, alpha) with
  K(theta) = sum_m theta_m K_m, theta >= 0
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from graphkernel.errors import DidNotConverge, DimensionMismatch, SingularSystem
from graphkernel.kernels import KernelDictionary
from graphkernel.linalg import cho_factor_jittered, psd_sqrt
from graphkernel.models import MklSolverConfig
from graphkernel.static_estimators import Observation, ridge_coefficients
from graphkernel.traces import write_trace

logger = logging.getLogger(__name__)

ACTIVE_TOL = 1e-8
RESIDUAL_BALANCE = 10.0
RELATIVE_CHANGE_TOL = 1e-8


@dataclass
class GroupCoefficients:
    """Per-kernel coefficients of an RKHS superposition fit"""
    z: Tuple[np.ndarray, ...]
    alpha: Tuple[np.ndarray, ...]
    converged: bool = True
    iterations: int = 0
    objective: float = 0.0
    trace: List[Dict[str, float]] = field(default_factory=list)

    @property
    def norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(z) for z in self.z])

    @property
    def active_set(self) -> Tuple[int, ...]:
        return tuple(int(m) for m in np.nonzero(self.norms > ACTIVE_TOL)[0])


@dataclass
class KernelCombinationFit:
    theta: np.ndarray
    alpha: np.ndarray
    f_hat: np.ndarray
    objective_trace: List[float] = field(default_factory=list)
    rounds: int = 0


def _check_dictionary(dictionary: KernelDictionary, obs: Observation):
    if dictionary.n != obs.n:
        raise DimensionMismatch(
            f"Dictionary of size {dictionary.n}, observation on {obs.n} vertices"
        )


def superposition_objective(
    roots: List[np.ndarray],
    z: List[np.ndarray],
    y: np.ndarray,
    mu: float,
) -> float:
    """(1/S)||y - sum_m K_bar_m^{1/2} z_m||^2 + mu sum_m ||z_m||"""
    s = max(y.shape[0], 1)
    fitted = sum(r @ zm for r, zm in zip(roots, z))
    return float(np.sum((y - fitted) ** 2)) / s + mu * sum(float(np.linalg.norm(zm)) for zm in z)


def _block_shrink(v: np.ndarray, threshold: float) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm <= threshold:
        return np.zeros_like(v)
    return (1.0 - threshold / norm) * v


def rkhs_superposition_fit(
    dictionary: KernelDictionary,
    obs: Observation,
    mu: float,
    config: Optional[MklSolverConfig] = None,
) -> Tuple[GroupCoefficients, np.ndarray]:
    """
    Group-sparse RKHS superposition estimate

    Minimizes (1/S)||y - sum_m K_bar_m^{1/2} z_m||^2 + mu sum_m ||z_m|| by ADMM
    with the consensus split z = w, block soft-thresholding on w and residual
    balancing of rho. The estimate is f_hat = sum_m K_m Phi^T (K_bar_m^{1/2})^+ z_m.
    """
    _check_dictionary(dictionary, obs)
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    config = config or MklSolverConfig()

    idx = obs.mask.indices
    s, n_kernels = obs.size, len(dictionary)
    y = obs.y
    roots, inv_roots = [], []
    for member in dictionary.members:
        root, inv_root = psd_sqrt(member.sampled(idx))
        roots.append(root)
        inv_roots.append(inv_root)

    if s == 0:
        zeros = tuple(np.zeros(0) for _ in range(n_kernels))
        return GroupCoefficients(z=zeros, alpha=zeros), np.zeros(obs.n)

    a_mat = np.hstack(roots)
    dim = s * n_kernels
    threshold_scale = mu * s / 2.0
    use_lemma = dim > s

    def factorize(rho: float):
        if use_lemma:
            return cho_factor_jittered(
                rho * np.eye(s) + a_mat @ a_mat.T, error=SingularSystem, what="ADMM z-update"
            )
        return cho_factor_jittered(
            a_mat.T @ a_mat + rho * np.eye(dim), error=SingularSystem, what="ADMM z-update"
        )

    def z_update(q: np.ndarray, rho: float, factor) -> np.ndarray:
        if use_lemma:
            return (q - a_mat.T @ linalg.cho_solve(factor, a_mat @ q)) / rho
        return linalg.cho_solve(factor, q)

    rho = config.rho_admm
    factor = factorize(rho)
    aty = a_mat.T @ y
    w = np.zeros(dim)
    u = np.zeros(dim)

    def split(v: np.ndarray) -> List[np.ndarray]:
        return [v[m * s:(m + 1) * s] for m in range(n_kernels)]

    best_w = w.copy()
    best_obj = superposition_objective(roots, split(w), y, mu)
    records = []
    converged = False
    iteration = 0

    for iteration in range(1, config.max_iters + 1):
        z = z_update(aty + rho * (w - u), rho, factor)
        w_prev = w
        w = np.concatenate([
            _block_shrink(block, threshold_scale / rho) for block in split(z + u)
        ])
        u = u + z - w

        obj = superposition_objective(roots, split(w), y, mu)
        if obj < best_obj:
            best_obj = obj
            best_w = w.copy()

        primal = float(np.linalg.norm(z - w))
        dual = rho * float(np.linalg.norm(w - w_prev))
        eps_primal = np.sqrt(dim) * config.tol_primal + config.tol_primal * max(
            float(np.linalg.norm(z)), float(np.linalg.norm(w))
        )
        eps_dual = np.sqrt(dim) * config.tol_dual + config.tol_dual * rho * float(np.linalg.norm(u))
        records.append({
            "iteration": iteration, "objective": obj,
            "primal_residual": primal, "dual_residual": dual, "rho": rho,
        })

        if primal <= eps_primal and dual <= eps_dual:
            converged = True
            best_w = w.copy()
            best_obj = obj
            break

        if primal > RESIDUAL_BALANCE * dual:
            rho *= 2.0
            u /= 2.0
            factor = factorize(rho)
        elif dual > RESIDUAL_BALANCE * primal:
            rho /= 2.0
            u *= 2.0
            factor = factorize(rho)

    write_trace(records, config.trace_path)

    if not converged:
        message = (
            f"RKHS superposition ADMM did not converge in {config.max_iters} iterations "
            f"(best objective {best_obj:.6e})"
        )
        if config.strict:
            raise DidNotConverge(message, iterations=config.max_iters)
        logger.warning(message)
    else:
        logger.debug(f"RKHS superposition converged in {iteration} iterations")

    z_blocks = split(best_w)
    alphas = [inv_root @ zm for inv_root, zm in zip(inv_roots, z_blocks)]
    f_hat = np.zeros(obs.n)
    for member, alpha in zip(dictionary.members, alphas):
        f_hat += member.columns(idx) @ alpha

    coefficients = GroupCoefficients(
        z=tuple(z_blocks),
        alpha=tuple(alphas),
        converged=converged,
        iterations=iteration,
        objective=best_obj,
        trace=records,
    )
    return coefficients, f_hat


def combination_objective(
    sampled: List[np.ndarray],
    theta: np.ndarray,
    alpha: np.ndarray,
    y: np.ndarray,
    mu: float,
    rho_theta: float,
) -> float:
    """(1/S)||y - K_bar(theta) alpha||^2 + mu alpha^T K_bar(theta) alpha + rho ||theta||^2"""
    s = max(y.shape[0], 1)
    k_theta = sum(t * k for t, k in zip(theta, sampled))
    fitted = k_theta @ alpha
    return (
        float(np.sum((y - fitted) ** 2)) / s
        + mu * float(alpha @ fitted)
        + rho_theta * float(theta @ theta)
    )


def _theta_step(
    sampled: List[np.ndarray],
    alpha: np.ndarray,
    y: np.ndarray,
    mu: float,
    rho_theta: float,
) -> np.ndarray:
    """
    Exact minimizer over theta >= 0 for fixed alpha

    The objective is theta^T Q theta - 2 b^T theta + const with
    Q = G^T G / S + rho I and b = G^T y / S - mu c / 2; completing the square
    through Q = R^T R turns it into a non-negative least-squares problem.
    """
    s = y.shape[0]
    g = np.column_stack([k @ alpha for k in sampled])
    c = np.array([float(alpha @ col) for col in g.T])
    q = g.T @ g / s + rho_theta * np.eye(len(sampled))
    b = g.T @ y / s - mu * c / 2.0
    r = linalg.cholesky(q, lower=False)
    d = linalg.solve_triangular(r, b, trans="T")
    theta, _ = optimize.nnls(r, d)
    return theta


def kernel_combination_fit(
    dictionary: KernelDictionary,
    obs: Observation,
    mu: float,
    config: Optional[MklSolverConfig] = None,
) -> KernelCombinationFit:
    """
    Kernel-combination estimate by alternating minimization

    alpha-step: alpha = (K_bar(theta) + mu*S*I)^-1 y; theta-step: exact
    non-negative quadratic program. Starts from theta = 1/M and stops after
    alt_min_rounds or when the relative objective change drops below 1e-8.
    """
    _check_dictionary(dictionary, obs)
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    config = config or MklSolverConfig()

    idx = obs.mask.indices
    s, n_kernels = obs.size, len(dictionary)
    y = obs.y
    sampled = [member.sampled(idx) for member in dictionary.members]
    theta = np.full(n_kernels, 1.0 / n_kernels)

    if s == 0:
        return KernelCombinationFit(theta=theta, alpha=np.zeros(0), f_hat=np.zeros(obs.n))

    def alpha_step(th: np.ndarray) -> np.ndarray:
        k_theta = sum(t * k for t, k in zip(th, sampled))
        return ridge_coefficients(k_theta, y, mu * s)

    alpha = alpha_step(theta)
    objective = combination_objective(sampled, theta, alpha, y, mu, config.rho_theta)
    trace = [objective]
    records = [{"round": 0, "objective": objective}]
    rounds = 0

    for rounds in range(1, config.alt_min_rounds + 1):
        theta = _theta_step(sampled, alpha, y, mu, config.rho_theta)
        alpha = alpha_step(theta)
        previous = objective
        objective = combination_objective(sampled, theta, alpha, y, mu, config.rho_theta)
        trace.append(objective)
        records.append({"round": rounds, "objective": objective})
        if abs(previous - objective) <= RELATIVE_CHANGE_TOL * max(abs(previous), 1e-300):
            break

    write_trace(records, config.trace_path)
    logger.debug(f"Kernel combination finished after {rounds} rounds, theta={theta}")

    f_hat = np.zeros(obs.n)
    for t, member in zip(theta, dictionary.members):
        f_hat += t * (member.columns(idx) @ alpha)
    return KernelCombinationFit(
        theta=theta, alpha=alpha, f_hat=f_hat, objective_trace=trace, rounds=rounds
    )
