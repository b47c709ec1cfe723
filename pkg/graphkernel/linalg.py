"""
Dense linear-algebra helpers shared by the estimators

- PD solves via Cholesky with a single jittered retry
- Symmetric pseudo-inverses and square roots with a relative threshold
"""
import logging
from typing import Tuple, Type

import numpy as np
from scipy import linalg

from graphkernel.config import get_settings
from graphkernel.errors import GraphKernelError, SingularSystem

logger = logging.getLogger(__name__)


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (M + M^T) / 2"""
    return 0.5 * (m + m.T)


def is_symmetric(m: np.ndarray, tol: float = 1e-10) -> bool:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    return bool(np.allclose(m, m.T, rtol=0.0, atol=tol * scale))


def cho_factor_jittered(
    a: np.ndarray,
    error: Type[GraphKernelError] = SingularSystem,
    what: str = "system",
    jitter: bool = True,
):
    """
    Cholesky-factorize a symmetric matrix

    On failure, adds jitter_scale * trace/n to the diagonal and retries once.
    Raises `error` when the retry fails too, or at once with jitter=False.
    """
    a = np.asarray(a, dtype=float)
    try:
        return linalg.cho_factor(a, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        if not jitter:
            raise error(f"Cannot factorize {what}: matrix is not positive definite") from e

    n = a.shape[0]
    amount = get_settings().jitter_scale * float(np.trace(a)) / max(n, 1)
    if not np.isfinite(amount) or amount <= 0.0:
        raise error(f"Cannot factorize {what}: matrix is not positive definite")

    logger.debug(f"Factorization of {what} failed; retrying with jitter {amount:.3e}")
    try:
        return linalg.cho_factor(a + amount * np.eye(n), lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise error(f"Cannot factorize {what} even with jitter {amount:.3e}") from e


def pd_solve(
    a: np.ndarray,
    b: np.ndarray,
    error: Type[GraphKernelError] = SingularSystem,
    what: str = "system",
    jitter: bool = True,
) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A"""
    factor = cho_factor_jittered(a, error=error, what=what, jitter=jitter)
    return linalg.cho_solve(factor, b)


def pd_inverse(
    a: np.ndarray,
    error: Type[GraphKernelError] = SingularSystem,
    what: str = "matrix",
    jitter: bool = True,
) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix, symmetrized"""
    a = np.asarray(a, dtype=float)
    inv = pd_solve(a, np.eye(a.shape[0]), error=error, what=what, jitter=jitter)
    return symmetrize(inv)


def spectral_threshold(eigenvalues: np.ndarray, pinv_tol: float = None) -> float:
    """Absolute threshold below which eigenvalues count as zero"""
    if pinv_tol is None:
        pinv_tol = get_settings().pinv_tol
    if eigenvalues.size == 0:
        return 0.0
    return pinv_tol * max(float(np.max(np.abs(eigenvalues))), 0.0)


def sym_eigh(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric matrix (ascending)"""
    return linalg.eigh(symmetrize(np.asarray(m, dtype=float)))


def sym_pinv(m: np.ndarray, pinv_tol: float = None) -> np.ndarray:
    """Spectral pseudo-inverse of a symmetric matrix"""
    w, v = sym_eigh(m)
    thr = spectral_threshold(w, pinv_tol)
    inv_w = np.where(w > thr, 1.0 / np.where(w > thr, w, 1.0), 0.0)
    return symmetrize((v * inv_w) @ v.T)


def psd_sqrt(m: np.ndarray, pinv_tol: float = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Square root of a PSD matrix and its pseudo-inverse

    Returns (M^{1/2}, (M^{1/2})^dagger); eigenvalues at or below the relative
    threshold are treated as zero.
    """
    w, v = sym_eigh(m)
    thr = spectral_threshold(w, pinv_tol)
    keep = w > thr
    root_w = np.where(keep, np.sqrt(np.clip(w, 0.0, None)), 0.0)
    inv_root_w = np.where(keep, 1.0 / np.where(keep, root_w, 1.0), 0.0)
    root = symmetrize((v * root_w) @ v.T)
    inv_root = symmetrize((v * inv_root_w) @ v.T)
    return root, inv_root
