"""
Graph kernels

- Laplacian kernels K = U r^dagger(Lambda) U^T for the spectral maps of SpectralMapSpec
- Covariance kernels from signal histories
- Kernel dictionaries and non-negative combinations
- RKHS norms
- Space-time kernels whose inverse is block tridiagonal
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from graphkernel.config import get_settings
from graphkernel.errors import (
    DimensionMismatch,
    EmptyHistory,
    InvalidSpectralValue,
    NegativeCoefficient,
    NotPositiveDefinite,
    NotPositiveSemidefinite,
    NotSymmetric,
    OutOfRange,
    PoleAtEigenvalue,
)
from graphkernel.graph import ExtendedGraph, SpectralDecomposition
from graphkernel.linalg import is_symmetric, pd_inverse, spectral_threshold, sym_eigh, symmetrize
from graphkernel.models import SpectralMapKind, SpectralMapSpec

logger = logging.getLogger(__name__)

PSD_TOL = 1e-8
RANGE_TOL = 1e-6
COMMUTE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """
    Symmetric PSD kernel matrix

    When the kernel is diagonal in a known eigenbasis (Laplacian kernels and
    their combinations), `eigenbasis` and `spectrum` record K = U diag(spectrum) U^T.
    """
    matrix: np.ndarray
    provenance: str = "explicit"
    eigenbasis: Optional[SpectralDecomposition] = None
    spectrum: Optional[np.ndarray] = None
    validate: bool = True

    def __post_init__(self):
        k = np.array(self.matrix, dtype=float, copy=True)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise DimensionMismatch(f"Kernel must be square, got shape {k.shape}")
        if self.validate:
            if not is_symmetric(k):
                raise NotSymmetric(f"Kernel {self.provenance} is not symmetric")
            if k.size:
                w = np.linalg.eigvalsh(symmetrize(k))
                if w[0] < -PSD_TOL * max(float(w[-1]), 1.0):
                    raise NotPositiveSemidefinite(
                        f"Kernel {self.provenance} has eigenvalue {w[0]:.3e}"
                    )
        k = symmetrize(k)
        k.setflags(write=False)
        object.__setattr__(self, "matrix", k)
        if self.spectrum is not None:
            s = np.array(self.spectrum, dtype=float, copy=True)
            s.setflags(write=False)
            object.__setattr__(self, "spectrum", s)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def sampled(self, indices) -> np.ndarray:
        """K_bar = Phi K Phi^T"""
        idx = np.asarray(indices, dtype=int)
        return np.array(self.matrix[np.ix_(idx, idx)])

    def columns(self, indices) -> np.ndarray:
        """K Phi^T"""
        idx = np.asarray(indices, dtype=int)
        return np.array(self.matrix[:, idx])


@dataclass(frozen=True, eq=False)
class KernelDictionary:
    """Ordered kernels of equal size, optionally sharing one eigenbasis"""
    members: Tuple[KernelMatrix, ...]
    shared_eigenbasis: Optional[SpectralDecomposition] = None

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise DimensionMismatch("Kernel dictionary is empty")
        n = members[0].n
        for m in members:
            if m.n != n:
                raise DimensionMismatch(f"Dictionary member of size {m.n}, expected {n}")
        object.__setattr__(self, "members", members)

        if self.shared_eigenbasis is not None:
            u = self.shared_eigenbasis.eigenvectors
            if u.shape[0] != n:
                raise DimensionMismatch("Shared eigenbasis size differs from the kernels")
            for i, m in enumerate(members):
                d = np.einsum("ij,ik,kj->j", u, m.matrix, u)
                if np.linalg.norm((u * d) @ u.T - m.matrix) > COMMUTE_TOL * max(
                    1.0, float(np.linalg.norm(m.matrix))
                ):
                    raise DimensionMismatch(f"Member {i} is not diagonal in the shared eigenbasis")

    @classmethod
    def from_members(cls, members: Sequence[KernelMatrix]) -> "KernelDictionary":
        """Build a dictionary, detecting a common eigenbasis"""
        members = tuple(members)
        basis = members[0].eigenbasis if members else None
        if basis is not None and all(
            m.eigenbasis is basis and m.spectrum is not None for m in members
        ):
            return cls(members=members, shared_eigenbasis=basis)
        return cls(members=members)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def n(self) -> int:
        return self.members[0].n

    def spectra(self) -> np.ndarray:
        """M x n matrix of member eigenvalues in the shared eigenbasis"""
        if self.shared_eigenbasis is None:
            raise DimensionMismatch("Dictionary has no shared eigenbasis")
        u = self.shared_eigenbasis.eigenvectors
        rows = []
        for m in self.members:
            if m.spectrum is not None and m.eigenbasis is self.shared_eigenbasis:
                rows.append(np.array(m.spectrum))
            else:
                rows.append(np.einsum("ij,ik,kj->j", u, m.matrix, u))
        return np.vstack(rows)


@dataclass(frozen=True, eq=False)
class BlockTridiagonalMatrix:
    """
    Symmetric block-tridiagonal matrix

    diag_blocks are D(t); off_blocks[j] is E(j+1) (0-based), placed at block
    row j+1, column j with its transpose at row j, column j+1.
    """
    diag_blocks: Tuple[np.ndarray, ...]
    off_blocks: Tuple[np.ndarray, ...]

    def __post_init__(self):
        diag = tuple(np.array(d, dtype=float) for d in self.diag_blocks)
        off = tuple(np.array(e, dtype=float) for e in self.off_blocks)
        if not diag:
            raise DimensionMismatch("Block-tridiagonal matrix needs at least one block")
        if len(off) != len(diag) - 1:
            raise DimensionMismatch(f"{len(diag)} diagonal blocks need {len(diag) - 1} off blocks")
        n = diag[0].shape[0]
        for block in diag + off:
            if block.shape != (n, n):
                raise DimensionMismatch(f"Block of shape {block.shape}, expected {(n, n)}")
        for t, d in enumerate(diag):
            if not is_symmetric(d):
                raise NotSymmetric(f"Diagonal block {t} is not symmetric")
        object.__setattr__(self, "diag_blocks", diag)
        object.__setattr__(self, "off_blocks", off)

    @property
    def n(self) -> int:
        return self.diag_blocks[0].shape[0]

    @property
    def t_len(self) -> int:
        return len(self.diag_blocks)

    def assemble(self) -> np.ndarray:
        n, t_len = self.n, self.t_len
        out = np.zeros((n * t_len, n * t_len))
        for t, d in enumerate(self.diag_blocks):
            out[t * n:(t + 1) * n, t * n:(t + 1) * n] = d
        for j, e in enumerate(self.off_blocks):
            r, c = (j + 1) * n, j * n
            out[r:r + n, c:c + n] = e
            out[c:c + n, r:r + n] = e.T
        return out


# ==================== Spectral maps ====================


def spectral_map_eval(
    spec: SpectralMapSpec,
    lam: float,
    n_index: Optional[int] = None,
    n_total: Optional[int] = None,
) -> float:
    """
    Evaluate r(lambda)

    band_reject is rank based: n_index is the 0-based rank of lambda among
    n_total eigenvalues, and r = beta for ranks k..N-l (1-based), 1/beta elsewhere.
    """
    kind = spec.kind
    if kind == SpectralMapKind.DIFFUSION:
        value = float(np.exp(spec.sigma2 * lam / 2.0))
    elif kind == SpectralMapKind.P_STEP_RANDOM_WALK:
        if np.isclose(lam, spec.a, rtol=0.0, atol=1e-12):
            raise PoleAtEigenvalue(f"p-step map with a={spec.a} has a pole at lambda={lam}")
        if lam > spec.a:
            raise InvalidSpectralValue(f"p-step map undefined for lambda={lam} > a={spec.a}")
        value = float((spec.a - lam) ** (-spec.p))
    elif kind == SpectralMapKind.REGULARIZED_LAPLACIAN:
        value = 1.0 + spec.sigma2 * lam
    elif kind == SpectralMapKind.BANDLIMITED:
        value = 1.0 / spec.beta if lam <= spec.lambda_max else spec.beta
    else:
        if n_index is None or n_total is None:
            raise InvalidSpectralValue("band_reject needs the eigenvalue rank and count")
        rank = n_index + 1
        value = spec.beta if spec.k <= rank <= n_total - spec.l else 1.0 / spec.beta

    if not np.isfinite(value) or value < 0:
        raise InvalidSpectralValue(f"r({lam}) = {value} for {spec.describe()}")
    return value


def spectral_weights(decomp: SpectralDecomposition, spec: SpectralMapSpec) -> np.ndarray:
    """r^dagger at every eigenvalue: 1/r where r > pinv_tol, else 0"""
    pinv_tol = get_settings().pinv_tol
    n = decomp.n
    r = np.array([
        spectral_map_eval(spec, float(lam), n_index=i, n_total=n)
        for i, lam in enumerate(decomp.eigenvalues)
    ])
    return np.where(r > pinv_tol, 1.0 / np.where(r > pinv_tol, r, 1.0), 0.0)


def laplacian_kernel(decomp: SpectralDecomposition, spec: SpectralMapSpec) -> KernelMatrix:
    weights = spectral_weights(decomp, spec)
    u = decomp.eigenvectors
    return KernelMatrix(
        matrix=(u * weights) @ u.T,
        provenance=f"laplacian:{spec.describe()}",
        eigenbasis=decomp,
        spectrum=weights,
        validate=False,
    )


def covariance_kernel(samples) -> KernelMatrix:
    """Sample covariance of signal rows, normalized by m, clipped to PSD"""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyHistory("Covariance kernel needs at least one signal")

    centered = x - x.mean(axis=0)
    c = symmetrize(centered.T @ centered / x.shape[0])
    w, v = sym_eigh(c)
    if w.size and w[0] < 0:
        c = symmetrize((v * np.clip(w, 0.0, None)) @ v.T)
    return KernelMatrix(matrix=c, provenance=f"covariance:m={x.shape[0]}", validate=False)


# ==================== Dictionaries ====================


def combine(dictionary: KernelDictionary, theta) -> KernelMatrix:
    """K(theta) = sum_m theta_m K_m"""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != len(dictionary):
        raise DimensionMismatch(f"{theta.shape[0]} coefficients for {len(dictionary)} kernels")
    if np.any(theta < 0):
        raise NegativeCoefficient(f"Kernel coefficients must be non-negative, got {theta}")

    k = np.zeros((dictionary.n, dictionary.n))
    for coef, member in zip(theta, dictionary.members):
        k += coef * member.matrix

    spectrum = None
    if dictionary.shared_eigenbasis is not None:
        spectrum = theta @ dictionary.spectra()
    return KernelMatrix(
        matrix=k,
        provenance="combination",
        eigenbasis=dictionary.shared_eigenbasis,
        spectrum=spectrum,
        validate=False,
    )


def dictionary_from_specs(
    decomp: SpectralDecomposition,
    specs: Iterable[SpectralMapSpec],
) -> KernelDictionary:
    members = [laplacian_kernel(decomp, spec) for spec in specs]
    return KernelDictionary(members=tuple(members), shared_eigenbasis=decomp)


def diffusion_dictionary(
    decomp: SpectralDecomposition,
    sigma2_values: Iterable[float],
) -> KernelDictionary:
    return dictionary_from_specs(decomp, [SpectralMapSpec.diffusion(s) for s in sigma2_values])


def band_reject_dictionary(
    decomp: SpectralDecomposition,
    k_values: Iterable[int],
    l_values: Iterable[int],
    beta: float,
) -> KernelDictionary:
    l_values = list(l_values)
    specs = [SpectralMapSpec.band_reject(k, l, beta) for k in k_values for l in l_values]
    return dictionary_from_specs(decomp, specs)


def scaled_identity_dictionary(
    n: int,
    scales: Iterable[float],
    decomp: Optional[SpectralDecomposition] = None,
) -> KernelDictionary:
    """Kernels s*I; they share any eigenbasis, `decomp` if given"""
    members = []
    for s in scales:
        if s < 0:
            raise NegativeCoefficient(f"Identity scale {s} is negative")
        members.append(KernelMatrix(
            matrix=s * np.eye(n),
            provenance=f"identity:{s}",
            eigenbasis=decomp,
            spectrum=np.full(n, float(s)) if decomp is not None else None,
            validate=False,
        ))
    return KernelDictionary(members=tuple(members), shared_eigenbasis=decomp)


# ==================== RKHS norm ====================


def rkhs_norm_sq(k: KernelMatrix, f) -> float:
    """f^T K^dagger f; f must lie in the range of K"""
    f = np.asarray(f, dtype=float)
    if f.shape != (k.n,):
        raise DimensionMismatch(f"Signal of shape {f.shape} for a kernel of size {k.n}")

    w, v = sym_eigh(k.matrix)
    keep = w > spectral_threshold(w)
    coeffs = v.T @ f
    outside = float(np.linalg.norm(coeffs[~keep]))
    if outside > RANGE_TOL * float(np.linalg.norm(f)):
        raise OutOfRange(f"Signal has a component of norm {outside:.3e} outside the kernel range")
    return float(np.sum(coeffs[keep] ** 2 / w[keep]))


# ==================== Space-time kernels ====================


def extended_laplacian(ext: ExtendedGraph, include_snapshots: bool = True) -> BlockTridiagonalMatrix:
    """
    Laplacian of an extended graph in block form

    With include_snapshots=False only the temporal couplings contribute.
    Degree at slot t = row sums of A(t) + row sums of B(t) + column sums of B(t+1).
    """
    n, t_len = ext.n, ext.t_len
    diag = []
    for t in range(t_len):
        a = ext.diagonal_blocks[t] if include_snapshots else np.zeros((n, n))
        degree = a.sum(axis=1)
        if t >= 1:
            degree = degree + ext.coupling_blocks[t - 1].sum(axis=1)
        if t + 1 < t_len:
            degree = degree + ext.coupling_blocks[t].sum(axis=0)
        diag.append(np.diag(degree) - a)
    off = [-np.array(b) for b in ext.coupling_blocks]
    return BlockTridiagonalMatrix(diag_blocks=tuple(diag), off_blocks=tuple(off))


def space_time_inverse(
    ext: ExtendedGraph,
    spatial_kernels: Optional[Sequence[KernelMatrix]] = None,
    sigma2: float = 1.0,
) -> BlockTridiagonalMatrix:
    """
    Block-tridiagonal inverse of a space-time kernel on an extended graph

    - No spatial kernels: I + sigma2*L_ext (regularized Laplacian kernel of the
      extended graph)
    - Spatial kernels K_t: blockdiag(K_t^-1) + sigma2*L_coupling
    """
    if sigma2 < 0:
        raise InvalidSpectralValue(f"sigma2 must be non-negative, got {sigma2}")
    n = ext.n
    if spatial_kernels is None:
        lap = extended_laplacian(ext, include_snapshots=True)
        diag = [np.eye(n) + sigma2 * d for d in lap.diag_blocks]
    else:
        if len(spatial_kernels) != ext.t_len:
            raise DimensionMismatch(
                f"{len(spatial_kernels)} spatial kernels for {ext.t_len} slots"
            )
        lap = extended_laplacian(ext, include_snapshots=False)
        diag = []
        for k, d in zip(spatial_kernels, lap.diag_blocks):
            if k.n != n:
                raise DimensionMismatch(f"Spatial kernel of size {k.n}, expected {n}")
            k_inv = pd_inverse(k.matrix, error=NotPositiveDefinite, what="spatial kernel")
            diag.append(symmetrize(k_inv + sigma2 * d))
    off = [sigma2 * e for e in lap.off_blocks]
    return BlockTridiagonalMatrix(diag_blocks=tuple(diag), off_blocks=tuple(off))


def space_time_kernel_from_inverse(inv: BlockTridiagonalMatrix) -> KernelMatrix:
    """Dense inverse of a positive definite block-tridiagonal matrix"""
    k = pd_inverse(
        inv.assemble(), error=NotPositiveDefinite, what="space-time kernel inverse", jitter=False
    )
    return KernelMatrix(
        matrix=k,
        provenance=f"space-time:n={inv.n},T={inv.t_len}",
        validate=False,
    )


