"""
Graphs, Laplacians and spectral machinery

- Graph: validated symmetric non-negative adjacency with zero diagonal
- SpectralDecomposition: Laplacian eigenpairs in ascending order
- ExtendedGraph: T snapshots stacked with temporal coupling blocks
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import linalg

from graphkernel.errors import (
    AsymmetricAdjacency,
    DimensionMismatch,
    GraphError,
    NegativeCoupling,
    NegativeWeight,
    NotSymmetric,
    SelfLoop,
)
from graphkernel.linalg import is_symmetric
from graphkernel.models import CouplingKind, CouplingSpec

logger = logging.getLogger(__name__)

# Eigenvalues in [-CLIP_TOL, 0) are Laplacian round-off
CLIP_TOL = 1e-10
SIGN_TOL = 1e-12


def _frozen(m: np.ndarray) -> np.ndarray:
    out = np.array(m, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph on vertices 0..n-1"""
    adjacency: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "adjacency", _frozen(self.adjacency))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> List[Tuple[int, int, float]]:
        """Edges (i, j, w) with i < j"""
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(i), int(j), float(self.adjacency[i, j])) for i, j in zip(rows, cols)]

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, k=1)))

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_weighted_edges_from(self.edges())
        return g

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        return nx.is_connected(self.to_networkx())


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenpairs of a Laplacian: L = U diag(eigenvalues) U^T"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _frozen(self.eigenvectors))

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    def basis(self, count: int) -> np.ndarray:
        """First `count` eigenvectors as columns"""
        if count > self.n:
            raise DimensionMismatch(f"Requested {count} eigenvectors of a {self.n}-vertex graph")
        return np.array(self.eigenvectors[:, :count])

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


@dataclass(frozen=True, eq=False)
class ExtendedGraph:
    """
    T snapshots of an n-vertex graph with temporal couplings

    coupling_blocks[j] is B(j+1) (0-based slots): the block at row j+1, column j
    of the assembled adjacency; its transpose sits at row j, column j+1.
    """
    diagonal_blocks: Tuple[np.ndarray, ...]
    coupling_blocks: Tuple[np.ndarray, ...]

    def __post_init__(self):
        diag = tuple(_frozen(a) for a in self.diagonal_blocks)
        coup = tuple(_frozen(b) for b in self.coupling_blocks)
        if not diag:
            raise DimensionMismatch("An extended graph needs at least one snapshot")
        if len(coup) != len(diag) - 1:
            raise DimensionMismatch(
                f"{len(diag)} snapshots need {len(diag) - 1} coupling blocks, got {len(coup)}"
            )
        n = diag[0].shape[0]
        for block in diag + coup:
            if block.shape != (n, n):
                raise DimensionMismatch(f"Block of shape {block.shape}, expected {(n, n)}")
        object.__setattr__(self, "diagonal_blocks", diag)
        object.__setattr__(self, "coupling_blocks", coup)

    @property
    def n(self) -> int:
        return self.diagonal_blocks[0].shape[0]

    @property
    def t_len(self) -> int:
        return len(self.diagonal_blocks)

    def snapshot(self, t: int) -> Graph:
        return Graph(self.diagonal_blocks[t])

    def assemble(self) -> np.ndarray:
        """Dense NT x NT adjacency"""
        n, t_len = self.n, self.t_len
        out = np.zeros((n * t_len, n * t_len))
        for t, a in enumerate(self.diagonal_blocks):
            out[t * n:(t + 1) * n, t * n:(t + 1) * n] = a
        for j, b in enumerate(self.coupling_blocks):
            r, c = (j + 1) * n, j * n
            out[r:r + n, c:c + n] = b
            out[c:c + n, r:r + n] = b.T
        return out


def validate_graph(adjacency) -> Graph:
    """
    Check an adjacency matrix and wrap it in a Graph

    Raises SelfLoop, AsymmetricAdjacency or NegativeWeight naming the first
    offending index pair.
    """
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"Adjacency must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GraphError("Adjacency has non-finite entries")

    diag = np.nonzero(np.diag(a))[0]
    if diag.size:
        i = int(diag[0])
        raise SelfLoop((i, i))

    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    asym = np.argwhere(~np.isclose(a, a.T, rtol=0.0, atol=1e-12 * scale))
    if asym.size:
        i, j = sorted(int(x) for x in asym[0])
        raise AsymmetricAdjacency((i, j))

    neg = np.argwhere(a < 0)
    if neg.size:
        i, j = sorted(int(x) for x in neg[0])
        raise NegativeWeight((i, j))

    return Graph(0.5 * (a + a.T))


def laplacian(g: Graph) -> np.ndarray:
    """L = diag(A 1) - A"""
    a = np.array(g.adjacency)
    return np.diag(a.sum(axis=1)) - a


def eigendecompose(lap: np.ndarray) -> SpectralDecomposition:
    """
    Symmetric eigendecomposition with ascending eigenvalues

    Round-off negatives are clipped to 0 and every eigenvector has its first
    nonzero component positive.
    """
    lap = np.asarray(lap, dtype=float)
    if not is_symmetric(lap):
        raise NotSymmetric("Laplacian must be symmetric")

    w, u = linalg.eigh(lap)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    w = np.where((w < 0) & (w >= -CLIP_TOL * scale), 0.0, w)

    for col in range(u.shape[1]):
        nonzero = np.nonzero(np.abs(u[:, col]) > SIGN_TOL)[0]
        if nonzero.size and u[nonzero[0], col] < 0:
            u[:, col] = -u[:, col]

    return SpectralDecomposition(eigenvalues=w, eigenvectors=u)


def graph_spectrum(g: Graph) -> SpectralDecomposition:
    return eigendecompose(laplacian(g))


def smoothness(g: Graph, f) -> float:
    """Quadratic form f^T L f"""
    f = np.asarray(f, dtype=float)
    if f.shape != (g.n,):
        raise DimensionMismatch(f"Signal of shape {f.shape} on a {g.n}-vertex graph")
    return max(float(f @ laplacian(g) @ f), 0.0)


def graph_fourier_transform(decomp: SpectralDecomposition, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape[0] != decomp.n:
        raise DimensionMismatch(f"Signal of length {f.shape[0]}, spectrum of size {decomp.n}")
    return decomp.eigenvectors.T @ f


def inverse_graph_fourier_transform(decomp: SpectralDecomposition, coefficients) -> np.ndarray:
    c = np.asarray(coefficients, dtype=float)
    if c.shape[0] != decomp.n:
        raise DimensionMismatch(f"{c.shape[0]} coefficients, spectrum of size {decomp.n}")
    return decomp.eigenvectors @ c


def build_extended_adjacency(
    snapshots: Sequence[Graph],
    couplings: CouplingSpec,
) -> ExtendedGraph:
    """
    Stack snapshots into an extended graph

    - diagonal(alpha): B(t) = alpha*I
    - previous_adjacency: B(t) = A(t-1)
    - explicit: B(t) given, T-1 non-negative n x n matrices
    """
    if not snapshots:
        raise DimensionMismatch("At least one snapshot is required")
    n = snapshots[0].n
    for t, g in enumerate(snapshots):
        if g.n != n:
            raise DimensionMismatch(f"Snapshot {t} has {g.n} vertices, expected {n}")
    t_len = len(snapshots)

    if couplings.kind == CouplingKind.DIAGONAL:
        if couplings.alpha < 0:
            raise NegativeCoupling(f"Coupling weight {couplings.alpha} is negative")
        blocks = [couplings.alpha * np.eye(n) for _ in range(t_len - 1)]
    elif couplings.kind == CouplingKind.PREVIOUS_ADJACENCY:
        blocks = [np.array(snapshots[t - 1].adjacency) for t in range(1, t_len)]
    else:
        matrices = couplings.matrices or []
        if len(matrices) != t_len - 1:
            raise DimensionMismatch(
                f"{t_len} snapshots need {t_len - 1} coupling matrices, got {len(matrices)}"
            )
        blocks = []
        for m in matrices:
            b = np.asarray(m, dtype=float)
            if b.shape != (n, n):
                raise DimensionMismatch(f"Coupling matrix of shape {b.shape}, expected {(n, n)}")
            if np.any(b < 0):
                raise NegativeCoupling("Explicit coupling matrix has negative entries")
            blocks.append(b)

    logger.debug(f"Extended graph: n={n}, T={t_len}, coupling={couplings.kind.value}")
    return ExtendedGraph(
        diagonal_blocks=tuple(np.array(g.adjacency) for g in snapshots),
        coupling_blocks=tuple(blocks),
    )
