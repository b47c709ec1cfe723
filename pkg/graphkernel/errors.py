"""
Exception hierarchy for the graph kernel reconstruction toolkit

Numerical routines raise these; the harness, the CLI and the HTTP service
catch them and translate them into per-trial failures, exit codes or HTTP
responses.
"""
from typing import Optional, Tuple


class GraphKernelError(Exception):
    """Base class for every error raised by the toolkit"""


# ==================== Graphs ====================


class GraphError(GraphKernelError):
    """Invalid graph input"""


class _IndexedGraphError(GraphError):
    """Graph error located at an index pair"""

    def __init__(self, message: str, index: Tuple[int, int]):
        super().__init__(f"{message} at {index}")
        self.index = index


class AsymmetricAdjacency(_IndexedGraphError):
    def __init__(self, index: Tuple[int, int]):
        super().__init__("Adjacency is not symmetric", index)


class NegativeWeight(_IndexedGraphError):
    def __init__(self, index: Tuple[int, int]):
        super().__init__("Negative edge weight", index)


class SelfLoop(_IndexedGraphError):
    def __init__(self, index: Tuple[int, int]):
        super().__init__("Self-loop", index)


class NotSymmetric(GraphError):
    """A matrix that must be symmetric is not"""


class DimensionMismatch(GraphKernelError):
    """Operands have incompatible shapes"""


class NegativeCoupling(GraphError):
    """Temporal coupling weight below zero"""


# ==================== Kernels ====================


class KernelError(GraphKernelError):
    """Invalid kernel construction or evaluation"""


class PoleAtEigenvalue(KernelError):
    """Spectral map has a pole at a Laplacian eigenvalue"""


class InvalidSpectralValue(KernelError):
    """Spectral map produced a negative or non-finite weight"""


class NotPositiveSemidefinite(KernelError):
    """Kernel matrix has a significantly negative eigenvalue"""


class NotPositiveDefinite(KernelError):
    """Cholesky factorization failed where a PD matrix is required"""


class NegativeCoefficient(KernelError):
    """Kernel combination coefficient below zero"""


class OutOfRange(KernelError):
    """Vector has a component outside the range of the kernel"""


class EmptyHistory(KernelError):
    """Covariance kernel requested from an empty history"""


# ==================== Estimation ====================


class EstimationError(GraphKernelError):
    """Failure inside an estimator"""


class SingularSystem(EstimationError):
    """Linear system could not be factorized even after jitter"""


class RankDeficient(EstimationError):
    """Sampled eigenvector matrix lacks full column rank"""


class RankDeficientBasis(EstimationError):
    """Sampled parametric basis lacks full column rank"""


class SolverDidNotConverge(EstimationError):
    """Iterative solver hit its iteration cap"""

    def __init__(self, message: str, iterations: Optional[int] = None):
        super().__init__(message)
        self.iterations = iterations


class DidNotConverge(SolverDidNotConverge):
    """ADMM residuals stayed above tolerance at the iteration cap"""


class EmptySlot(EstimationError):
    """Instantaneous estimate requested for a slot without samples"""


class SingularInnovation(EstimationError):
    """Innovation matrix of a Kalman-type update is singular"""


class SingularInstantaneous(EstimationError):
    """I - A(t,t) is singular in a structural VAR model"""


class SingularCombination(EstimationError):
    """Kernel combination stays singular along the theta path"""


# ==================== Harness ====================


class HarnessError(GraphKernelError):
    """Experiment harness failure"""


class UndefinedSnr(HarnessError):
    """SNR requested for an all-zero signal"""


class ZeroReference(HarnessError):
    """NMSE requested against an all-zero reference"""


class DisconnectedDegenerate(HarnessError):
    """Spectral clustering produced an empty cluster"""


class ConfigError(HarnessError):
    """Experiment configuration is inconsistent"""
