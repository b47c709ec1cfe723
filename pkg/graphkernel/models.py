"""
Data models for the graph kernel reconstruction toolkit

Pydantic models for everything that travels as JSON:
- Kernel specifications (spectral maps, transitions, temporal couplings)
- Solver configurations
- Experiment configurations and evaluation reports
"""
from datetime import datetime
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator


# ==================== Kernel specifications ====================


class SpectralMapKind(str, Enum):
    """Spectral weight functions r(lambda)"""
    DIFFUSION = "diffusion"
    P_STEP_RANDOM_WALK = "p_step_random_walk"
    REGULARIZED_LAPLACIAN = "regularized_laplacian"
    BANDLIMITED = "bandlimited"
    BAND_REJECT = "band_reject"


class SpectralMapSpec(BaseModel):
    """
    Spectral map of a Laplacian kernel

    JSON form: {"kind": "diffusion", "sigma2": 1.2}
    """
    kind: SpectralMapKind
    sigma2: Optional[float] = None
    a: Optional[float] = None
    p: Optional[float] = None
    beta: Optional[float] = None
    lambda_max: Optional[float] = None
    k: Optional[int] = None
    l: Optional[int] = None

    @model_validator(mode="after")
    def check_parameters(self) -> "SpectralMapSpec":
        kind = self.kind
        if kind in (SpectralMapKind.DIFFUSION, SpectralMapKind.REGULARIZED_LAPLACIAN):
            if self.sigma2 is None or self.sigma2 < 0:
                raise ValueError(f"{kind.value} requires sigma2 >= 0")
        elif kind == SpectralMapKind.P_STEP_RANDOM_WALK:
            if self.a is None or self.a < 2:
                raise ValueError("p_step_random_walk requires a >= 2")
            if self.p is None or self.p < 0:
                raise ValueError("p_step_random_walk requires p >= 0")
        elif kind == SpectralMapKind.BANDLIMITED:
            if self.beta is None or self.beta <= 0:
                raise ValueError("bandlimited requires beta > 0")
            if self.lambda_max is None:
                raise ValueError("bandlimited requires lambda_max")
        elif kind == SpectralMapKind.BAND_REJECT:
            if self.beta is None or self.beta <= 0:
                raise ValueError("band_reject requires beta > 0")
            if self.k is None or self.l is None or self.k < 1 or self.l < 0:
                raise ValueError("band_reject requires k >= 1 and l >= 0")
        return self

    @classmethod
    def diffusion(cls, sigma2: float) -> "SpectralMapSpec":
        return cls(kind=SpectralMapKind.DIFFUSION, sigma2=sigma2)

    @classmethod
    def p_step(cls, a: float, p: float) -> "SpectralMapSpec":
        return cls(kind=SpectralMapKind.P_STEP_RANDOM_WALK, a=a, p=p)

    @classmethod
    def regularized(cls, sigma2: float) -> "SpectralMapSpec":
        return cls(kind=SpectralMapKind.REGULARIZED_LAPLACIAN, sigma2=sigma2)

    @classmethod
    def bandlimited(cls, beta: float, lambda_max: float) -> "SpectralMapSpec":
        return cls(kind=SpectralMapKind.BANDLIMITED, beta=beta, lambda_max=lambda_max)

    @classmethod
    def band_reject(cls, k: int, l: int, beta: float) -> "SpectralMapSpec":
        return cls(kind=SpectralMapKind.BAND_REJECT, k=k, l=l, beta=beta)

    def describe(self) -> str:
        params = {
            key: value
            for key, value in self.model_dump(exclude={"kind"}).items()
            if value is not None
        }
        inner = ", ".join(f"{key}={value}" for key, value in params.items())
        return f"{self.kind.value}({inner})"


class CouplingKind(str, Enum):
    """Temporal coupling between consecutive snapshots of an extended graph"""
    DIAGONAL = "diagonal"
    PREVIOUS_ADJACENCY = "previous_adjacency"
    EXPLICIT = "explicit"


class CouplingSpec(BaseModel):
    kind: CouplingKind = CouplingKind.DIAGONAL
    alpha: float = 1.0
    # T-1 matrices B(2..T), only for kind=explicit
    matrices: Optional[List[List[List[float]]]] = None


class TransitionKind(str, Enum):
    """State transition of the spatio-temporal model"""
    SCALED_IDENTITY = "scaled_identity"
    SCALED_ADJACENCY = "scaled_adjacency"


class TransitionSpec(BaseModel):
    """
    Transition A(t,t-1) = alpha*I or alpha*A

    An optional instantaneous term A(t,t) turns the model into a structural VAR.
    """
    kind: TransitionKind = TransitionKind.SCALED_IDENTITY
    alpha: float = 1.0
    instantaneous: Optional["TransitionSpec"] = None


TransitionSpec.model_rebuild()


# ==================== Solver configurations ====================


class MklSolverConfig(BaseModel):
    """ADMM and alternating-minimization settings for multi-kernel learning"""
    rho_admm: float = Field(default=1.0, gt=0)
    max_iters: int = Field(default=20000, gt=0)
    tol_primal: float = Field(default=1e-6, gt=0)
    tol_dual: float = Field(default=1e-6, gt=0)
    alt_min_rounds: int = Field(default=100, gt=0)
    rho_theta: float = Field(default=1e-3, gt=0)
    # Raise instead of returning a flagged best iterate
    strict: bool = False
    trace_path: Optional[str] = None


class EpsSolverConfig(BaseModel):
    """ADMM settings for the epsilon-insensitive semi-parametric estimator"""
    rho: float = Field(default=1.0, gt=0)
    max_iters: int = Field(default=50000, gt=0)
    tol: float = Field(default=1e-6, gt=0)
    trace_path: Optional[str] = None


class ThetaSolverConfig(BaseModel):
    """Projected gradient settings for the online kernel-combination updates"""
    max_iters: int = Field(default=5000, gt=0)
    tol: float = Field(default=1e-6, gt=0)
    initial_step: float = Field(default=1.0, gt=0)


class KrigedConfig(BaseModel):
    """Regularization of the kriged Kalman filters"""
    mu1: float = Field(default=1.0, gt=0)
    mu2: float = Field(default=1.0, gt=0)
    rho_nu: float = Field(default=1e-3, gt=0)
    rho_eta: float = Field(default=1e-3, gt=0)
    theta_updates_per_slot: int = Field(default=1, ge=1)
    transition: TransitionSpec = Field(default_factory=TransitionSpec)
    # State-noise kernel(s) as multiples of the identity
    eta_scales: List[float] = Field(default_factory=lambda: [1.0])
    theta_solver: ThetaSolverConfig = Field(default_factory=ThetaSolverConfig)


# ==================== Experiments ====================


class EstimatorKind(str, Enum):
    KRR = "krr"
    BL = "bl"
    LMMSE = "lmmse"
    SP_SQUARE = "sp_square"
    SP_EPS = "sp_eps"
    P = "p"
    MKL_RS = "mkl_rs"
    MKL_KC = "mkl_kc"
    IE = "ie"
    BL_IE = "bl_ie"
    KKF = "kkf"
    KEKRIKF = "kekrikf"
    MKRIKF = "mkrikf"


STATIC_ESTIMATORS = {
    EstimatorKind.KRR, EstimatorKind.BL, EstimatorKind.LMMSE, EstimatorKind.SP_SQUARE,
    EstimatorKind.SP_EPS, EstimatorKind.P, EstimatorKind.MKL_RS, EstimatorKind.MKL_KC,
}
DYNAMIC_ESTIMATORS = {
    EstimatorKind.IE, EstimatorKind.BL_IE, EstimatorKind.KKF,
    EstimatorKind.KEKRIKF, EstimatorKind.MKRIKF,
}


class BasisKind(str, Enum):
    """Parametric basis of the semi-parametric estimators"""
    CLUSTER_INDICATORS = "cluster_indicators"
    EIGENVECTORS = "eigenvectors"
    FILE = "file"


class EstimatorSpec(BaseModel):
    """One estimator of an experiment with its hyperparameters"""
    kind: EstimatorKind
    name: Optional[str] = None
    mu: float = Field(default=1e-3, gt=0)
    kernel: Optional[SpectralMapSpec] = None
    dictionary: List[SpectralMapSpec] = Field(default_factory=list)

    # bl, bl_ie
    bandwidth: Optional[int] = Field(default=None, gt=0)

    # sp_square, sp_eps, p
    basis: BasisKind = BasisKind.CLUSTER_INDICATORS
    basis_size: Optional[int] = Field(default=None, gt=0)
    basis_path: Optional[str] = None
    epsilon: float = Field(default=0.0, ge=0)
    eps_solver: EpsSolverConfig = Field(default_factory=EpsSolverConfig)

    # lmmse: None means the trial's true noise variance
    noise_variance: Optional[float] = Field(default=None, ge=0)

    # mkl_rs, mkl_kc
    mkl: MklSolverConfig = Field(default_factory=MklSolverConfig)

    # kkf: space-time kernel from the extended graph
    coupling: CouplingSpec = Field(default_factory=CouplingSpec)
    time_sigma2: float = Field(default=1.0, ge=0)

    # kekrikf, mkrikf
    kriged: KrigedConfig = Field(default_factory=KrigedConfig)

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    @model_validator(mode="after")
    def check_requirements(self) -> "EstimatorSpec":
        kind = self.kind
        needs_kernel = {
            EstimatorKind.KRR, EstimatorKind.LMMSE, EstimatorKind.SP_SQUARE,
            EstimatorKind.SP_EPS, EstimatorKind.IE, EstimatorKind.KKF, EstimatorKind.KEKRIKF,
        }
        if kind in needs_kernel and self.kernel is None:
            raise ValueError(f"Estimator {kind.value} requires a kernel")
        if kind in (EstimatorKind.MKL_RS, EstimatorKind.MKL_KC, EstimatorKind.MKRIKF):
            if not self.dictionary:
                raise ValueError(f"Estimator {kind.value} requires a non-empty dictionary")
        if kind in (EstimatorKind.BL, EstimatorKind.BL_IE) and self.bandwidth is None:
            raise ValueError(f"Estimator {kind.value} requires a bandwidth")
        if kind in (EstimatorKind.SP_SQUARE, EstimatorKind.SP_EPS, EstimatorKind.P):
            if self.basis == BasisKind.EIGENVECTORS and self.basis_size is None:
                raise ValueError("An eigenvector basis requires basis_size")
            if self.basis == BasisKind.FILE and not self.basis_path:
                raise ValueError("A file basis requires basis_path")
        return self


class GraphSourceKind(str, Enum):
    FILE = "file"
    ER = "er"


class GraphSource(BaseModel):
    kind: GraphSourceKind = GraphSourceKind.ER
    path: Optional[str] = None
    n: int = Field(default=200, gt=0)
    edge_probability: float = Field(default=0.6, ge=0, le=1)

    @model_validator(mode="after")
    def check_path(self) -> "GraphSource":
        if self.kind == GraphSourceKind.FILE and not self.path:
            raise ValueError("A file graph source requires a path")
        return self


class SignalSourceKind(str, Enum):
    FILE = "file"
    SYNTHETIC = "synthetic"
    DYNAMIC = "dynamic"


class SignalSource(BaseModel):
    """
    Ground-truth signal of an experiment

    - file: vertex_index,value CSV (static) or t,vertex_index,value CSV (time series)
    - synthetic: bandlimited part plus cluster indicators
    - dynamic: trend + fluctuation model driven by a transition
    """
    kind: SignalSourceKind = SignalSourceKind.SYNTHETIC
    path: Optional[str] = None
    time_series: bool = False

    # synthetic
    n_eigs: int = Field(default=10, ge=0)
    clusters: int = Field(default=6, ge=0)

    # dynamic
    t_len: int = Field(default=20, gt=0)
    transition: TransitionSpec = Field(default_factory=TransitionSpec)
    kernel_nu: SpectralMapSpec = Field(
        default_factory=lambda: SpectralMapSpec.diffusion(1.0)
    )
    eta_scale: float = Field(default=1.0, ge=0)
    nu_scale: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def check_path(self) -> "SignalSource":
        if self.kind == SignalSourceKind.FILE and not self.path:
            raise ValueError("A file signal source requires a path")
        return self

    @property
    def is_dynamic(self) -> bool:
        return self.kind == SignalSourceKind.DYNAMIC or (
            self.kind == SignalSourceKind.FILE and self.time_series
        )


class SamplingSpec(BaseModel):
    """Sample sizes swept by an experiment (S, or S_t for every slot)"""
    sample_sizes: List[int] = Field(default_factory=lambda: [20, 40, 60, 80, 100])
    # Same vertex set at every slot (required by mkrikf)
    fixed_over_time: bool = True

    @model_validator(mode="after")
    def check_sizes(self) -> "SamplingSpec":
        if not self.sample_sizes:
            raise ValueError("sample_sizes must not be empty")
        if any(s < 0 for s in self.sample_sizes):
            raise ValueError("sample sizes must be non-negative")
        return self


class NoiseSpec(BaseModel):
    """
    Observation noise

    snr_db None means noise-free samples. Outliers hit each sample with
    probability outlier_probability, with the level given either as a variance
    or as an outlier SNR ||f||^2 / (N sigma_o^2) in dB.
    """
    snr_db: Optional[float] = None
    outlier_probability: float = Field(default=0.0, ge=0, le=1)
    outlier_snr_db: Optional[float] = None
    outlier_variance: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def check_outliers(self) -> "NoiseSpec":
        if self.outlier_snr_db is not None and self.outlier_variance is not None:
            raise ValueError("Give either outlier_snr_db or outlier_variance, not both")
        if self.outlier_probability > 0 and (
            self.outlier_snr_db is None and self.outlier_variance is None
        ):
            raise ValueError("Outliers require outlier_snr_db or outlier_variance")
        return self


class ExperimentConfig(BaseModel):
    """Full Monte Carlo experiment"""
    name: str = "experiment"
    graph: GraphSource = Field(default_factory=GraphSource)
    signal: SignalSource = Field(default_factory=SignalSource)
    estimators: List[EstimatorSpec]
    sampling: SamplingSpec = Field(default_factory=SamplingSpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    trials: int = Field(default=1, ge=1)
    seed: Optional[int] = None
    output: Optional[str] = None
    threads: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_estimators(self) -> "ExperimentConfig":
        if not self.estimators:
            raise ValueError("At least one estimator is required")
        labels = [e.label for e in self.estimators]
        if len(set(labels)) != len(labels):
            raise ValueError(f"Estimator labels must be unique: {labels}")
        dynamic = self.signal.is_dynamic
        for spec in self.estimators:
            if dynamic and spec.kind in STATIC_ESTIMATORS:
                raise ValueError(f"Estimator {spec.kind.value} needs a static signal")
            if not dynamic and spec.kind in DYNAMIC_ESTIMATORS:
                raise ValueError(f"Estimator {spec.kind.value} needs a time-varying signal")
            if spec.kind == EstimatorKind.MKRIKF and not self.sampling.fixed_over_time:
                raise ValueError("mkrikf requires sampling.fixed_over_time")
        return self


# ==================== Reports ====================


class TrialFailure(BaseModel):
    trial: int
    error_type: str
    message: str


class EstimatorResult(BaseModel):
    """NMSE of one estimator at one sample size over all trials"""
    estimator: str
    kind: EstimatorKind
    sample_size: int
    trial_nmse: List[Optional[float]] = Field(default_factory=list)
    mean_nmse: Optional[float] = None
    std_nmse: Optional[float] = None
    # Mean NMSE per slot for time-varying runs
    slot_nmse: Optional[List[float]] = None
    failures: List[TrialFailure] = Field(default_factory=list)
    runtime_seconds: float = 0.0


class EvaluationReport(BaseModel):
    """Outcome of run_experiment"""
    name: str
    seed: int
    trials: int
    created_at: datetime = Field(default_factory=datetime.utcnow)
    runtime_seconds: float = 0.0
    results: List[EstimatorResult] = Field(default_factory=list)
    config: ExperimentConfig
    unavailable_comparisons: List[str] = Field(default_factory=lambda: ["dlsr", "lms"])

    @property
    def all_failed(self) -> bool:
        return all(r.mean_nmse is None for r in self.results)

    def result(self, estimator: str, sample_size: int) -> Optional[EstimatorResult]:
        for r in self.results:
            if r.estimator == estimator and r.sample_size == sample_size:
                return r
        return None

    def best(self) -> Optional[EstimatorResult]:
        scored = [r for r in self.results if r.mean_nmse is not None]
        if not scored:
            return None
        return min(scored, key=lambda r: r.mean_nmse)


# ==================== API payloads ====================


class GraphPayload(BaseModel):
    """Dense symmetric adjacency matrix"""
    adjacency: List[List[float]]


class GraphSummary(BaseModel):
    n: int
    edge_count: int
    connected: bool
    eigenvalues: List[float]


class KernelRequest(GraphPayload):
    spec: SpectralMapSpec


class KernelResponse(BaseModel):
    provenance: str
    matrix: List[List[float]]
    spectrum: Optional[List[float]] = None


class Sample(BaseModel):
    vertex_index: int = Field(ge=0)
    value: float


class StaticReconstructRequest(GraphPayload):
    """Static reconstruction from samples of one signal"""
    estimator: EstimatorSpec
    samples: List[Sample]
    # Cluster count for a cluster-indicator basis
    clusters: Optional[int] = Field(default=None, ge=1)
    seed: int = 0


class ReconstructResponse(BaseModel):
    estimator: str
    estimate: List[float]
