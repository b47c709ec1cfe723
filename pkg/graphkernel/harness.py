"""
Experiment harness

- Synthetic graphs (Erdos-Renyi) and signals (bandlimited + cluster indicators,
  trend + fluctuation time series)
- Sampling with Gaussian noise at a target SNR and sparse outliers
- NMSE scoring and Monte Carlo experiments over estimators and sample sizes
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import networkx as nx
import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from graphkernel.config import get_settings
from graphkernel.data_io import (
    read_basis,
    read_graph,
    read_signal,
    read_time_series_signal,
    write_report,
)
from graphkernel.dynamic import (
    KkfParameters,
    TimeSeriesObservations,
    ie_run,
    kkf_parameters,
    space_time_kkf,
)
from graphkernel.errors import (
    ConfigError,
    DimensionMismatch,
    DisconnectedDegenerate,
    GraphKernelError,
    UndefinedSnr,
    ZeroReference,
)
from graphkernel.graph import (
    Graph,
    SpectralDecomposition,
    build_extended_adjacency,
    graph_spectrum,
    validate_graph,
)
from graphkernel.kernels import (
    KernelDictionary,
    KernelMatrix,
    dictionary_from_specs,
    laplacian_kernel,
    scaled_identity_dictionary,
    space_time_inverse,
)
from graphkernel.kriged import (
    SpatioTemporalModel,
    kekrikf_run,
    mkrikf_run,
    svarm_to_varm,
    theta_history,
    transition_matrix,
)
from graphkernel.linalg import psd_sqrt
from graphkernel.mkl import kernel_combination_fit, rkhs_superposition_fit
from graphkernel.models import (
    BasisKind,
    EstimatorKind,
    EstimatorResult,
    EstimatorSpec,
    EvaluationReport,
    ExperimentConfig,
    GraphSourceKind,
    NoiseSpec,
    SignalSourceKind,
    TrialFailure,
)
from graphkernel.static_estimators import (
    Observation,
    ParametricBasis,
    SamplingMask,
    bl_estimate,
    krr_fit,
    lmmse_estimate,
    parametric_fit,
    semiparametric_fit_eps,
    semiparametric_fit_square,
)

logger = logging.getLogger(__name__)

KMEANS_RESTARTS = 100


# ==================== Generators ====================


def generate_er_graph(n: int, p: float, seed: int) -> Graph:
    """Erdos-Renyi graph with unit weights, deterministic given the seed"""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Edge probability must lie in [0, 1], got {p}")
    g = nx.gnp_random_graph(n, p, seed=seed)
    return validate_graph(nx.to_numpy_array(g, nodelist=range(n), weight=None))


def spectral_clusters(decomp: SpectralDecomposition, k: int, seed: int) -> np.ndarray:
    """
    Balanced spectral clustering

    k-means on the row-normalized first k Laplacian eigenvectors, then every
    vertex is assigned to a centroid under quotas of floor(n/k) or ceil(n/k)
    vertices, so each cluster indicator is sampled often enough to keep the
    parametric basis full rank.
    """
    if k < 1 or k > decomp.n:
        raise DimensionMismatch(f"Cannot form {k} clusters on {decomp.n} vertices")
    if k == 1:
        return np.zeros(decomp.n, dtype=int)
    features = decomp.basis(k)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    features = features / np.where(norms > 0, norms, 1.0)
    if np.unique(features.round(12), axis=0).shape[0] < k:
        raise DisconnectedDegenerate(f"Fewer than {k} distinct spectral embeddings on {decomp.n} vertices")

    state = int(np.random.SeedSequence(seed).generate_state(1)[0])
    kmeans = KMeans(n_clusters=k, n_init=KMEANS_RESTARTS, random_state=state).fit(features)

    # Larger k-means clusters get the ceil(n/k) quotas
    order = np.argsort(-np.bincount(kmeans.labels_, minlength=k), kind="stable")
    quotas = np.full(k, decomp.n // k)
    quotas[order[:decomp.n % k]] += 1
    slot_owner = np.repeat(np.arange(k), quotas)

    dist = ((features[:, None, :] - kmeans.cluster_centers_[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(dist[:, slot_owner])
    labels = np.empty(decomp.n, dtype=int)
    labels[rows] = slot_owner[cols]
    logger.debug(f"Spectral clustering sizes {np.bincount(labels, minlength=k).tolist()}")
    return labels


def cluster_indicators(labels: np.ndarray, k: int) -> np.ndarray:
    """n x k matrix of cluster indicator vectors"""
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def generate_synthetic_signal(
    decomp: SpectralDecomposition,
    n_eigs: int = 10,
    clusters: int = 6,
    seed: int = 0,
    indicators: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    sum_{i < n_eigs} gamma_i u_i + sum_{c < clusters} delta_c 1_{V_c}

    gamma and delta are standard normal. Indicators come from spectral
    clustering unless given.
    """
    rng = np.random.default_rng(seed)
    f = decomp.basis(n_eigs) @ rng.standard_normal(n_eigs)
    if clusters > 0:
        if indicators is None:
            indicators = cluster_indicators(spectral_clusters(decomp, clusters, seed), clusters)
        if indicators.shape != (decomp.n, clusters):
            raise DimensionMismatch(f"Indicators of shape {indicators.shape}")
        f = f + indicators @ rng.standard_normal(clusters)
    return f


@dataclass
class DynamicSignal:
    """Trend and fluctuation of a time-varying signal, T x n each"""
    chi: np.ndarray
    nu: np.ndarray

    @property
    def f(self) -> np.ndarray:
        return self.chi + self.nu


def generate_dynamic_signal(
    transition: np.ndarray,
    kernel_nu: KernelMatrix,
    t_len: int,
    eta_scale: float = 1.0,
    nu_scale: float = 1.0,
    seed: int = 0,
) -> DynamicSignal:
    """
    chi(t) = A chi(t-1) + eta(t), nu(t) independent

    eta ~ N(0, eta_scale I), nu ~ N(0, nu_scale K_nu).
    """
    rng = np.random.default_rng(seed)
    n = kernel_nu.n
    root, _ = psd_sqrt(kernel_nu.matrix)
    chi = np.zeros((t_len, n))
    nu = np.zeros((t_len, n))
    previous = np.zeros(n)
    for t in range(t_len):
        previous = transition @ previous + np.sqrt(eta_scale) * rng.standard_normal(n)
        chi[t] = previous
        nu[t] = np.sqrt(nu_scale) * (root @ rng.standard_normal(n))
    return DynamicSignal(chi=chi, nu=nu)


# ==================== Sampling and scoring ====================


def noise_variance(f: np.ndarray, snr_db: Optional[float]) -> float:
    """sigma^2 solving SNR = ||f||^2 / (N sigma^2); 0 for snr_db None or +inf"""
    if snr_db is None or np.isposinf(snr_db):
        return 0.0
    energy = float(np.sum(np.asarray(f) ** 2))
    if energy == 0.0:
        raise UndefinedSnr("SNR is undefined for an all-zero signal")
    return energy / (np.asarray(f).size * 10.0 ** (snr_db / 10.0))


def outlier_variance(f: np.ndarray, noise: NoiseSpec) -> float:
    if noise.outlier_variance is not None:
        return noise.outlier_variance
    if noise.outlier_snr_db is not None:
        return noise_variance(f, noise.outlier_snr_db)
    return 0.0


def _draw_mask(n: int, s: int, rng: np.random.Generator) -> SamplingMask:
    if not 0 <= s <= n:
        raise DimensionMismatch(f"Cannot sample {s} of {n} vertices")
    return SamplingMask(indices=np.sort(rng.choice(n, size=s, replace=False)), n=n)


def _corrupt(
    clean: np.ndarray,
    sigma2: float,
    outlier: Optional[Tuple[float, float]],
    rng: np.random.Generator,
) -> np.ndarray:
    y = clean + np.sqrt(sigma2) * rng.standard_normal(clean.shape[0])
    if outlier is not None and outlier[0] > 0:
        p, sigma2_o = outlier
        hits = rng.random(clean.shape[0]) < p
        y = y + hits * np.sqrt(sigma2_o) * rng.standard_normal(clean.shape[0])
    return y


def sample_and_corrupt(
    f,
    s: int,
    snr_db: Optional[float],
    outlier: Optional[Tuple[float, float]] = None,
    seed=0,
) -> Observation:
    """
    Uniformly sample s vertices and add noise

    Gaussian noise at snr_db (None or +inf for none); with outlier = (p, var)
    each sample independently receives extra N(0, var) noise with probability p.
    """
    f = np.asarray(f, dtype=float)
    if s < 1:
        raise DimensionMismatch(f"Sample count must be at least 1, got {s}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma2 = noise_variance(f, snr_db)
    mask = _draw_mask(f.shape[0], s, rng)
    return Observation(mask=mask, y=_corrupt(mask.sample(f), sigma2, outlier, rng))


def sample_time_series(
    signal: np.ndarray,
    s: int,
    snr_db: Optional[float],
    fixed_mask: bool = True,
    outlier: Optional[Tuple[float, float]] = None,
    seed=0,
) -> TimeSeriesObservations:
    """Sample every slot of a T x n signal; the SNR refers to the whole series"""
    signal = np.asarray(signal, dtype=float)
    t_len, n = signal.shape
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma2 = noise_variance(signal, snr_db)
    mask = _draw_mask(n, s, rng)
    slots = []
    for t in range(t_len):
        if not fixed_mask and t > 0:
            mask = _draw_mask(n, s, rng)
        slots.append(Observation(mask=mask, y=_corrupt(mask.sample(signal[t]), sigma2, outlier, rng)))
    return TimeSeriesObservations(slots=tuple(slots))


def nmse(f_hat, f) -> float:
    """||f_hat - f||^2 / ||f||^2"""
    f_hat = np.asarray(f_hat, dtype=float)
    f = np.asarray(f, dtype=float)
    if f_hat.shape != f.shape:
        raise DimensionMismatch(f"Estimate of shape {f_hat.shape}, reference {f.shape}")
    reference = float(np.sum(f ** 2))
    if reference == 0.0:
        raise ZeroReference("NMSE is undefined for an all-zero reference")
    return float(np.sum((f_hat - f) ** 2)) / reference


def slot_nmse(f_hat: np.ndarray, f: np.ndarray) -> List[float]:
    """Per-slot NMSE; NaN where the reference slot is zero"""
    out = []
    for estimate, reference in zip(f_hat, f):
        try:
            out.append(nmse(estimate, reference))
        except ZeroReference:
            out.append(float("nan"))
    return out


# ==================== Experiments ====================


@dataclass
class ExperimentContext:
    """Everything shared by the trials of one run"""
    config: Optional[ExperimentConfig]
    seed: int
    graph: Graph
    decomp: SpectralDecomposition
    indicators: Optional[np.ndarray] = None
    fixed_signal: Optional[np.ndarray] = None
    kernels: Dict[str, KernelMatrix] = field(default_factory=dict)
    dictionaries: Dict[str, KernelDictionary] = field(default_factory=dict)
    bases: Dict[str, ParametricBasis] = field(default_factory=dict)
    kkf_params: Dict[str, KkfParameters] = field(default_factory=dict)
    signal_transition: Optional[np.ndarray] = None
    signal_kernel_nu: Optional[KernelMatrix] = None

    @property
    def n(self) -> int:
        return self.graph.n


@dataclass
class TrialOutcome:
    estimator: str
    sample_size: int
    nmse: Optional[float] = None
    slot_nmse: Optional[List[float]] = None
    failure: Optional[TrialFailure] = None
    runtime_seconds: float = 0.0


def _suffixed(path: Optional[str], trial: int, s: int) -> Optional[str]:
    if path is None:
        return None
    p = Path(path)
    return str(p.with_name(f"{p.stem}_trial{trial}_S{s}{p.suffix}"))


def trial_trace_spec(spec: EstimatorSpec, trial: int, s: int) -> EstimatorSpec:
    """Copy of spec whose solver traces are written to one file per trial and sample size"""
    if spec.mkl.trace_path is None and spec.eps_solver.trace_path is None:
        return spec
    return spec.model_copy(update={
        "mkl": spec.mkl.model_copy(update={"trace_path": _suffixed(spec.mkl.trace_path, trial, s)}),
        "eps_solver": spec.eps_solver.model_copy(
            update={"trace_path": _suffixed(spec.eps_solver.trace_path, trial, s)}
        ),
    })


class ExperimentRunner:
    """Runs Monte Carlo experiments with per-trial seeding independent of scheduling"""

    def __init__(self):
        self.settings = get_settings()

    # ----- setup -----

    def _check_files(self, cfg: ExperimentConfig):
        paths = []
        if cfg.graph.kind == GraphSourceKind.FILE:
            paths.append(cfg.graph.path)
        if cfg.signal.kind == SignalSourceKind.FILE:
            paths.append(cfg.signal.path)
        paths.extend(e.basis_path for e in cfg.estimators if e.basis == BasisKind.FILE and e.basis_path)
        missing = [p for p in paths if not Path(p).exists()]
        if missing:
            raise ConfigError(f"Missing input files: {missing}")

    def build_context(self, cfg: ExperimentConfig) -> ExperimentContext:
        self._check_files(cfg)
        seed = cfg.seed if cfg.seed is not None else self.settings.default_seed
        setup = np.random.SeedSequence(seed, spawn_key=(2 ** 31,))
        setup_seed = int(setup.generate_state(1)[0])

        if cfg.graph.kind == GraphSourceKind.FILE:
            graph = read_graph(cfg.graph.path)
        else:
            graph = generate_er_graph(cfg.graph.n, cfg.graph.edge_probability, setup_seed)
        decomp = graph_spectrum(graph)
        context = ExperimentContext(config=cfg, seed=seed, graph=graph, decomp=decomp)

        if max(cfg.sampling.sample_sizes) > graph.n:
            raise ConfigError(f"Sample sizes exceed the {graph.n} vertices")

        signal = cfg.signal
        needs_indicators = signal.kind == SignalSourceKind.SYNTHETIC and signal.clusters > 0
        if needs_indicators or any(
            e.basis == BasisKind.CLUSTER_INDICATORS
            and e.kind in (EstimatorKind.SP_SQUARE, EstimatorKind.SP_EPS, EstimatorKind.P)
            for e in cfg.estimators
        ):
            if signal.clusters < 1:
                raise ConfigError("A cluster-indicator basis needs signal.clusters >= 1")
            labels = spectral_clusters(decomp, signal.clusters, setup_seed)
            context.indicators = cluster_indicators(labels, signal.clusters)

        if signal.kind == SignalSourceKind.FILE:
            if signal.time_series:
                context.fixed_signal = read_time_series_signal(signal.path, graph.n)
            else:
                context.fixed_signal = read_signal(signal.path, graph.n)
        elif signal.kind == SignalSourceKind.DYNAMIC:
            context.signal_transition = transition_matrix(signal.transition, graph.adjacency)
            if signal.transition.instantaneous is not None:
                context.signal_transition = svarm_to_varm(
                    transition_matrix(signal.transition.instantaneous, graph.adjacency),
                    context.signal_transition,
                )
            context.signal_kernel_nu = laplacian_kernel(decomp, signal.kernel_nu)

        for spec in cfg.estimators:
            self.prepare_estimator(context, spec)

        logger.info(
            f"Experiment '{cfg.name}': n={graph.n}, edges={graph.edge_count}, "
            f"{len(cfg.estimators)} estimators, {cfg.trials} trials"
        )
        return context

    def prepare_estimator(
        self,
        context: ExperimentContext,
        spec: EstimatorSpec,
        t_len: Optional[int] = None,
    ):
        label = spec.label
        if spec.kernel is not None:
            context.kernels[label] = laplacian_kernel(context.decomp, spec.kernel)
        if spec.dictionary:
            context.dictionaries[label] = dictionary_from_specs(context.decomp, spec.dictionary)

        if spec.kind in (EstimatorKind.SP_SQUARE, EstimatorKind.SP_EPS, EstimatorKind.P):
            if spec.basis == BasisKind.CLUSTER_INDICATORS:
                context.bases[label] = ParametricBasis(context.indicators)
            elif spec.basis == BasisKind.EIGENVECTORS:
                context.bases[label] = ParametricBasis(context.decomp.basis(spec.basis_size))
            else:
                context.bases[label] = read_basis(spec.basis_path)

        if spec.kind == EstimatorKind.KKF:
            t_len = t_len or self._horizon(context)
            ext = build_extended_adjacency([context.graph] * t_len, spec.coupling)
            inv = space_time_inverse(ext, [context.kernels[label]] * t_len, spec.time_sigma2)
            context.kkf_params[label] = kkf_parameters(inv)

    def _horizon(self, context: ExperimentContext) -> int:
        if context.fixed_signal is not None and context.fixed_signal.ndim == 2:
            return context.fixed_signal.shape[0]
        return context.config.signal.t_len

    # ----- trials -----

    def _trial_signal(self, context: ExperimentContext, rng: np.random.Generator) -> np.ndarray:
        signal = context.config.signal
        if context.fixed_signal is not None:
            return context.fixed_signal
        seed = int(rng.integers(2 ** 63))
        if signal.kind == SignalSourceKind.SYNTHETIC:
            return generate_synthetic_signal(
                context.decomp, signal.n_eigs, signal.clusters, seed, indicators=context.indicators
            )
        return generate_dynamic_signal(
            context.signal_transition,
            context.signal_kernel_nu,
            signal.t_len,
            eta_scale=signal.eta_scale,
            nu_scale=signal.nu_scale,
            seed=seed,
        ).f

    def estimate_static(
        self,
        context: ExperimentContext,
        spec: EstimatorSpec,
        obs: Observation,
        sigma2: float,
    ) -> np.ndarray:
        label, kind = spec.label, spec.kind
        if kind == EstimatorKind.KRR:
            return krr_fit(context.kernels[label], obs, spec.mu)[1]
        if kind == EstimatorKind.BL:
            return bl_estimate(context.decomp, obs, spec.bandwidth)
        if kind == EstimatorKind.LMMSE:
            variance = spec.noise_variance if spec.noise_variance is not None else sigma2
            return lmmse_estimate(context.kernels[label], obs, variance)
        if kind == EstimatorKind.P:
            return parametric_fit(context.bases[label], obs).f_hat
        if kind == EstimatorKind.SP_SQUARE:
            return semiparametric_fit_square(
                context.kernels[label], context.bases[label], obs, spec.mu
            ).f_hat
        if kind == EstimatorKind.SP_EPS:
            return semiparametric_fit_eps(
                context.kernels[label], context.bases[label], obs, spec.mu,
                spec.epsilon, spec.eps_solver,
            ).f_hat
        if kind == EstimatorKind.MKL_RS:
            return rkhs_superposition_fit(context.dictionaries[label], obs, spec.mu, spec.mkl)[1]
        if kind == EstimatorKind.MKL_KC:
            return kernel_combination_fit(context.dictionaries[label], obs, spec.mu, spec.mkl).f_hat
        raise ConfigError(f"Estimator {kind.value} is not a static estimator")

    def estimate_dynamic(
        self,
        context: ExperimentContext,
        spec: EstimatorSpec,
        obs: TimeSeriesObservations,
        extras: Optional[dict] = None,
    ) -> np.ndarray:
        """T x n estimates; extras, if given, receives kkf_params or theta_history"""
        label, kind = spec.label, spec.kind
        if kind == EstimatorKind.IE:
            return ie_run([context.kernels[label]] * obs.t_len, obs, spec.mu)
        if kind == EstimatorKind.BL_IE:
            out = np.zeros((obs.t_len, obs.n))
            for t, slot in enumerate(obs.slots):
                if slot.size >= spec.bandwidth:
                    out[t] = bl_estimate(context.decomp, slot, spec.bandwidth)
            return out
        if kind == EstimatorKind.KKF:
            if extras is not None:
                extras["kkf_params"] = context.kkf_params[label]
            return space_time_kkf(None, obs, spec.mu, params=context.kkf_params[label])

        kriged = spec.kriged
        adjacency = np.array(context.graph.adjacency)
        transition = transition_matrix(kriged.transition, adjacency)
        instantaneous = None
        if kriged.transition.instantaneous is not None:
            instantaneous = transition_matrix(kriged.transition.instantaneous, adjacency)
        if kind == EstimatorKind.KEKRIKF:
            eta = scaled_identity_dictionary(obs.n, kriged.eta_scales[:1]).members[0]
            model = SpatioTemporalModel(
                transition=transition,
                kernel_nu=context.kernels[label],
                kernel_eta=eta,
                mu1=kriged.mu1,
                mu2=kriged.mu2,
                instantaneous=instantaneous,
            )
            return np.vstack([s.f_hat for s in kekrikf_run(model, obs)])
        if kind == EstimatorKind.MKRIKF:
            dict_eta = scaled_identity_dictionary(obs.n, kriged.eta_scales, context.decomp)
            steps = mkrikf_run(
                obs, context.dictionaries[label], dict_eta, transition, kriged, instantaneous
            )
            if extras is not None:
                extras["theta_history"] = theta_history(steps)
            return np.vstack([s.state.f_hat for s in steps])
        raise ConfigError(f"Estimator {kind.value} is not a time-varying estimator")

    def run_trial(self, context: ExperimentContext, trial: int) -> List[TrialOutcome]:
        cfg = context.config
        rng = np.random.default_rng(np.random.SeedSequence(context.seed, spawn_key=(trial,)))
        outcomes = []
        try:
            f = self._trial_signal(context, rng)
            sigma2 = noise_variance(f, cfg.noise.snr_db)
            outlier = None
            if cfg.noise.outlier_probability > 0:
                outlier = (cfg.noise.outlier_probability, outlier_variance(f, cfg.noise))
        except GraphKernelError as e:
            logger.error(f"Trial {trial}: signal generation failed: {e}")
            failure = TrialFailure(trial=trial, error_type=type(e).__name__, message=str(e))
            return [
                TrialOutcome(estimator=spec.label, sample_size=s, failure=failure)
                for s in cfg.sampling.sample_sizes for spec in cfg.estimators
            ]

        for s in cfg.sampling.sample_sizes:
            sample_rng = np.random.default_rng(
                np.random.SeedSequence(context.seed, spawn_key=(trial, s))
            )
            try:
                if f.ndim == 1:
                    obs = sample_and_corrupt(f, s, cfg.noise.snr_db, outlier, seed=sample_rng)
                else:
                    obs = sample_time_series(
                        f, s, cfg.noise.snr_db, cfg.sampling.fixed_over_time, outlier, seed=sample_rng
                    )
            except (GraphKernelError, ValueError) as e:
                logger.error(f"Trial {trial}, S={s}: sampling failed: {type(e).__name__}: {e}")
                failure = TrialFailure(trial=trial, error_type=type(e).__name__, message=str(e))
                outcomes.extend(
                    TrialOutcome(estimator=spec.label, sample_size=s, failure=failure)
                    for spec in cfg.estimators
                )
                continue

            for spec in cfg.estimators:
                spec = trial_trace_spec(spec, trial, s)
                started = time.time()
                outcome = TrialOutcome(estimator=spec.label, sample_size=s)
                try:
                    if f.ndim == 1:
                        f_hat = self.estimate_static(context, spec, obs, sigma2)
                    else:
                        f_hat = self.estimate_dynamic(context, spec, obs)
                        outcome.slot_nmse = slot_nmse(f_hat, f)
                    outcome.nmse = nmse(f_hat, f)
                except (GraphKernelError, ValueError) as e:
                    logger.error(f"Trial {trial}, {spec.label}, S={s}: {type(e).__name__}: {e}")
                    outcome.failure = TrialFailure(
                        trial=trial, error_type=type(e).__name__, message=str(e)
                    )
                outcome.runtime_seconds = time.time() - started
                outcomes.append(outcome)
        return outcomes

    # ----- aggregation -----

    def _aggregate(
        self,
        cfg: ExperimentConfig,
        per_trial: List[List[TrialOutcome]],
    ) -> List[EstimatorResult]:
        results = []
        for spec in cfg.estimators:
            for s in cfg.sampling.sample_sizes:
                matching = [
                    o for outcomes in per_trial for o in outcomes
                    if o.estimator == spec.label and o.sample_size == s
                ]
                values = [o.nmse for o in matching]
                scored = np.array([v for v in values if v is not None])
                curves = [o.slot_nmse for o in matching if o.slot_nmse is not None]
                slot_curve = None
                if curves:
                    with np.errstate(all="ignore"):
                        mean_curve = np.nanmean(np.array(curves), axis=0)
                    slot_curve = [float(v) for v in mean_curve]
                results.append(EstimatorResult(
                    estimator=spec.label,
                    kind=spec.kind,
                    sample_size=s,
                    trial_nmse=values,
                    mean_nmse=float(scored.mean()) if scored.size else None,
                    std_nmse=float(scored.std()) if scored.size else None,
                    slot_nmse=slot_curve,
                    failures=[o.failure for o in matching if o.failure is not None],
                    runtime_seconds=float(sum(o.runtime_seconds for o in matching)),
                ))
        return results

    def run(self, cfg: ExperimentConfig) -> EvaluationReport:
        """Run all trials; failed trials are recorded, never abort the run"""
        started = time.time()
        context = self.build_context(cfg)
        threads = max(1, cfg.threads or self.settings.threads)

        if threads == 1:
            per_trial = [self.run_trial(context, trial) for trial in range(cfg.trials)]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                per_trial = list(pool.map(lambda k: self.run_trial(context, k), range(cfg.trials)))

        report = EvaluationReport(
            name=cfg.name,
            seed=context.seed,
            trials=cfg.trials,
            runtime_seconds=time.time() - started,
            results=self._aggregate(cfg, per_trial),
            config=cfg,
        )
        best = report.best()
        if best is not None:
            logger.info(
                f"Experiment '{cfg.name}' done in {report.runtime_seconds:.1f}s; best: "
                f"{best.estimator} at S={best.sample_size} with NMSE {best.mean_nmse:.4f}"
            )
        else:
            logger.error(f"Experiment '{cfg.name}': every trial failed")

        if cfg.output:
            write_report(report, cfg.output)
        return report


# Singleton instance
_runner: Optional[ExperimentRunner] = None


def get_runner() -> ExperimentRunner:
    """Get the experiment runner singleton"""
    global _runner
    if _runner is None:
        _runner = ExperimentRunner()
    return _runner


def run_experiment(cfg: ExperimentConfig) -> EvaluationReport:
    return get_runner().run(cfg)


def _single_context(
    graph: Graph,
    spec: EstimatorSpec,
    clusters: Optional[int],
    seed: int,
) -> ExperimentContext:
    context = ExperimentContext(config=None, seed=seed, graph=graph, decomp=graph_spectrum(graph))
    if spec.basis == BasisKind.CLUSTER_INDICATORS and spec.kind in (
        EstimatorKind.SP_SQUARE, EstimatorKind.SP_EPS, EstimatorKind.P
    ):
        if clusters is None:
            raise ConfigError("A cluster-indicator basis needs a cluster count")
        labels = spectral_clusters(context.decomp, clusters, seed)
        context.indicators = cluster_indicators(labels, clusters)
    return context


def reconstruct_static(
    graph: Graph,
    spec: EstimatorSpec,
    obs: Observation,
    clusters: Optional[int] = None,
    seed: int = 0,
) -> np.ndarray:
    """Run one static estimator on one observation"""
    runner = get_runner()
    context = _single_context(graph, spec, clusters, seed)
    runner.prepare_estimator(context, spec)
    sigma2 = spec.noise_variance if spec.noise_variance is not None else 0.0
    return runner.estimate_static(context, spec, obs, sigma2)


def reconstruct_dynamic(
    graph: Graph,
    spec: EstimatorSpec,
    obs: TimeSeriesObservations,
    seed: int = 0,
    extras: Optional[dict] = None,
) -> np.ndarray:
    """Run one time-varying estimator on a time series; returns T x n estimates"""
    runner = get_runner()
    context = _single_context(graph, spec, None, seed)
    runner.prepare_estimator(context, spec, t_len=obs.t_len)
    return runner.estimate_dynamic(context, spec, obs, extras)
