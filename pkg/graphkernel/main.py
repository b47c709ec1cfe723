"""
Graph Kernel Reconstruction - FastAPI Backend

Serves the reconstruction toolkit over HTTP:
- Graph validation and Laplacian spectra
- Laplacian kernel construction
- Static reconstruction from vertex samples
- Monte Carlo experiments with stored evaluation reports

API Documentation available at /docs
"""
import logging
from contextlib import asynccontextmanager
from typing import List

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware

from graphkernel import __version__
from graphkernel.config import get_settings
from graphkernel.database import close_db, get_report_store, init_db
from graphkernel.errors import ConfigError, GraphKernelError
from graphkernel.graph import graph_spectrum, validate_graph
from graphkernel.harness import reconstruct_static, run_experiment
from graphkernel.kernels import laplacian_kernel
from graphkernel.models import (
    BasisKind,
    EstimatorSpec,
    EvaluationReport,
    ExperimentConfig,
    GraphPayload,
    GraphSummary,
    KernelRequest,
    KernelResponse,
    ReconstructResponse,
    StaticReconstructRequest,
)
from graphkernel.static_estimators import Observation, SamplingMask

# Configure logging
logging.basicConfig(
    level=get_settings().log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def _unprocessable(e: Exception) -> HTTPException:
    logger.error(f"{type(e).__name__}: {e}")
    return HTTPException(status_code=422, detail={"error": type(e).__name__, "message": str(e)})


def _reject_file_access(estimators: List[EstimatorSpec]):
    """No filesystem access through the API: refuse basis files and solver traces"""
    for spec in estimators:
        if spec.basis == BasisKind.FILE or spec.basis_path:
            raise ConfigError(f"{spec.label}: basis files are not available over HTTP")
        if spec.mkl.trace_path or spec.eps_solver.trace_path:
            raise ConfigError(f"{spec.label}: solver traces are not available over HTTP")


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Open the report store on startup, close it on shutdown"""
    settings = get_settings()
    logger.info(f"Starting graph kernel service ({settings.environment})")
    init_db()
    yield
    close_db()


# Create FastAPI app
app = FastAPI(
    title="Graph Kernel Reconstruction",
    description="""
    Reconstruction of graph signals from samples at a subset of vertices.

    ## Features
    - Laplacian kernels (diffusion, p-step random walk, regularized, bandlimited, band-reject)
    - Kernel ridge regression, LMMSE, bandlimited and semi-parametric estimators
    - Multi-kernel learning (RKHS superposition, kernel combination)
    - Kernel Kalman filtering for time-varying signals
    - Monte Carlo NMSE experiments
    """,
    version=__version__,
    lifespan=lifespan
)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ==================== API Endpoints ====================

@app.get("/api/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "version": __version__}


@app.post("/api/graph/validate", response_model=GraphSummary)
def validate_graph_endpoint(payload: GraphPayload):
    """Validate an adjacency matrix and return its Laplacian spectrum"""
    try:
        graph = validate_graph(np.asarray(payload.adjacency, dtype=float))
        decomp = graph_spectrum(graph)
    except GraphKernelError as e:
        raise _unprocessable(e)
    return GraphSummary(
        n=graph.n,
        edge_count=graph.edge_count,
        connected=graph.is_connected(),
        eigenvalues=[float(v) for v in decomp.eigenvalues],
    )


@app.post("/api/kernel/build", response_model=KernelResponse)
def build_kernel(request: KernelRequest):
    """Laplacian kernel of a graph for one spectral map"""
    try:
        graph = validate_graph(np.asarray(request.adjacency, dtype=float))
        kernel = laplacian_kernel(graph_spectrum(graph), request.spec)
    except GraphKernelError as e:
        raise _unprocessable(e)
    return KernelResponse(
        provenance=kernel.provenance,
        matrix=np.asarray(kernel.matrix).tolist(),
        spectrum=None if kernel.spectrum is None else [float(v) for v in kernel.spectrum],
    )


@app.post("/api/reconstruct/static", response_model=ReconstructResponse)
def reconstruct(request: StaticReconstructRequest):
    """Reconstruct a signal on every vertex from its samples"""
    try:
        _reject_file_access([request.estimator])
        graph = validate_graph(np.asarray(request.adjacency, dtype=float))
        samples = sorted(request.samples, key=lambda s: s.vertex_index)
        obs = Observation(
            mask=SamplingMask(indices=np.array([s.vertex_index for s in samples], dtype=int), n=graph.n),
            y=np.array([s.value for s in samples], dtype=float),
        )
        estimate = reconstruct_static(graph, request.estimator, obs, request.clusters, request.seed)
    except (GraphKernelError, ValueError) as e:
        raise _unprocessable(e)
    return ReconstructResponse(
        estimator=request.estimator.label,
        estimate=[float(v) for v in estimate],
    )


@app.post("/api/simulate")
def simulate(config: ExperimentConfig, store: bool = Query(default=True)):
    """Run a Monte Carlo experiment; the report is stored unless store=false"""
    try:
        if config.graph.path or config.signal.path or config.output:
            raise ConfigError("File inputs and outputs are not available over HTTP")
        _reject_file_access(config.estimators)
        report = run_experiment(config)
    except GraphKernelError as e:
        raise _unprocessable(e)

    report_id = get_report_store().save(report) if store else None
    return {"id": report_id, "report": report}


@app.get("/api/reports")
def list_reports(limit: int = Query(default=50, ge=1, le=500)) -> List[dict]:
    """Stored experiments, newest first"""
    return get_report_store().list_reports(limit)


@app.get("/api/reports/{report_id}", response_model=EvaluationReport)
def get_report(report_id: int):
    report = get_report_store().get_report(report_id)
    if report is None:
        raise HTTPException(status_code=404, detail=f"Report {report_id} not found")
    return report


@app.get("/api/reports/{report_id}/trials")
def get_report_trials(report_id: int) -> List[dict]:
    """Per-trial NMSE and errors of a stored report"""
    store = get_report_store()
    if store.get_report(report_id) is None:
        raise HTTPException(status_code=404, detail=f"Report {report_id} not found")
    return store.trial_results(report_id)


# ==================== Main Entry Point ====================

if __name__ == "__main__":
    import uvicorn
    settings = get_settings()
    uvicorn.run(
        "graphkernel.main:app",
        host=settings.host,
        port=settings.port,
        reload=settings.debug
    )
