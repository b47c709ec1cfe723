"""
File formats

- Graphs: edge-list CSV (src,dst,weight; upper triangle) or JSON {n, adjacency}
- Observations: vertex_index,value CSV; time series add a 0-based t column
- Dense matrices (kernels, bases, KKF parameters): headerless CSV
- Reports: JSON plus a flat CSV table of NMSE per estimator and sample size
"""
import json
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from graphkernel.dynamic import KkfParameters, TimeSeriesObservations
from graphkernel.errors import ConfigError, DimensionMismatch
from graphkernel.graph import Graph, validate_graph
from graphkernel.models import EvaluationReport
from graphkernel.static_estimators import Observation, ParametricBasis, SamplingMask

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"File not found: {path}")
    return path


def _columns(frame: pd.DataFrame, names: Sequence[str], path: Path):
    missing = [c for c in names if c not in frame.columns]
    if missing:
        raise DimensionMismatch(f"{path} lacks columns {missing}")


def _ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# ==================== Graphs ====================


def read_edge_list(path, n: Optional[int] = None) -> Graph:
    """Undirected graph from src,dst,weight rows; n defaults to max index + 1"""
    path = _require(path)
    frame = pd.read_csv(path)
    _columns(frame, ["src", "dst", "weight"], path)
    src = frame["src"].to_numpy(dtype=int)
    dst = frame["dst"].to_numpy(dtype=int)
    weight = frame["weight"].to_numpy(dtype=float)
    if n is None:
        n = int(max(src.max(initial=-1), dst.max(initial=-1))) + 1
    if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
        raise DimensionMismatch(f"Edge endpoints outside [0, {n})")
    adjacency = np.zeros((n, n))
    adjacency[src, dst] = weight
    adjacency[dst, src] = weight
    return validate_graph(adjacency)


def write_edge_list(graph: Graph, path) -> None:
    edges = graph.edges()
    frame = pd.DataFrame(edges, columns=["src", "dst", "weight"])
    frame.to_csv(_ensure_parent(path), index=False, float_format=FLOAT_FORMAT)


def read_graph_json(path) -> Graph:
    path = _require(path)
    with open(path) as f:
        data = json.load(f)
    adjacency = np.asarray(data["adjacency"], dtype=float)
    if "n" in data and adjacency.shape != (data["n"], data["n"]):
        raise DimensionMismatch(f"Adjacency of shape {adjacency.shape} for n={data['n']}")
    return validate_graph(adjacency)


def write_graph_json(graph: Graph, path) -> None:
    with open(_ensure_parent(path), "w") as f:
        json.dump({"n": graph.n, "adjacency": np.asarray(graph.adjacency).tolist()}, f)


def read_graph(path, n: Optional[int] = None) -> Graph:
    """Dispatch on the extension: .json or edge-list CSV"""
    if Path(path).suffix.lower() == ".json":
        return read_graph_json(path)
    return read_edge_list(path, n)


def write_graph(graph: Graph, path) -> None:
    if Path(path).suffix.lower() == ".json":
        write_graph_json(graph, path)
    else:
        write_edge_list(graph, path)


# ==================== Signals and observations ====================


def read_observation(path, n: int) -> Observation:
    """Samples as vertex_index,value rows, in any order"""
    path = _require(path)
    frame = pd.read_csv(path)
    _columns(frame, ["vertex_index", "value"], path)
    frame = frame.sort_values("vertex_index")
    indices = frame["vertex_index"].to_numpy(dtype=int)
    return Observation(
        mask=SamplingMask(indices=indices, n=n),
        y=frame["value"].to_numpy(dtype=float),
    )


def write_observation(obs: Observation, path) -> None:
    frame = pd.DataFrame({"vertex_index": obs.mask.indices, "value": obs.y})
    frame.to_csv(_ensure_parent(path), index=False, float_format=FLOAT_FORMAT)


def read_signal(path, n: int) -> np.ndarray:
    """Full signal; every vertex must appear exactly once"""
    obs = read_observation(path, n)
    if obs.size != n:
        raise DimensionMismatch(f"Signal file lists {obs.size} of {n} vertices")
    return obs.y


def write_signal(f, path) -> None:
    f = np.asarray(f, dtype=float)
    write_observation(Observation(mask=SamplingMask.full(f.shape[0]), y=f), path)


def read_time_series(path, n: int, t_len: Optional[int] = None) -> TimeSeriesObservations:
    """t,vertex_index,value rows; slots without rows are empty"""
    path = _require(path)
    frame = pd.read_csv(path)
    _columns(frame, ["t", "vertex_index", "value"], path)
    if t_len is None:
        t_len = int(frame["t"].max()) + 1 if len(frame) else 0
    if len(frame) and (frame["t"].min() < 0 or frame["t"].max() >= t_len):
        raise DimensionMismatch(f"Slots outside [0, {t_len})")

    groups = {int(t): g.sort_values("vertex_index") for t, g in frame.groupby("t")}
    slots = []
    for t in range(t_len):
        group = groups.get(t)
        if group is None:
            slots.append(Observation(mask=SamplingMask(indices=np.zeros(0, dtype=int), n=n), y=np.zeros(0)))
            continue
        slots.append(Observation(
            mask=SamplingMask(indices=group["vertex_index"].to_numpy(dtype=int), n=n),
            y=group["value"].to_numpy(dtype=float),
        ))
    return TimeSeriesObservations(slots=tuple(slots))


def write_time_series(obs: TimeSeriesObservations, path) -> None:
    rows = [
        pd.DataFrame({"t": t, "vertex_index": slot.mask.indices, "value": slot.y})
        for t, slot in enumerate(obs.slots)
    ]
    frame = pd.concat(rows, ignore_index=True)
    frame.to_csv(_ensure_parent(path), index=False, float_format=FLOAT_FORMAT)


def read_time_series_signal(path, n: int) -> np.ndarray:
    """Dense T x n signal; every slot must list every vertex"""
    series = read_time_series(path, n)
    for t, slot in enumerate(series.slots):
        if slot.size != n:
            raise DimensionMismatch(f"Slot {t} lists {slot.size} of {n} vertices")
    return np.vstack([slot.y for slot in series.slots])


def write_slot_estimates(estimates: np.ndarray, path) -> None:
    """T x n estimates in the t,vertex_index,value layout"""
    estimates = np.asarray(estimates, dtype=float)
    t_len, n = estimates.shape
    frame = pd.DataFrame({
        "t": np.repeat(np.arange(t_len), n),
        "vertex_index": np.tile(np.arange(n), t_len),
        "value": estimates.ravel(),
    })
    frame.to_csv(_ensure_parent(path), index=False, float_format=FLOAT_FORMAT)


def write_theta_history(history: Dict[str, np.ndarray], path) -> None:
    """One row per slot with theta_nu_m and theta_eta_m columns"""
    columns = {}
    for name, values in history.items():
        for m in range(values.shape[1]):
            columns[f"{name}_{m}"] = values[:, m]
    frame = pd.DataFrame(columns)
    frame.insert(0, "t", np.arange(len(frame)))
    frame.to_csv(_ensure_parent(path), index=False, float_format=FLOAT_FORMAT)


# ==================== Dense matrices ====================


def read_matrix(path) -> np.ndarray:
    path = _require(path)
    return pd.read_csv(path, header=None).to_numpy(dtype=float)


def write_matrix(m: np.ndarray, path) -> None:
    pd.DataFrame(np.asarray(m, dtype=float)).to_csv(
        _ensure_parent(path), header=False, index=False, float_format=FLOAT_FORMAT
    )


def read_basis(path) -> ParametricBasis:
    return ParametricBasis(read_matrix(path))


def write_kkf_parameters(params: KkfParameters, directory) -> None:
    """P_t.csv for t = 2..T and Q_t.csv for t = 1..T (1-based file names)"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, q in enumerate(params.noise_kernels, start=1):
        write_matrix(q, directory / f"Q_{t}.csv")
    for t, p in enumerate(params.transitions, start=2):
        write_matrix(p, directory / f"P_{t}.csv")
    logger.info(f"Wrote KKF parameters for {params.t_len} slots to {directory}")


# ==================== Reports ====================


def report_table(report: EvaluationReport) -> pd.DataFrame:
    return pd.DataFrame([
        {
            "estimator": r.estimator,
            "kind": r.kind.value,
            "sample_size": r.sample_size,
            "mean_nmse": r.mean_nmse,
            "std_nmse": r.std_nmse,
            "failures": len(r.failures),
            "runtime_seconds": r.runtime_seconds,
        }
        for r in report.results
    ])


def write_report(report: EvaluationReport, prefix) -> None:
    """<prefix>.json with the full report and <prefix>.csv with the NMSE table"""
    prefix = Path(prefix)
    if prefix.suffix.lower() in (".json", ".csv"):
        prefix = prefix.with_suffix("")
    json_path = _ensure_parent(prefix.with_suffix(".json"))
    json_path.write_text(report.model_dump_json(indent=2))
    report_table(report).to_csv(prefix.with_suffix(".csv"), index=False)
    logger.info(f"Report written to {json_path}")


def read_report(path) -> EvaluationReport:
    return EvaluationReport.model_validate_json(_require(path).read_text())
