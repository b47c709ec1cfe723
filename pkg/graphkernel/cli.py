"""
Command line interface

    graphkernel graph gen|validate
    graphkernel kernel build
    graphkernel reconstruct static|batch|online
    graphkernel simulate --config cfg.json [--set estimators.0.mu=0.01]
    graphkernel eval nmse

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from graphkernel import __version__
from graphkernel.config import get_settings
from graphkernel.data_io import (
    read_graph,
    read_observation,
    read_signal,
    read_time_series,
    read_time_series_signal,
    write_graph,
    write_kkf_parameters,
    write_matrix,
    write_signal,
    write_slot_estimates,
    write_theta_history,
)
from graphkernel.database import get_report_store
from graphkernel.dynamic import batch_space_time_fit, unstack
from graphkernel.errors import ConfigError, GraphKernelError
from graphkernel.graph import build_extended_adjacency, graph_spectrum
from graphkernel.harness import (
    generate_er_graph,
    nmse,
    reconstruct_dynamic,
    reconstruct_static,
    run_experiment,
)
from graphkernel.kernels import laplacian_kernel, space_time_inverse, space_time_kernel_from_inverse
from graphkernel.models import CouplingSpec, EstimatorSpec, ExperimentConfig, SpectralMapSpec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# ==================== Config helpers ====================


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(data: dict, assignment: str) -> dict:
    """
    Set a dotted key in a nested config dict

    Integer segments index lists: estimators.0.mu=0.01. Values are parsed as
    JSON when possible, otherwise kept as strings.
    """
    if "=" not in assignment:
        raise ConfigError(f"Override '{assignment}' is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(node, list):
            try:
                index = int(part)
                if last:
                    node[index] = _parse_value(raw)
                else:
                    node = node[index]
            except (ValueError, IndexError):
                raise ConfigError(f"Override '{key}': bad list index '{part}'")
        else:
            if last:
                node[part] = _parse_value(raw)
            else:
                node = node.setdefault(part, {})
    return data


def _load_json(source: str) -> Any:
    """Inline JSON or a path to a JSON file"""
    path = Path(source)
    if path.exists():
        return json.loads(path.read_text())
    try:
        return json.loads(source)
    except json.JSONDecodeError:
        raise ConfigError(f"'{source}' is neither a file nor valid JSON")


def _load_model(model: type, source: str, overrides: Optional[List[str]] = None) -> BaseModel:
    data = _load_json(source)
    for assignment in overrides or []:
        apply_override(data, assignment)
    return model.model_validate(data)


def load_experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    data = _load_json(args.config)
    for flag in ("trials", "seed", "output", "threads"):
        value = getattr(args, flag, None)
        if value is not None:
            data[flag] = value
    for assignment in args.set or []:
        apply_override(data, assignment)
    return ExperimentConfig.model_validate(data)


def _print_json(payload: Any):
    print(json.dumps(payload, indent=2, default=str))


# ==================== Commands ====================


def cmd_graph_gen(args) -> int:
    graph = generate_er_graph(args.n, args.p, args.seed)
    write_graph(graph, args.output)
    logger.info(f"Wrote ER({args.n}, {args.p}) graph with {graph.edge_count} edges to {args.output}")
    return EXIT_OK


def cmd_graph_validate(args) -> int:
    graph = read_graph(args.graph, args.n)
    decomp = graph_spectrum(graph)
    _print_json({
        "n": graph.n,
        "edge_count": graph.edge_count,
        "connected": graph.is_connected(),
        "lambda_min": float(decomp.eigenvalues[0]),
        "lambda_max": float(decomp.eigenvalues[-1]),
    })
    return EXIT_OK


def cmd_kernel_build(args) -> int:
    graph = read_graph(args.graph, args.n)
    spec = _load_model(SpectralMapSpec, args.spec, args.set)
    kernel = laplacian_kernel(graph_spectrum(graph), spec)
    write_matrix(kernel.matrix, args.output)
    logger.info(f"Wrote {kernel.provenance} kernel ({kernel.n} x {kernel.n}) to {args.output}")
    return EXIT_OK


def cmd_reconstruct_static(args) -> int:
    graph = read_graph(args.graph, args.n)
    spec = _load_model(EstimatorSpec, args.estimator, args.set)
    obs = read_observation(args.samples, graph.n)
    estimate = reconstruct_static(graph, spec, obs, args.clusters, args.seed)
    write_signal(estimate, args.output)
    logger.info(f"{spec.label}: reconstructed {graph.n} vertices from {obs.size} samples")
    return EXIT_OK


def cmd_reconstruct_batch(args) -> int:
    graph = read_graph(args.graph, args.n)
    spec = _load_model(SpectralMapSpec, args.kernel, args.set)
    obs = read_time_series(args.samples, graph.n, args.t_len)
    kernel = laplacian_kernel(graph_spectrum(graph), spec)
    ext = build_extended_adjacency([graph] * obs.t_len, CouplingSpec(alpha=args.coupling))
    inv = space_time_inverse(ext, [kernel] * obs.t_len, args.time_sigma2)
    f_hat = batch_space_time_fit(space_time_kernel_from_inverse(inv), obs, args.mu)
    write_slot_estimates(unstack(f_hat, graph.n), args.output)
    return EXIT_OK


def cmd_reconstruct_online(args) -> int:
    graph = read_graph(args.graph, args.n)
    spec = _load_model(EstimatorSpec, args.estimator, args.set)
    obs = read_time_series(args.samples, graph.n, args.t_len)
    extras = {}
    estimates = reconstruct_dynamic(graph, spec, obs, args.seed, extras)
    write_slot_estimates(estimates, args.output)
    if args.theta_output and "theta_history" in extras:
        write_theta_history(extras["theta_history"], args.theta_output)
    if args.kkf_params and "kkf_params" in extras:
        write_kkf_parameters(extras["kkf_params"], args.kkf_params)
    logger.info(f"{spec.label}: filtered {obs.t_len} slots of {graph.n} vertices")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_experiment_config(args)
    report = run_experiment(cfg)
    table = pd.DataFrame([
        {"estimator": r.estimator, "S": r.sample_size, "mean_nmse": r.mean_nmse,
         "std_nmse": r.std_nmse, "failures": len(r.failures)}
        for r in report.results
    ])
    print(table.to_string(index=False))
    if args.store:
        report_id = get_report_store().save(report)
        logger.info(f"Report stored with id {report_id}")
    if report.all_failed:
        logger.error("Every trial failed")
        return EXIT_NUMERICAL
    return EXIT_OK


def _read_any_signal(path: str, n: int) -> np.ndarray:
    columns = pd.read_csv(path, nrows=0).columns
    if "t" in columns:
        return read_time_series_signal(path, n)
    return read_signal(path, n)


def cmd_eval_nmse(args) -> int:
    n = args.n
    if n is None:
        n = int(pd.read_csv(args.reference)["vertex_index"].max()) + 1
    value = nmse(_read_any_signal(args.estimate, n), _read_any_signal(args.reference, n))
    print(f"{value:.10g}")
    return EXIT_OK


# ==================== Parser ====================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphkernel",
        description="Kernel-based reconstruction of graph signals",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="logging level (default from settings)")
    commands = parser.add_subparsers(dest="command", required=True)

    # graph
    graph = commands.add_parser("graph", help="generate or validate graphs")
    graph_commands = graph.add_subparsers(dest="action", required=True)

    gen = graph_commands.add_parser("gen", help="Erdos-Renyi graph")
    gen.add_argument("--n", type=int, default=200, help="number of vertices")
    gen.add_argument("--p", type=float, default=0.6, help="edge probability")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--output", required=True, help=".csv edge list or .json adjacency")
    gen.set_defaults(handler=cmd_graph_gen)

    validate = graph_commands.add_parser("validate", help="check a graph file and print a summary")
    validate.add_argument("graph")
    validate.add_argument("--n", type=int, default=None, help="vertex count for edge lists")
    validate.set_defaults(handler=cmd_graph_validate)

    # kernel
    kernel = commands.add_parser("kernel", help="Laplacian kernels")
    kernel_commands = kernel.add_subparsers(dest="action", required=True)
    build = kernel_commands.add_parser("build", help="kernel matrix for a spectral map")
    build.add_argument("--graph", required=True)
    build.add_argument("--n", type=int, default=None)
    build.add_argument("--spec", required=True, help="SpectralMapSpec as JSON or a JSON file")
    build.add_argument("--set", action="append", help="override key=value")
    build.add_argument("--output", required=True)
    build.set_defaults(handler=cmd_kernel_build)

    # reconstruct
    reconstruct = commands.add_parser("reconstruct", help="reconstruct signals from samples")
    reconstruct_commands = reconstruct.add_subparsers(dest="action", required=True)

    static = reconstruct_commands.add_parser("static", help="one signal from vertex samples")
    static.add_argument("--graph", required=True)
    static.add_argument("--n", type=int, default=None)
    static.add_argument("--samples", required=True, help="vertex_index,value CSV")
    static.add_argument("--estimator", required=True, help="EstimatorSpec as JSON or a JSON file")
    static.add_argument("--set", action="append", help="override key=value")
    static.add_argument("--clusters", type=int, default=None, help="clusters for an indicator basis")
    static.add_argument("--seed", type=int, default=0)
    static.add_argument("--output", required=True)
    static.set_defaults(handler=cmd_reconstruct_static)

    batch = reconstruct_commands.add_parser("batch", help="space-time KRR over all slots")
    batch.add_argument("--graph", required=True)
    batch.add_argument("--n", type=int, default=None)
    batch.add_argument("--samples", required=True, help="t,vertex_index,value CSV")
    batch.add_argument("--t-len", type=int, default=None)
    batch.add_argument("--kernel", required=True, help="spatial SpectralMapSpec as JSON or a JSON file")
    batch.add_argument("--set", action="append", help="override key=value")
    batch.add_argument("--mu", type=float, default=1e-3)
    batch.add_argument("--coupling", type=float, default=1.0, help="weight of the temporal edges")
    batch.add_argument("--time-sigma2", type=float, default=1.0)
    batch.add_argument("--output", required=True)
    batch.set_defaults(handler=cmd_reconstruct_batch)

    online = reconstruct_commands.add_parser("online", help="filter a time series slot by slot")
    online.add_argument("--graph", required=True)
    online.add_argument("--n", type=int, default=None)
    online.add_argument("--samples", required=True, help="t,vertex_index,value CSV")
    online.add_argument("--t-len", type=int, default=None)
    online.add_argument("--estimator", required=True, help="EstimatorSpec as JSON or a JSON file")
    online.add_argument("--set", action="append", help="override key=value")
    online.add_argument("--seed", type=int, default=0)
    online.add_argument("--output", required=True)
    online.add_argument("--theta-output", default=None, help="CSV of theta trajectories (mkrikf)")
    online.add_argument("--kkf-params", default=None, help="directory for P_t.csv / Q_t.csv (kkf)")
    online.set_defaults(handler=cmd_reconstruct_online)

    # simulate
    simulate = commands.add_parser("simulate", help="Monte Carlo NMSE experiment")
    simulate.add_argument("--config", required=True, help="ExperimentConfig JSON file")
    simulate.add_argument("--trials", type=int, default=None)
    simulate.add_argument("--seed", type=int, default=None)
    simulate.add_argument("--output", default=None, help="report prefix (.json and .csv)")
    simulate.add_argument("--threads", type=int, default=None)
    simulate.add_argument("--set", action="append", help="override dotted.key=value")
    simulate.add_argument("--store", action="store_true", help="save the report in the database")
    simulate.set_defaults(handler=cmd_simulate)

    # eval
    evaluate = commands.add_parser("eval", help="score estimates")
    eval_commands = evaluate.add_subparsers(dest="action", required=True)
    score = eval_commands.add_parser("nmse", help="NMSE of an estimate against a reference")
    score.add_argument("--estimate", required=True)
    score.add_argument("--reference", required=True)
    score.add_argument("--n", type=int, default=None)
    score.set_defaults(handler=cmd_eval_nmse)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level or get_settings().log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return args.handler(args)
    except (ConfigError, ValidationError, ValueError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except GraphKernelError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
