"""Command-line entry point: generate benchmarks, detect, evaluate, sweep."""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import tempfile
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone

import numpy as np

from .benchmarks import SP_LEVELS, GranellParams, GroundTruth, SPParams, generate_granell, generate_sp_temporal
from .clustering import DetectionConfig, detect_multiscale, labels_csv, read_labels_csv, read_result, write_result
from .exceptions import (
    ConsistencyError,
    DegenerateDegreeError,
    DomainError,
    ParameterError,
    ParseError,
    PreconditionError,
    RangeError,
    SolverError,
    StageError,
    TemporalWaveletError,
)
from .metrics import EvaluationError, evaluation_report, layer_ari_curve, success_rate
from .temporal_graph import (
    FLOAT_FMT,
    TemporalNetwork,
    constant_weights,
    lart_weights,
    load_temporal_network,
    load_weights_override,
    write_temporal_network,
)

logger = logging.getLogger(__name__)

CACHE_ENV = "TEMPORAL_WAVELETS_CACHE"

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_PARSE = 2
EXIT_RANGE = 3
EXIT_CONSISTENCY = 4
EXIT_DOMAIN = 5
EXIT_DEGENERATE = 6
EXIT_SOLVER = 7
EXIT_PRECONDITION = 8
EXIT_EVALUATION = 9
EXIT_IO = 10
EXIT_USAGE = 64

# most specific first: DegenerateDegreeError and friends may share bases
_EXIT_TABLE = (
    (ParseError, EXIT_PARSE),
    (RangeError, EXIT_RANGE),
    (ConsistencyError, EXIT_CONSISTENCY),
    (DegenerateDegreeError, EXIT_DEGENERATE),
    (SolverError, EXIT_SOLVER),
    (PreconditionError, EXIT_PRECONDITION),
    (EvaluationError, EXIT_EVALUATION),
    (ParameterError, EXIT_DOMAIN),
    (DomainError, EXIT_DOMAIN),
)

EXIT_CODES_HELP = """\
exit codes:
  0   success
  1   unexpected internal error
  2   input file could not be parsed
  3   node or layer index out of range
  4   inconsistent input (e.g. conflicting mirrored edge weights)
  5   invalid parameter or numerical domain error
  6   node-time with zero multilayer degree
  7   eigensolver failed to converge
  8   precondition violated (e.g. stability requested in exact mode)
  9   evaluation inputs do not match (e.g. truth with wrong N)
  10  file system error (unreadable or unwritable path)
  64  command-line usage error
"""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception (unwrapping pipeline stage errors) to an exit code."""
    if isinstance(exc, StageError) and exc.cause is not None:
        exc = exc.cause
    for kind, code in _EXIT_TABLE:
        if isinstance(exc, kind):
            return code
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_OTHER


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Detection settings plus weight scheme and file locations."""

    detection: DetectionConfig
    weights: str = "lart"
    weights_file: str | None = None
    input: str | None = None
    output: str | None = None

    def __post_init__(self):
        parse_weight_scheme(self.weights)


_DETECTION_KEYS = {f.name for f in fields(DetectionConfig)}
_ALIASES = {"M": "n_scales", "scales": "n_scales", "R": "repetitions", "omega": None}


def parse_weight_scheme(text: str) -> tuple[str, float | None]:
    """``"lart"`` or ``"constant:<omega>"``."""
    text = str(text).strip()
    if text.lower() == "lart":
        return "lart", None
    if text.lower().startswith("constant:"):
        try:
            omega = float(text.split(":", 1)[1])
        except ValueError:
            raise ParameterError(f"bad constant weight {text!r}") from None
        if not np.isfinite(omega) or omega < 0:
            raise ParameterError(f"constant weight must be finite and non-negative, got {omega}")
        return "constant", omega
    raise ParameterError(f"weight scheme must be 'lart' or 'constant:<omega>', got {text!r}")


def build_experiment_config(file_values: dict | None, overrides: dict) -> ExperimentConfig:
    """Merge a config file's values with command-line overrides (flags win).

    A seed must be given by one of the two sources.
    """
    merged = {}
    for source in (file_values or {}, {k: v for k, v in overrides.items() if v is not None}):
        for key, value in source.items():
            key = _ALIASES.get(key, key) or key
            merged[key] = value
    if "omega" in merged:
        merged["weights"] = f"constant:{merged.pop('omega')}"
    if "seed" not in merged:
        raise ParameterError("a seed is required (set \"seed\" in the config file or pass --seed)")
    extra = {k: merged.pop(k) for k in ("weights", "weights_file", "input", "output") if k in merged}
    unknown = sorted(set(merged) - _DETECTION_KEYS)
    if unknown:
        raise ParameterError(f"unknown configuration keys: {', '.join(unknown)}")
    for key in ("n_scales", "eta", "repetitions", "order", "seed", "extra_eigenpairs", "threads"):
        if key in merged:
            value = merged[key]
            if isinstance(value, bool) or int(value) != value:
                raise ParameterError(f"{key} must be an integer, got {value!r}")
            merged[key] = int(value)
    if "cache_dir" not in merged and os.environ.get(CACHE_ENV):
        merged["cache_dir"] = os.environ[CACHE_ENV]
    return ExperimentConfig(DetectionConfig(**merged), **extra)


def read_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    return data


def weights_for(net: TemporalNetwork, config: ExperimentConfig):
    kind, omega = parse_weight_scheme(config.weights)
    weights = lart_weights(net) if kind == "lart" else constant_weights(net, omega)
    if config.weights_file:
        weights = load_weights_override(config.weights_file, weights)
    return weights


# ---------------------------------------------------------------------------
# file helpers

def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_benchmark(net: TemporalNetwork, truth: GroundTruth, out_dir, params) -> dict:
    """Write ``network.txt``, ``truth_<scale>.csv`` and ``metadata.json``."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "network.txt")
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp-network")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        write_temporal_network(net, fh)
    os.replace(tmp, path)
    files = {}
    for name, labels in truth.labels.items():
        fname = f"truth_{name}.csv"
        _atomic_write(os.path.join(out_dir, fname), labels_csv(np.asarray(labels).ravel(), net.n_nodes))
        files[name] = fname
    meta = {
        "family": truth.family,
        "params": asdict(params),
        "n_nodes": net.n_nodes,
        "n_layers": net.n_layers,
        "mean_degree": net.mean_degree(),
        "truth_files": files,
        "generator": truth.metadata,
    }
    _atomic_write(os.path.join(out_dir, "metadata.json"), _json_text(meta))
    return meta


def load_truth(paths, n_nodes: int, n_layers: int) -> dict:
    """Truth labels from ``truth_<scale>.csv`` files or directories holding them."""
    found = {}
    for path in paths:
        if os.path.isdir(path):
            names = sorted(f for f in os.listdir(path) if f.startswith("truth_") and f.endswith(".csv"))
            if not names:
                raise EvaluationError(f"{path}: no truth_<scale>.csv files")
            entries = [os.path.join(path, f) for f in names]
        else:
            entries = [path]
        for entry in entries:
            name = os.path.basename(entry)
            name = name[len("truth_"):] if name.startswith("truth_") else name
            name = name[:-4] if name.endswith(".csv") else name
            found[name] = _read_truth(entry, n_nodes, n_layers)
    return found


def _read_truth(path, n_nodes, n_layers) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if data.size == 0:
        raise EvaluationError(f"{path}: no label rows")
    n_file = int(data[:, 0].max()) + 1
    t_file = int(data[:, 1].max())
    if n_file != n_nodes or t_file != n_layers or len(data) != n_nodes * n_layers:
        raise EvaluationError(
            f"{path}: truth covers {t_file} layers x {n_file} nodes, result has {n_layers} x {n_nodes}"
        )
    try:
        return read_labels_csv(path, n_nodes, n_layers)
    except DomainError as exc:
        raise EvaluationError(str(exc)) from None


def curves_csv(report: dict) -> str:
    """Plot-ready table: one row per scale, mean/std ARI per truth scale, instability."""
    names = sorted(report["truth_scales"])
    header = ["scale_index", "scale"]
    for name in names:
        header += [f"ari_mean_{name}", f"ari_std_{name}"]
    header.append("instability")
    rows = [",".join(header)]
    inst = report.get("instability")
    for k, scale in enumerate(report["scales"]):
        row = [str(k), FLOAT_FMT.format(scale)]
        for name in names:
            entry = report["truth_scales"][name]
            row += [FLOAT_FMT.format(entry["mean"][k]), FLOAT_FMT.format(entry["std"][k])]
        row.append("" if inst is None else FLOAT_FMT.format(inst[k]))
        rows.append(",".join(row))
    return "\n".join(rows) + "\n"


def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------------------
# commands

_GENERATOR_FLAGS = {
    "rho": "--rho", "k_bar": "--kbar", "n_nodes": "--nodes", "n_layers": "--layers", "change_class": "--class",
    "model": "--model", "n_groups": "--groups", "k_avg": "--kavg", "mu": "--mu", "change_rate": "--rate",
}


def _as_usage_error(family: str, exc: ParameterError) -> UsageError:
    """Restate a generator parameter error in terms of command-line flags."""
    message = str(exc)
    for name, flag in _GENERATOR_FLAGS.items():
        message = re.sub(rf"\b{name}\b", flag, message)
    return UsageError(f"{family}: {message}")


def _generator_params(args):
    if args.family == "sp":
        return SPParams(rho=args.rho, k_bar=args.kbar, n_nodes=args.nodes or 640, n_layers=args.layers,
                        change_class=args.change_class, seed=args.seed)
    return GranellParams(model=args.model, n_nodes=args.nodes or 128, n_layers=args.layers or 100,
                         n_groups=args.groups, k_avg=args.kavg, mu=args.mu, change_rate=args.rate,
                         seed=args.seed)


def _generate(params):
    if isinstance(params, SPParams):
        return generate_sp_temporal(params)
    return generate_granell(params)


def cmd_generate(args) -> int:
    try:
        params = _generator_params(args)
        net, truth = _generate(params)
    except ParameterError as exc:
        raise _as_usage_error(args.family, exc) from None
    meta = write_benchmark(net, truth, args.out, params)
    print(f"{truth.family}: N={net.n_nodes} T={net.n_layers} mean degree={meta['mean_degree']:.4f} -> {args.out}")
    return EXIT_OK


def _detect_overrides(args) -> dict:
    return {
        "seed": args.seed,
        "mode": args.mode,
        "n_scales": args.scales,
        "eta": args.eta,
        "repetitions": args.repetitions,
        "threshold": args.threshold,
        "order": args.order,
        "eig_method": args.eig_method,
        "threads": args.threads,
        "cache_dir": args.cache_dir,
        "weights": args.weights,
        "omega": args.omega,
        "weights_file": getattr(args, "weights_file", None),
    }


def _experiment_config(args) -> ExperimentConfig:
    file_values = read_config_file(args.config) if args.config else None
    return build_experiment_config(file_values, _detect_overrides(args))


def run_detection(net: TemporalNetwork, config: ExperimentConfig, out_dir, *, timestamp=True):
    weights = weights_for(net, config)
    result = detect_multiscale(net, weights, config.detection)
    path = write_result(result, out_dir, timestamp=_timestamp() if timestamp else None)
    return result, path


def cmd_detect(args) -> int:
    config = _experiment_config(args)
    net = load_temporal_network(args.input)
    result, path = run_detection(net, config, args.out, timestamp=not args.no_timestamp)
    logger.info("lambda* = %s, q_index = %d, scales in [%s, %s]", FLOAT_FMT.format(result.lambda_star),
                result.q_index, FLOAT_FMT.format(result.grid.s_min), FLOAT_FMT.format(result.grid.s_max))
    print(f"lambda*={result.lambda_star:.6g} q_index={result.q_index} "
          f"scales=[{result.grid.s_min:.6g}, {result.grid.s_max:.6g}] -> {path}")
    return EXIT_OK


def evaluate_stored(result_path, truth_paths) -> dict:
    stored = read_result(result_path)
    truth = load_truth(truth_paths, stored.n_nodes, stored.n_layers)
    return evaluation_report(stored, truth)


def cmd_evaluate(args) -> int:
    report = evaluate_stored(args.result, args.truth)
    os.makedirs(args.out, exist_ok=True)
    _atomic_write(os.path.join(args.out, "evaluation.json"), _json_text(report))
    _atomic_write(os.path.join(args.out, "curves.csv"), curves_csv(report))
    for name in sorted(report["truth_scales"]):
        print(f"{name}: success rate {report['truth_scales'][name]['success_rate']:.4f}")
    return EXIT_OK


def sweep(params_list, config: ExperimentConfig, out_dir=None) -> dict:
    """Generate, detect and score each realization; summarize success rates."""
    rates = {}
    for params in params_list:
        net, truth = _generate(params)
        run_config = replace(config, detection=replace(config.detection, seed=params.seed))
        weights = weights_for(net, run_config)
        result = detect_multiscale(net, weights, run_config.detection)
        if out_dir is not None:
            write_result(result, os.path.join(out_dir, f"seed_{params.seed}"))
        partitions = [p.labels for p in result.partitions]
        for name, labels in truth.labels.items():
            rates.setdefault(name, []).append(success_rate(layer_ari_curve(partitions, labels)))
    summary = {name: {"success_rates": values, "mean": float(np.mean(values)), "std": float(np.std(values))}
               for name, values in rates.items()}
    return summary


def format_summary(label: str, summary: dict) -> str:
    order = [n for n in reversed(SP_LEVELS) if n in summary] + sorted(n for n in summary if n not in SP_LEVELS)
    lines = [f"{'benchmark':<16}{'truth':<10}{'success rate (mean ± std)':>28}"]
    for name in order:
        entry = summary[name]
        lines.append(f"{label:<16}{name:<10}{entry['mean']:>18.4f} ± {entry['std']:.4f}")
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    if args.realizations < 1:
        raise UsageError("--realizations must be positive")
    config = _experiment_config(args)
    seeds = [config.detection.seed + r for r in range(args.realizations)]
    params_list = []
    for seed in seeds:
        args.seed = seed
        try:
            params_list.append(_generator_params(args))
        except ParameterError as exc:
            raise _as_usage_error(args.family, exc) from None
    label = args.change_class if args.family == "sp" else args.model
    summary = sweep(params_list, config, args.out)
    text = format_summary(label, summary)
    print(text)
    if args.out:
        payload = {"benchmark": label, "seeds": seeds, "summary": summary,
                   "config": asdict(config.detection) | {"weights": config.weights}}
        payload["config"].pop("cache_dir", None)
        payload["config"].pop("threads", None)
        _atomic_write(os.path.join(args.out, "summary.json"), _json_text(payload))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _add_generator_args(parser, *, seed_required=True):
    fam = parser.add_subparsers(dest="family", metavar="FAMILY", parser_class=_Parser)
    fam.required = True
    sp = fam.add_parser("sp", help="hierarchical benchmark with three nested scales")
    sp.add_argument("--class", dest="change_class", required=True, choices=("ssc", "msc", "lsc"),
                    help="which scale merges and splits over time")
    sp.add_argument("--rho", type=float, default=1.0, help="scale separation (default 1)")
    sp.add_argument("--kbar", type=float, default=16.0, help="mean degree (default 16)")
    sp.add_argument("--nodes", type=int, default=None, help="number of nodes (default 640)")
    sp.add_argument("--layers", type=int, default=None, help="number of layers (default per class)")
    gr = fam.add_parser("granell", help="grow / merge / mixed planted-partition sequences")
    gr.add_argument("--model", required=True, choices=("grow", "merge", "mixed"))
    gr.add_argument("--nodes", type=int, default=None, help="number of nodes (default 128)")
    gr.add_argument("--layers", type=int, default=None, help="number of layers (default 100)")
    gr.add_argument("--groups", type=int, default=4, help="planted communities (default 4)")
    gr.add_argument("--kavg", type=float, default=16.0, help="expected degree (default 16)")
    gr.add_argument("--mu", type=float, default=0.25, help="fraction of edges leaving a community")
    gr.add_argument("--rate", type=float, default=1.0, help="change rate in [0, 1] (0: static)")
    return sp, gr


def _add_detection_args(parser):
    g = parser.add_argument_group("detection")
    g.add_argument("--config", help="JSON config file; flags override its values")
    g.add_argument("--seed", type=int, help="random seed (required here or in the config)")
    g.add_argument("--mode", choices=("fast", "exact"))
    g.add_argument("--scales", type=int, help="number of scales M (default 50)")
    g.add_argument("--eta", type=int, help="random signals per sketch (default 100)")
    g.add_argument("--repetitions", type=int, help="stability repetitions R (default 20; 0 skips)")
    g.add_argument("--threshold", type=float, help="regression residual threshold (default 0.8)")
    g.add_argument("--order", type=int, help="Chebyshev order (default 80)")
    g.add_argument("--eig-method", choices=("auto", "dense", "iterative"))
    g.add_argument("--threads", type=int, help="worker threads for per-scale work")
    g.add_argument("--cache-dir", help=f"eigenpair cache directory (default ${CACHE_ENV})")
    g.add_argument("--weights", help="inter-layer weights: 'lart' or 'constant:<omega>'")
    g.add_argument("--omega", type=float, help="shorthand for --weights constant:<omega>")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="temporal-wavelets",
        description="Multi-scale community detection in temporal networks with graph wavelets.",
        epilog=EXIT_CODES_HELP + f"\nenvironment:\n  {CACHE_ENV}  directory for cached eigenpairs\n",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    gen = sub.add_parser("generate", help="write a benchmark network and its planted truth",
                         epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    for p in _add_generator_args(gen):
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_generate)

    det = sub.add_parser("detect", help="run multi-scale detection on an edge list",
                         epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    det.add_argument("input", help="temporal edge list")
    det.add_argument("--out", required=True, help="output directory")
    det.add_argument("--weights-file", help="per-node inter-layer weight overrides")
    det.add_argument("--no-timestamp", action="store_true", help="omit the timestamp field from result.json")
    _add_detection_args(det)
    det.set_defaults(func=cmd_detect)

    ev = sub.add_parser("evaluate", help="score a detection result against planted truth",
                        epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    ev.add_argument("result", help="result.json written by detect")
    ev.add_argument("truth", nargs="+", help="truth_<scale>.csv files or directories containing them")
    ev.add_argument("--out", required=True, help="output directory")
    ev.set_defaults(func=cmd_evaluate)

    sw = sub.add_parser("sweep", help="batch over realizations and print mean ± std success rates",
                        epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    for p in _add_generator_args(sw):
        p.add_argument("--realizations", type=int, default=10, help="number of realizations (default 10)")
        p.add_argument("--out", help="directory for per-realization results and summary.json")
        _add_detection_args(p)
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TemporalWaveletError, OSError) as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
