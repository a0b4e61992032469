"""Command-line front end: generate datasets, run experiments, sweep k.

Subcommands:
  generate   write a synthetic dataset as a contract CSV file
  run        execute the configured experiment, write report.csv/report.json
  sweep-k    per-k coverage/cardinality table and the minimal qualifying k

Exit codes: 0 success, 1 runtime failure, 2 configuration error. Output
files are written atomically (temp file, then rename). Only aggregate
quantities are ever printed; per-example features and calibration scores
stay inside the run.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import tempfile

from fedconform import __version__
from fedconform.config import ConfigError, ExperimentConfig, load_config, override_seeds
from fedconform.evaluation import ExperimentReport, run_experiment, sweep_k
from fedconform.partition import generate_synthetic, write_csv


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value: float) -> str:
    return repr(float(value))


def report_csv(report: ExperimentReport) -> str:
    """Long-format table: method,alpha,k,metric,value (one metric per line)."""
    lines = ["method,alpha,k,metric,value"]
    for row in report.rows:
        k = "" if row.k is None else str(row.k)
        prefix = f"{row.method},{_fmt(row.alpha)},{k}"
        lines.append(f"{prefix},coverage,{_fmt(row.coverage)}")
        lines.append(f"{prefix},avg_cardinality,{_fmt(row.avg_cardinality)}")
        for cid in sorted(row.per_client_coverage):
            lines.append(f"{prefix},client_coverage:{cid},{_fmt(row.per_client_coverage[cid])}")
        for cls in sorted(row.per_class_coverage):
            lines.append(f"{prefix},class_coverage:{cls},{_fmt(row.per_class_coverage[cls])}")
        for kk in sorted(row.assignment_top_k):
            lines.append(f"{prefix},assignment_top_k:{kk},{_fmt(row.assignment_top_k[kk])}")
    return "\n".join(lines) + "\n"


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed_override", None) is not None:
        config = override_seeds(config, args.seed_override)
    if getattr(args, "output", None):
        config = dataclasses.replace(
            config, output=dataclasses.replace(config.output, directory=args.output)
        )
    return config


def _cmd_generate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    ds = config.dataset
    if ds.source != "synthetic":
        raise ConfigError("dataset.source: generate requires 'synthetic'")
    data = generate_synthetic(ds.classes, ds.dim, ds.per_class, ds.separation, ds.seed)
    os.makedirs(config.output.directory, exist_ok=True)
    path = os.path.join(config.output.directory, "dataset.csv")
    fd, tmp = tempfile.mkstemp(dir=config.output.directory, prefix=".tmp-", suffix="~")
    os.close(fd)
    try:
        write_csv(tmp, data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    counts: dict[int, int] = {}
    for ex in data:
        counts[ex.label] = counts.get(ex.label, 0) + 1
    print(f"wrote {path}: {len(data)} examples, dim={ds.dim}, classes={ds.classes}")
    for label in sorted(counts):
        print(f"  class {label}: {counts[label]} examples")
    return 0


def _cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    report = run_experiment(config, threads=args.threads)
    outdir = config.output.directory
    os.makedirs(outdir, exist_ok=True)
    if "csv" in config.output.formats:
        _write_atomic(os.path.join(outdir, "report.csv"), report_csv(report))
    if "json" in config.output.formats:
        _write_atomic(os.path.join(outdir, "report.json"), report.to_json() + "\n")
    for row in report.rows:
        k = "" if row.k is None else f" k={row.k}"
        print(
            f"{row.method} alpha={row.alpha}{k}: "
            f"coverage={row.coverage:.4f} cardinality={row.avg_cardinality:.3f}"
        )
    print(f"report written to {outdir} (digest {report.metadata['config_digest']})")
    return 0


def _cmd_sweep_k(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    alpha = args.alpha if args.alpha is not None else config.alphas[0]
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"--alpha: {alpha} outside (0, 1)")
    result = sweep_k(config, alpha, threads=args.threads)
    cards = [r.cardinality for r in result.rows]
    if any(b < a - 1e-12 for a, b in zip(cards, cards[1:])):
        raise RuntimeError("cardinality must be non-decreasing in k; aborting emission")
    outdir = config.output.directory
    os.makedirs(outdir, exist_ok=True)
    lines = ["k,coverage,cardinality,selected,warning"]
    print(f"alpha={alpha} target={result.target}")
    print("k  coverage  cardinality  selected")
    for row in result.rows:
        selected = int(row.k == result.selected_k)
        warning = int(selected and not result.met)
        lines.append(
            f"{row.k},{_fmt(row.coverage)},{_fmt(row.cardinality)},{selected},{warning}"
        )
        marker = " *" if selected else ""
        print(f"{row.k:<2} {row.coverage:>8.4f} {row.cardinality:>12.3f}{marker}")
    _write_atomic(os.path.join(outdir, "ksweep.csv"), "\n".join(lines) + "\n")
    if result.met:
        print(f"selected k={result.selected_k} (smallest k reaching coverage {result.target})")
    else:
        print(f"warning: no k reached coverage {result.target}; falling back to k={result.selected_k}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedconform",
        description="federated conformal prediction simulator",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON config file")
        p.add_argument("--output", help="override output.directory from the config")
        p.add_argument("--seed-override", type=int, help="replace all three named seeds")
        p.add_argument("--threads", type=int, default=1, help="worker threads (0 = auto)")

    p_gen = sub.add_parser("generate", help="write the synthetic dataset as CSV")
    common(p_gen)
    p_gen.set_defaults(func=_cmd_generate)

    p_run = sub.add_parser("run", help="run the experiment and write reports")
    common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep-k", help="coverage/cardinality per k and minimal k")
    common(p_sweep)
    p_sweep.add_argument("--alpha", type=float, help="miscoverage level (default: first configured)")
    p_sweep.set_defaults(func=_cmd_sweep_k)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
