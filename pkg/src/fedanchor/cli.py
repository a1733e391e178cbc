"""Command-line entry point.

Subcommands: run (one experiment), ablate (all four modes), dump-embeddings
(final-model embeddings for offline visualization), verify-trace (recheck a
trace file's ledgers and invariants). Output file names are fixed:
metrics.csv, trace.jsonl, embeddings.csv, ablation.csv.

Exit status: 0 on success, 2 for configuration errors, 1 for anything else.
Failures print one line to stderr: "fedanchor: error: <Type>: <message>".
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ExperimentConfig, parse_config
from .errors import ConfigError, SimulationError
from .protocol import (
    run_ablation,
    run_experiment,
    write_embeddings_file,
    write_metrics_file,
    write_trace_file,
)
from .trace import verify_trace


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to a key=value config file")
    parser.add_argument("--out", default=".", help="output directory (created if absent)")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--mode", default=None, help="override the ablation mode")
    parser.add_argument("--rounds", type=int, default=None, help="override the round count")


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = parse_config(args.config)
    return cfg.with_overrides(seed=args.seed, mode=args.mode, rounds=args.rounds)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result = run_experiment(cfg)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    trace_path = os.path.join(args.out, "trace.jsonl")
    write_metrics_file(metrics_path, result)
    write_trace_file(trace_path, result)
    verify_trace(trace_path)  # a run must never emit a trace it cannot verify
    final = result.rounds[-1]
    print(
        f"run complete: mode={cfg.mode} rounds={cfg.rounds} "
        f"final mean_acc={final.mean_acc:.4f}; wrote {metrics_path}, {trace_path}"
    )
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for mode, result in run_ablation(cfg):
        mode_dir = os.path.join(args.out, mode)
        os.makedirs(mode_dir, exist_ok=True)
        write_metrics_file(os.path.join(mode_dir, "metrics.csv"), result)
        trace_path = os.path.join(mode_dir, "trace.jsonl")
        write_trace_file(trace_path, result)
        verify_trace(trace_path)
        rows.append(
            {
                "mode": mode,
                "final_mean_acc": result.rounds[-1].mean_acc,
                "uplink_values": sum(rt.uplink_values for rt in result.rounds),
                "uplink_indices": sum(rt.uplink_indices for rt in result.rounds),
                "uplink_proto_scalars": sum(rt.uplink_proto_scalars for rt in result.rounds),
                "downlink_scalars": sum(rt.downlink_scalars for rt in result.rounds),
            }
        )
    table_path = os.path.join(args.out, "ablation.csv")
    with open(table_path, "w") as fh:
        fh.write(
            "mode,final_mean_acc,uplink_values,uplink_indices,"
            "uplink_proto_scalars,downlink_scalars\n"
        )
        for row in rows:
            fh.write(
                f"{row['mode']},{row['final_mean_acc']!r},{row['uplink_values']},"
                f"{row['uplink_indices']},{row['uplink_proto_scalars']},"
                f"{row['downlink_scalars']}\n"
            )
    for row in rows:
        print(
            f"{row['mode']:>8}: final mean_acc={row['final_mean_acc']:.4f} "
            f"uplink_values={row['uplink_values']}"
        )
    print(f"wrote {table_path}")
    return 0


def cmd_dump_embeddings(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result = run_experiment(cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "embeddings.csv")
    write_embeddings_file(path, result)
    print(f"wrote {path}")
    return 0


def cmd_verify_trace(args: argparse.Namespace) -> int:
    report = verify_trace(args.trace)
    print(
        f"trace OK: {report['rounds']} rounds, {report['records']} records, "
        f"uplink_values={report['uplink_values']}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedanchor",
        description="Deterministic desk-scale federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_ablate = sub.add_parser("ablate", help="run all four ablation modes")
    _add_common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_dump = sub.add_parser("dump-embeddings", help="write final-model embeddings")
    _add_common(p_dump)
    p_dump.set_defaults(func=cmd_dump_embeddings)

    p_verify = sub.add_parser("verify-trace", help="recheck an existing trace file")
    p_verify.add_argument("trace", help="path to a trace.jsonl")
    p_verify.set_defaults(func=cmd_verify_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fedanchor: error: ConfigError: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"fedanchor: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fedanchor: error: OSError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
