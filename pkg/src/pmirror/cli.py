"""Command line: ``pmirror simulate | verify | sweep``.

Exit codes: 0 ok, 1 bad config or input, 2 counterexample found, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core_model import LatencyModelConfig
from .crash_checker import LimitExceeded, ProgramShapeError, UndoLogProgram, verify_strategy
from .report import ConfigError, ExperimentConfig, TracePath, TransactGrid, emit, render, run_experiment
from .strategies import ALL_STRATEGIES, Strategy
from .workloads import TraceError, WhisperLikeConfig, load_trace

EXIT_OK, EXIT_CONFIG, EXIT_COUNTEREXAMPLE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("pmirror")


def _strategies(name: str):
    if name == "all":
        return ALL_STRATEGIES
    return (Strategy.parse(name),)


def _range(text: str):
    lo, _, hi = text.partition(":")
    return int(lo), int(hi or lo)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmirror", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("simulate", help="run one workload under one or all strategies")
    sim.add_argument("--workload", choices=("transact", "whisper-like"), default="transact")
    sim.add_argument("--trace", help="replay a trace file instead of generating a workload")
    sim.add_argument("--epochs", type=int, default=1)
    sim.add_argument("--writes", type=int, default=1)
    sim.add_argument("--txns", type=int, default=10_000)
    sim.add_argument("--fraction", type=float, default=0.05)
    sim.add_argument("--mean-writes", type=float, default=1.4)
    sim.add_argument("--epochs-range", type=_range, default=(10, 300))
    sim.add_argument("--strategy", default="all")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--rtt", type=int, default=LatencyModelConfig.rdma_rtt_ns, help="RDMA round trip, ns")
    sim.add_argument("--out")
    sim.add_argument("--format", choices=("csv", "json"), default="csv")

    ver = sub.add_parser("verify", help="check crash consistency of an undo-log trace")
    ver.add_argument("--trace", required=True)
    ver.add_argument("--strategy", default="all")
    ver.add_argument("--limit", type=int, default=20)
    ver.add_argument("--out")

    sw = sub.add_parser("sweep", help="run an experiment described by a JSON config")
    sw.add_argument("--config", required=True)
    return p


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_simulate(args) -> int:
    if args.trace:
        workload = TracePath(args.trace)
    elif args.workload == "transact":
        workload = TransactGrid((args.epochs,), (args.writes,), args.txns)
    else:
        workload = WhisperLikeConfig(args.fraction, args.mean_writes, args.epochs_range, args.txns)
    cfg = ExperimentConfig(workload=workload, strategies=_strategies(args.strategy),
                           latency=LatencyModelConfig(rdma_rtt_ns=args.rtt), seed=args.seed,
                           output=args.out, format=args.format)
    _write(render(run_experiment(cfg), cfg.format), cfg.output)
    return EXIT_OK


def _cmd_verify(args) -> int:
    ulp = UndoLogProgram.infer(load_trace(args.trace))
    names = [s for s in _strategies(args.strategy)]
    verdicts = [verify_strategy(ulp, s, args.limit) for s in names]
    doc = verdicts[0].to_dict() if len(verdicts) == 1 else [v.to_dict() for v in verdicts]
    _write(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK if all(v.ok for v in verdicts) else EXIT_COUNTEREXAMPLE


def _cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    report = run_experiment(cfg)
    if cfg.output:
        emit(report, cfg.output, cfg.format)
    else:
        sys.stdout.write(render(report, cfg.format))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"simulate": _cmd_simulate, "verify": _cmd_verify, "sweep": _cmd_sweep}[args.cmd]
    try:
        return handler(args)
    except (ConfigError, TraceError, ProgramShapeError, LimitExceeded, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
