"""Sweep runner and report emitters (CSV / JSON)."""
from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ._kernel import fast_simulate
from .core_model import CacheGeometry, LatencyModelConfig
from .simulator import simulate
from .strategies import ALL_STRATEGIES, Strategy, TransactionProgram
from .workloads import (
    TransactConfig,
    WhisperLikeConfig,
    gen_transact,
    gen_whisper_like,
    load_trace,
)

CSV_COLUMNS = ("strategy", "e", "w", "slowdown", "mean_txn_ns", "p99_txn_ns", "stall_ns", "fences")

DEFAULT_EPOCHS = (1, 4, 16, 64, 256)
DEFAULT_WRITES = (1, 2, 4, 8)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TransactGrid:
    epochs: tuple = DEFAULT_EPOCHS
    writes: tuple = DEFAULT_WRITES
    num_txns: int = 10_000
    address_space_bytes: int = 64 << 20


@dataclass(frozen=True)
class TracePath:
    path: str


Workload = Union[TransactGrid, WhisperLikeConfig, TracePath]


@dataclass(frozen=True)
class ExperimentConfig:
    workload: Workload = field(default_factory=TransactGrid)
    strategies: tuple = ALL_STRATEGIES
    latency: LatencyModelConfig = field(default_factory=LatencyModelConfig)
    geometry: CacheGeometry = field(default_factory=CacheGeometry)
    seed: int = 0
    output: Optional[str] = None
    format: str = "csv"
    workers: Optional[int] = None
    engine: str = "fast"

    def __post_init__(self):
        if not self.strategies:
            raise ConfigError("strategies must not be empty")
        strategies = tuple(dict.fromkeys((Strategy.NoSm, *self.strategies)))
        object.__setattr__(self, "strategies", strategies)
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.engine not in ("fast", "reference"):
            raise ConfigError(f"unknown engine {self.engine!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        try:
            wl = d.pop("workload", {"kind": "transact"})
            strategies = d.pop("strategies", "all")
            if isinstance(strategies, str):
                strategies = [strategies]
            parsed = []
            for s in strategies:
                parsed.extend(ALL_STRATEGIES if s == "all" else [Strategy.parse(s)])
            latency = LatencyModelConfig(**d.pop("latency", {}))
            geometry = CacheGeometry(**d.pop("geometry", {}))
            unknown = set(d) - {f.name for f in fields(cls)}
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            return cls(workload=_workload_from_dict(wl), strategies=tuple(parsed),
                       latency=latency, geometry=geometry, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)


def _workload_from_dict(wl: dict) -> Workload:
    wl = dict(wl)
    kind = wl.pop("kind", "transact")
    if kind == "transact":
        if "epochs" in wl:
            wl["epochs"] = tuple(np.atleast_1d(wl["epochs"]).tolist())
        if "writes" in wl:
            wl["writes"] = tuple(np.atleast_1d(wl["writes"]).tolist())
        return TransactGrid(**wl)
    if kind == "whisper-like":
        if "epochs_per_txn_range" in wl:
            wl["epochs_per_txn_range"] = tuple(wl["epochs_per_txn_range"])
        return WhisperLikeConfig(**wl)
    if kind == "trace":
        return TracePath(**wl)
    raise ConfigError(f"unknown workload kind {kind!r}")


@dataclass
class ReportRow:
    strategy: str
    e: Union[int, float]
    w: Union[int, float]
    slowdown: float
    mean_txn_ns: float
    p50_txn_ns: float
    p99_txn_ns: float
    stall_ns: int
    fences: int
    total_ns: int
    throughput_ratio: float


@dataclass
class SimReport:
    rows: list = field(default_factory=list)

    def get(self, strategy: Strategy, e=None, w=None) -> ReportRow:
        for r in self.rows:
            if r.strategy == strategy.value and (e is None or r.e == e) and (w is None or r.w == w):
                return r
        raise KeyError((strategy, e, w))

    def to_dict(self) -> dict:
        return {"columns": list(CSV_COLUMNS), "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "SimReport":
        return cls([ReportRow(**r) for r in d["rows"]])


def _points(cfg: ExperimentConfig):
    """Yield (e, w, make) per workload point; ``make()`` -> (program, volatile_ns)."""
    wl = cfg.workload
    if isinstance(wl, TransactGrid):
        for e in wl.epochs:
            for w in wl.writes:
                tc = TransactConfig(int(e), int(w), wl.num_txns, wl.address_space_bytes, cfg.seed)
                yield int(e), int(w), (lambda tc=tc: (gen_transact(tc), 0))
    elif isinstance(wl, WhisperLikeConfig):
        wl = WhisperLikeConfig(**{**asdict(wl), "seed": cfg.seed})
        program, vol = gen_whisper_like(wl)
        e, w = _shape(program)
        yield e, w, (lambda: (program, vol.ns_per_persistent_write))
    else:
        program = load_trace(wl.path, cfg.geometry.cacheline_bytes)
        e, w = _shape(program)
        yield e, w, (lambda: (program, 0))


def _shape(program: TransactionProgram):
    return (round(program.num_epochs / program.num_txns, 3),
            round(program.num_writes / program.num_epochs, 3))


def _row(strategy: Strategy, e, w, res, base_total: int) -> ReportRow:
    lat = res.txn_latency_ns
    slowdown = res.total_ns / base_total if base_total else 1.0
    if strategy is Strategy.NoSm:
        slowdown = 1.0
    return ReportRow(
        strategy=strategy.value, e=e, w=w,
        slowdown=float(slowdown),
        mean_txn_ns=float(lat.mean()),
        p50_txn_ns=float(np.percentile(lat, 50)),
        p99_txn_ns=float(np.percentile(lat, 99)),
        stall_ns=int(res.stall_ns),
        fences=int(res.remote_fences),
        total_ns=int(res.total_ns),
        throughput_ratio=1.0 / slowdown,
    )


def run_experiment(cfg: ExperimentConfig) -> SimReport:
    sim = fast_simulate if cfg.engine == "fast" else simulate

    def run_point(point):
        e, w, make = point
        program, vol = make()
        results = {s: sim(program, s, cfg.latency, cfg.geometry, vol) for s in cfg.strategies}
        base = results[Strategy.NoSm].total_ns
        return [_row(s, e, w, results[s], base) for s in ALL_STRATEGIES if s in results]

    points = list(_points(cfg))
    workers = cfg.workers or min(len(points), os.cpu_count() or 1) or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        chunks = list(pool.map(run_point, points))
    return SimReport([r for chunk in chunks for r in chunk])


def render(report: SimReport, fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n"
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for r in report.rows:
        d = asdict(r)
        wr.writerow([d[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def emit(report: SimReport, path, fmt: str = "csv") -> Path:
    path = Path(path)
    path.write_text(render(report, fmt), encoding="utf-8")
    return path


def read_json_report(path) -> SimReport:
    return SimReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
