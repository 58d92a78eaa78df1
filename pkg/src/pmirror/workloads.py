"""Workload generators (Transact sweep points, WHISPER-like synthetic
programs) and the line-oriented trace format."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.optimize import brentq

from .strategies import TransactionProgram

log = logging.getLogger(__name__)

CACHELINE = 64


class TraceError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class TransactConfig:
    epochs_per_txn: int = 1
    writes_per_epoch: int = 1
    num_txns: int = 10_000
    address_space_bytes: int = 64 << 20
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.epochs_per_txn <= 256:
            raise ValueError("epochs_per_txn must be in [1, 256]")
        if not 1 <= self.writes_per_epoch <= 8:
            raise ValueError("writes_per_epoch must be in [1, 8]")
        if self.num_txns < 1:
            raise ValueError("num_txns must be >= 1")
        if self.address_space_bytes < CACHELINE:
            raise ValueError("address space smaller than one cacheline")


@dataclass(frozen=True)
class WhisperLikeConfig:
    persistent_write_fraction: float = 0.05
    mean_writes_per_epoch: float = 1.4
    epochs_per_txn_range: tuple[int, int] = (10, 300)
    num_txns: int = 10_000
    seed: int = 0
    volatile_write_ns: int = 30
    max_writes_per_epoch: int = 8
    address_space_bytes: int = 64 << 20

    def __post_init__(self):
        lo, hi = self.epochs_per_txn_range
        if not 0 < self.persistent_write_fraction <= 1:
            raise ValueError("persistent_write_fraction must be in (0, 1]")
        if not 1 <= self.mean_writes_per_epoch <= (self.max_writes_per_epoch + 1) / 2:
            raise ValueError("mean_writes_per_epoch out of reach of the truncated geometric")
        if not 1 <= lo <= hi:
            raise ValueError("need 1 <= low <= high for epochs_per_txn_range")
        if self.num_txns < 1:
            raise ValueError("num_txns must be >= 1")


@dataclass(frozen=True)
class VolatileWork:
    """Time spent on volatile stores ahead of each persistent write."""
    volatile_writes_per_persistent: float
    ns_per_persistent_write: int


def gen_transact(cfg: TransactConfig) -> TransactionProgram:
    rng = np.random.default_rng(cfg.seed)
    e, w, t = cfg.epochs_per_txn, cfg.writes_per_epoch, cfg.num_txns
    lines = cfg.address_space_bytes // CACHELINE
    addrs = rng.integers(0, lines, size=t * e * w, dtype=np.int64) * CACHELINE
    return TransactionProgram(addrs, np.arange(0, t * e * w + 1, w), np.arange(0, t * e + 1, e), e=e, w=w)


def truncated_geometric_pmf(mean: float, kmax: int) -> np.ndarray:
    """pmf over 1..kmax, P(k) proportional to q**(k-1), with the given mean."""
    ks = np.arange(1, kmax + 1)

    def pmf(q):
        p = q ** (ks - 1)
        return p / p.sum()

    if mean <= 1.0:
        out = np.zeros(kmax)
        out[0] = 1.0
        return out
    if mean >= (kmax + 1) / 2:
        return np.full(kmax, 1.0 / kmax)
    q = brentq(lambda q: pmf(q) @ ks - mean, 0.0, 1.0, xtol=1e-14)
    return pmf(q)


def gen_whisper_like(cfg: WhisperLikeConfig) -> tuple[TransactionProgram, VolatileWork]:
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.epochs_per_txn_range
    epochs = rng.integers(lo, hi + 1, size=cfg.num_txns)
    pmf = truncated_geometric_pmf(cfg.mean_writes_per_epoch, cfg.max_writes_per_epoch)
    sizes = rng.choice(np.arange(1, cfg.max_writes_per_epoch + 1), size=int(epochs.sum()), p=pmf)
    n = int(sizes.sum())
    addrs = rng.integers(0, cfg.address_space_bytes // CACHELINE, size=n, dtype=np.int64) * CACHELINE
    program = TransactionProgram(addrs, np.concatenate([[0], np.cumsum(sizes)]),
                                 np.concatenate([[0], np.cumsum(epochs)]))
    f = cfg.persistent_write_fraction
    ratio = (1.0 - f) / f
    return program, VolatileWork(ratio, int(round(ratio * cfg.volatile_write_ns)))


def load_trace(path: Union[str, Path], cacheline_bytes: int = CACHELINE) -> TransactionProgram:
    txns: list[list[list[int]]] = []
    txn = None
    epoch: list[int] = []
    lineno = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0].upper()
            if tag == "TX_BEGIN":
                if txn is not None:
                    raise TraceError(lineno, "TX_BEGIN inside an open transaction")
                txn, epoch = [], []
            elif tag == "W":
                if txn is None:
                    raise TraceError(lineno, "write outside a transaction")
                if len(parts) != 3:
                    raise TraceError(lineno, "expected 'W <hex-address> <bytes>'")
                try:
                    addr, size = int(parts[1], 16), int(parts[2], 0)
                except ValueError:
                    raise TraceError(lineno, f"bad write record {line!r}") from None
                if addr < 0 or size < 1:
                    raise TraceError(lineno, "address must be >= 0 and size >= 1")
                if addr % cacheline_bytes:
                    log.warning("line %d: address %#x not cacheline aligned, rounding down", lineno, addr)
                first = addr // cacheline_bytes
                last = (addr + size - 1) // cacheline_bytes
                epoch.extend(k * cacheline_bytes for k in range(first, last + 1))
            elif tag == "OFENCE":
                if txn is None:
                    raise TraceError(lineno, "OFENCE outside a transaction")
                if not epoch:
                    raise TraceError(lineno, "empty epoch")
                txn.append(epoch)
                epoch = []
            elif tag == "TX_END":
                if txn is None:
                    raise TraceError(lineno, "TX_END without TX_BEGIN")
                if epoch:
                    txn.append(epoch)
                elif txn:
                    raise TraceError(lineno, "empty epoch before TX_END")
                if not txn:
                    raise TraceError(lineno, "empty transaction")
                txns.append(txn)
                txn, epoch = None, []
            else:
                raise TraceError(lineno, f"unknown record {parts[0]!r}")
    if txn is not None:
        raise TraceError(lineno, "missing TX_END at end of file")
    if not txns:
        raise TraceError(1, "trace holds no transactions")
    return TransactionProgram.from_nested(txns)


def dump_trace(program: TransactionProgram, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for txn in program.transactions():
            fh.write("TX_BEGIN\n")
            for k, epoch in enumerate(txn):
                if k:
                    fh.write("OFENCE\n")
                for wr in epoch:
                    fh.write(f"W {wr.address:x} {CACHELINE}\n")
            fh.write("TX_END\n")
