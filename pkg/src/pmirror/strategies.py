"""Transaction programs, their lowering to primitive traces, and the persist
orders each replication strategy guarantees."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np


class Strategy(enum.Enum):
    NoSm = "nosm"
    SmRc = "smrc"
    SmOb = "smob"
    SmDd = "smdd"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        key = name.lower().replace("-", "").replace("_", "")
        for s in cls:
            if s.value == key:
                return s
        raise ValueError(f"unknown strategy {name!r}")


ALL_STRATEGIES = (Strategy.NoSm, Strategy.SmRc, Strategy.SmOb, Strategy.SmDd)


@dataclass(frozen=True)
class Write:
    address: int
    write_id: int


@dataclass(eq=False)
class TransactionProgram:
    """Flat, array-backed program.

    ``addresses[i]`` is the cacheline written by write ``i`` (its write id is
    ``i``); ``epoch_offsets`` splits writes into epochs and ``txn_offsets``
    splits epochs into transactions.
    """

    addresses: np.ndarray
    epoch_offsets: np.ndarray
    txn_offsets: np.ndarray
    e: Optional[int] = None
    w: Optional[int] = None

    def __post_init__(self):
        self.addresses = np.ascontiguousarray(self.addresses, dtype=np.int64)
        self.epoch_offsets = np.ascontiguousarray(self.epoch_offsets, dtype=np.int64)
        self.txn_offsets = np.ascontiguousarray(self.txn_offsets, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        eo, to = self.epoch_offsets, self.txn_offsets
        if len(eo) < 1 or eo[0] != 0 or eo[-1] != len(self.addresses):
            raise ValueError("epoch offsets must span every write")
        if len(to) < 1 or to[0] != 0 or to[-1] != len(eo) - 1:
            raise ValueError("transaction offsets must span every epoch")
        if len(eo) > 1 and np.any(np.diff(eo) < 1):
            raise ValueError("every epoch needs at least one write")
        if len(to) > 1 and np.any(np.diff(to) < 1):
            raise ValueError("every transaction needs at least one epoch")

    @classmethod
    def from_nested(cls, txns: Sequence[Sequence[Sequence[int]]]) -> "TransactionProgram":
        """Build from ``[[ [addr, ...], ... ], ...]`` (txn -> epoch -> addresses)."""
        addrs: list[int] = []
        eo, to = [0], [0]
        for txn in txns:
            for epoch in txn:
                addrs.extend(int(a) for a in epoch)
                eo.append(len(addrs))
            to.append(len(eo) - 1)
        return cls(np.array(addrs, dtype=np.int64), np.array(eo), np.array(to))

    @property
    def num_writes(self) -> int:
        return len(self.addresses)

    @property
    def num_epochs(self) -> int:
        return len(self.epoch_offsets) - 1

    @property
    def num_txns(self) -> int:
        return len(self.txn_offsets) - 1

    def epoch_of_write(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_epochs), np.diff(self.epoch_offsets))

    def txn_of_epoch(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_txns), np.diff(self.txn_offsets))

    def txn_of_write(self) -> np.ndarray:
        return self.txn_of_epoch()[self.epoch_of_write()]

    def transactions(self) -> Iterator[list[list[Write]]]:
        eo, to = self.epoch_offsets, self.txn_offsets
        for t in range(self.num_txns):
            epochs = []
            for ep in range(to[t], to[t + 1]):
                epochs.append([Write(int(self.addresses[i]), i) for i in range(eo[ep], eo[ep + 1])])
            yield epochs

    def to_bytes(self) -> bytes:
        return b"".join(a.astype("<i8").tobytes() for a in
                        (np.array([self.num_writes, self.num_epochs, self.num_txns]),
                         self.addresses, self.epoch_offsets, self.txn_offsets))

    def __eq__(self, other):
        return isinstance(other, TransactionProgram) and self.to_bytes() == other.to_bytes()


class OpKind(enum.Enum):
    STORE = "st"
    CLWB = "clwb"
    WRITE = "write"
    WRITE_WT = "write_wt"
    WRITE_NT = "write_nt"
    SFENCE = "sfence"
    RCOMMIT = "rcommit"
    ROFENCE = "rofence"
    RDFENCE = "rdfence"
    SENTINEL_READ = "read0"


REMOTE_WRITES = (OpKind.WRITE, OpKind.WRITE_WT, OpKind.WRITE_NT)
ORDERING_OPS = (OpKind.RCOMMIT, OpKind.ROFENCE, OpKind.RDFENCE, OpKind.SENTINEL_READ)
DURABILITY_OPS = (OpKind.RCOMMIT, OpKind.RDFENCE, OpKind.SENTINEL_READ)
REMOTE_OPS = REMOTE_WRITES + ORDERING_OPS


@dataclass(frozen=True)
class Op:
    kind: OpKind
    address: Optional[int] = None
    write_id: Optional[int] = None
    qp: Optional[int] = None

    def __repr__(self):
        if self.write_id is None:
            return self.kind.value
        return f"{self.kind.value}({self.address:#x})"


@dataclass
class PrimitiveTrace:
    strategy: Optional[Strategy]
    ops: list[Op] = field(default_factory=list)
    # (first op, one past last op) per transaction
    txn_spans: list[tuple[int, int]] = field(default_factory=list)

    def kinds(self) -> list[str]:
        return [op.kind.value for op in self.ops]

    def count(self, kind: OpKind) -> int:
        return sum(1 for op in self.ops if op.kind is kind)

    def remote_writes(self) -> list[Op]:
        return [op for op in self.ops if op.kind in REMOTE_WRITES]

    def without(self, index: int) -> "PrimitiveTrace":
        """Copy with op ``index`` deleted (for fault-injection checks)."""
        ops = self.ops[:index] + self.ops[index + 1:]
        spans = []
        for a, b in self.txn_spans:
            spans.append((a - (a > index), b - (b > index)))
        return PrimitiveTrace(self.strategy, ops, spans)


_WRITE_KIND = {Strategy.SmRc: OpKind.WRITE, Strategy.SmOb: OpKind.WRITE_WT, Strategy.SmDd: OpKind.WRITE_NT}


def lower(program: TransactionProgram, s: Strategy) -> PrimitiveTrace:
    trace = PrimitiveTrace(s)
    ops = trace.ops
    remote_kind = _WRITE_KIND.get(s)
    qp = 0 if s is Strategy.SmDd else None
    for txn in program.transactions():
        start = len(ops)
        for k, epoch in enumerate(txn):
            last = k == len(txn) - 1
            for wr in epoch:
                ops.append(Op(OpKind.STORE, wr.address, wr.write_id))
                ops.append(Op(OpKind.CLWB, wr.address, wr.write_id))
                if remote_kind is not None:
                    ops.append(Op(remote_kind, wr.address, wr.write_id, qp))
            ops.append(Op(OpKind.SFENCE))
            if s is Strategy.SmRc:
                ops.append(Op(OpKind.RCOMMIT))
            elif s is Strategy.SmOb:
                ops.append(Op(OpKind.RDFENCE if last else OpKind.ROFENCE))
            elif s is Strategy.SmDd and last:
                ops.append(Op(OpKind.SENTINEL_READ, 0, None, 0))
        trace.txn_spans.append((start, len(ops)))
    return trace


@dataclass(frozen=True)
class PersistOrderConstraint:
    """Weak order over remote writes: ``a`` must persist before ``b`` iff
    ``rank[a] < rank[b]``.  ``durable_prefixes[k]`` is how many writes (in
    trace order) precede the k-th durability point at ``durability_points[k]``."""

    write_ids: tuple[int, ...]
    rank: dict
    durability_points: tuple[int, ...]
    durable_prefixes: tuple[int, ...]

    def precedes(self, a: int, b: int) -> bool:
        return self.rank[a] < self.rank[b]

    def pairs(self) -> set[tuple[int, int]]:
        return {(a, b) for a, b in itertools.permutations(self.write_ids, 2) if self.precedes(a, b)}

    def predecessors(self, b: int) -> list[int]:
        rb = self.rank[b]
        return [a for a in self.write_ids if self.rank[a] < rb]

    def is_downward_closed(self, persisted) -> bool:
        persisted = set(persisted)
        if not persisted:
            return True
        # a weak order is closed iff every level below the top one is complete
        top = max(self.rank[b] for b in persisted)
        return all(a in persisted for a in self.write_ids if self.rank[a] < top)


def constraints_from_trace(trace: PrimitiveTrace) -> PersistOrderConstraint:
    """Persist order implied by the remote ops of a trace.

    Any remote fence orders everything before it ahead of everything after
    it; non-temporal writes on one queue pair are ordered among themselves;
    other writes in the same interval are unordered.
    """
    level = 0
    pending = False
    ids: list[int] = []
    rank: dict[int, int] = {}
    points, prefixes = [], []
    nt_qps = set()
    for i, op in enumerate(trace.ops):
        if op.kind in REMOTE_WRITES:
            if op.kind is OpKind.WRITE_NT:
                nt_qps.add(op.qp)
                if len(nt_qps) > 1:
                    raise ValueError("non-temporal writes must share one queue pair")
                if pending:
                    level += 1
            ids.append(op.write_id)
            rank[op.write_id] = level
            pending = True
            if op.kind is OpKind.WRITE_NT:
                level += 1
                pending = False
        elif op.kind in ORDERING_OPS:
            if pending:
                level += 1
                pending = False
            if op.kind in DURABILITY_OPS:
                points.append(i)
                prefixes.append(len(ids))
    return PersistOrderConstraint(tuple(ids), rank, tuple(points), tuple(prefixes))


def constraints(program: TransactionProgram, s: Strategy) -> PersistOrderConstraint:
    if s is Strategy.NoSm:
        raise ValueError("NO-SM has no remote writes to order")
    return constraints_from_trace(lower(program, s))
