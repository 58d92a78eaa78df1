"""Crash-consistency checking for undo-logging transactions on the replica.

A crash leaves some set of remote writes in PM.  The reachable sets are the
downward-closed sets of a strategy's persist order, further restricted by
the durability points the host had already passed when it crashed.  Each
reachable set is run through undo-log recovery and compared with the images
the program is allowed to leave behind.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .strategies import (
    DURABILITY_OPS,
    REMOTE_WRITES,
    Op,
    OpKind,
    PersistOrderConstraint,
    PrimitiveTrace,
    Strategy,
    TransactionProgram,
    constraints_from_trace,
    lower,
)

ATOMICITY = "atomicity"
DURABILITY = "durability"

LOG, DATA, COMMIT = "log", "data", "commit"


class LimitExceeded(ValueError):
    pass


class ProgramShapeError(ValueError):
    pass


@dataclass(frozen=True)
class UndoLogTransaction:
    """prepare-log epoch, one or more mutate epochs, then a single commit-record
    write in its own epoch."""

    log: tuple
    mutate: tuple
    commit: int

    def __post_init__(self):
        object.__setattr__(self, "log", tuple(int(a) for a in self.log))
        object.__setattr__(self, "mutate", tuple(tuple(int(a) for a in ep) for ep in self.mutate))
        if not self.log:
            raise ProgramShapeError("log epoch is empty")
        if not self.mutate or any(not ep for ep in self.mutate):
            raise ProgramShapeError("need at least one non-empty mutate epoch")
        data = self.data_addresses()
        if data & (set(self.log) | {self.commit}):
            raise ProgramShapeError("log/commit addresses overlap the data region")

    def data_addresses(self) -> set:
        return {a for ep in self.mutate for a in ep}

    def epochs(self) -> list:
        return [list(self.log), *map(list, self.mutate), [self.commit]]


@dataclass
class UndoLogProgram:
    program: TransactionProgram
    roles: list  # per write id: (txn index, LOG | DATA | COMMIT)

    @classmethod
    def build(cls, txns: Sequence[UndoLogTransaction]) -> "UndoLogProgram":
        program = TransactionProgram.from_nested([t.epochs() for t in txns])
        return cls(program, _roles_by_position(program))

    @classmethod
    def infer(cls, program: TransactionProgram) -> "UndoLogProgram":
        """First epoch of each transaction is its log, the last (single-write)
        epoch its commit record, everything between is data."""
        return cls(program, _roles_by_position(program))

    @property
    def num_txns(self) -> int:
        return self.program.num_txns

    def writes_of(self, t: int) -> list:
        return [i for i, (tx, _) in enumerate(self.roles) if tx == t]

    def images(self) -> list:
        """images[k]: data region after the first k transactions committed."""
        img: dict = {}
        out = [dict(img)]
        for t in range(self.num_txns):
            for i in self.writes_of(t):
                if self.roles[i][1] == DATA:
                    img[int(self.program.addresses[i])] = i
            out.append(dict(img))
        return out


def _roles_by_position(program: TransactionProgram) -> list:
    eo, to = program.epoch_offsets, program.txn_offsets
    roles = [None] * program.num_writes
    data_addrs, meta_addrs = set(), set()
    for t in range(program.num_txns):
        first, last = int(to[t]), int(to[t + 1]) - 1
        if last - first < 2:
            raise ProgramShapeError(f"transaction {t} needs log, mutate and commit epochs")
        if eo[last + 1] - eo[last] != 1:
            raise ProgramShapeError(f"transaction {t}: commit epoch must hold exactly one write")
        for ep in range(first, last + 1):
            role = LOG if ep == first else COMMIT if ep == last else DATA
            for i in range(eo[ep], eo[ep + 1]):
                roles[i] = (t, role)
                (data_addrs if role == DATA else meta_addrs).add(int(program.addresses[i]))
    if data_addrs & meta_addrs:
        raise ProgramShapeError("log/commit addresses overlap the data region")
    return roles


@dataclass(frozen=True)
class CrashState:
    persisted: frozenset

    def __len__(self):
        return len(self.persisted)


@dataclass
class Counterexample:
    state: CrashState
    image: dict
    violated: str
    txn: int

    def to_dict(self) -> dict:
        return {
            "persisted": sorted(self.state.persisted),
            "image": {hex(a): v for a, v in sorted(self.image.items())},
            "violated": self.violated,
            "txn": self.txn,
        }


@dataclass
class Verdict:
    strategy: str
    ok: bool
    counterexample: Optional[Counterexample] = None
    states_checked: int = 0

    def to_dict(self) -> dict:
        d = {"strategy": self.strategy, "ok": self.ok}
        if self.counterexample is not None:
            d["counterexample"] = self.counterexample.to_dict()
        return d


# -- enumeration -----------------------------------------------------------

@dataclass
class _Space:
    order: PersistOrderConstraint
    ids: list
    preds: list = field(default_factory=list)   # bitmask over positions in ids
    forced: list = field(default_factory=list)  # bitmask required once position k persisted


def _space(trace: PrimitiveTrace, limit: int) -> _Space:
    order = constraints_from_trace(trace)
    ids = list(order.write_ids)
    if len(ids) > limit:
        raise LimitExceeded(f"{len(ids)} remote writes exceed the enumeration limit of {limit}")
    pos = {w: k for k, w in enumerate(ids)}
    sp = _Space(order, ids)
    for k, b in enumerate(ids):
        mask = 0
        for a in order.predecessors(b):
            if pos[a] > k:
                raise ValueError("persist order runs against trace order")
            mask |= 1 << pos[a]
        sp.preds.append(mask)
    # writes issued after a durability point imply it completed
    prefix = 0
    k = 0
    dur = iter(zip(order.durability_points, order.durable_prefixes))
    nxt = next(dur, None)
    for i, op in enumerate(trace.ops):
        while nxt is not None and nxt[0] < i:
            prefix = nxt[1]
            nxt = next(dur, None)
        if op.kind in REMOTE_WRITES:
            sp.forced.append((1 << prefix) - 1)
            k += 1
    return sp


def _ideals(sp: _Space) -> Iterator[int]:
    n = len(sp.ids)

    def rec(k, mask, top):
        if k == n:
            if top < 0 or (sp.forced[top] & ~mask) == 0:
                yield mask
            return
        yield from rec(k + 1, mask, top)
        if sp.preds[k] & ~mask == 0:
            yield from rec(k + 1, mask | (1 << k), k)

    yield from rec(0, 0, -1)


def _to_state(sp: _Space, mask: int) -> CrashState:
    return CrashState(frozenset(w for k, w in enumerate(sp.ids) if mask >> k & 1))


def enumerate_trace_states(trace: PrimitiveTrace, limit: int = 20) -> Iterator[CrashState]:
    sp = _space(trace, limit)
    for mask in _ideals(sp):
        yield _to_state(sp, mask)


def enumerate_crash_states(program: TransactionProgram, s: Strategy, limit: int = 20) -> Iterator[CrashState]:
    if s is Strategy.NoSm:
        raise ValueError("NO-SM has no remote writes")
    if program.num_writes > limit:
        raise LimitExceeded(f"{program.num_writes} writes exceed the enumeration limit of {limit}")
    return enumerate_trace_states(lower(program, s), limit)


# -- recovery --------------------------------------------------------------

def persisted_image(state: CrashState, ulp: UndoLogProgram) -> dict:
    """Data region as found in PM: newest persisted write per address."""
    img: dict = {}
    addrs = ulp.program.addresses
    for i in sorted(state.persisted):
        if ulp.roles[i][1] == DATA:
            img[int(addrs[i])] = i
    return img


def recover(state: CrashState, ulp: UndoLogProgram) -> dict:
    images = ulp.images()
    img = persisted_image(state, ulp)
    for t in reversed(range(ulp.num_txns)):
        mine = ulp.writes_of(t)
        commit = [i for i in mine if ulp.roles[i][1] == COMMIT]
        if all(i in state.persisted for i in commit):
            continue
        if all(i in state.persisted for i in mine if ulp.roles[i][1] == LOG):
            # roll back from the log: old values are the image before txn t
            before = images[t]
            for i in mine:
                if ulp.roles[i][1] == DATA:
                    a = int(ulp.program.addresses[i])
                    if a in before:
                        img[a] = before[a]
                    else:
                        img.pop(a, None)
        # partial log: discarded, data left as found
    return img


def _atomicity_violation(state: CrashState, ulp: UndoLogProgram, images: list) -> Optional[Counterexample]:
    committed = [t for t in range(ulp.num_txns)
                 if all(i in state.persisted for i in ulp.writes_of(t) if ulp.roles[i][1] == COMMIT)]
    img = recover(state, ulp)
    k = len(committed)
    if committed == list(range(k)) and img == images[k]:
        return None
    # blame the first transaction that did not commit (or the last one)
    bad = next((t for t in range(ulp.num_txns) if t not in committed), ulp.num_txns - 1)
    return Counterexample(state, img, ATOMICITY, bad)


def verify_trace(trace: PrimitiveTrace, ulp: UndoLogProgram, limit: int = 20,
                 name: Optional[str] = None) -> Verdict:
    if len(ulp.roles) != ulp.program.num_writes:
        raise ProgramShapeError("roles do not cover the program")
    sp = _space(trace, limit)
    name = name or (trace.strategy.value if trace.strategy else "custom")
    images = ulp.images()
    found: list[Counterexample] = []

    # durability: once a transaction returns, its writes must be behind a
    # completed durability point
    order = sp.order
    for t, (a, b) in enumerate(trace.txn_spans):
        prefix = 0
        for p, n in zip(order.durability_points, order.durable_prefixes):
            if p < b:
                prefix = n
        covered = set(sp.ids[:prefix])
        if not set(ulp.writes_of(t)) <= covered:
            state = CrashState(frozenset(covered))
            found.append(Counterexample(state, recover(state, ulp), DURABILITY, t))
            break

    checked = 0
    for mask in _ideals(sp):
        checked += 1
        if found and bin(mask).count("1") >= len(found[0].state):
            continue
        cx = _atomicity_violation(_to_state(sp, mask), ulp, images)
        if cx is not None and (not found or len(cx.state) < len(found[0].state)):
            found = [cx]
    if not found:
        return Verdict(name, True, None, checked)
    return Verdict(name, False, found[0], checked)


def verify_strategy(program, s: Strategy, limit: int = 20) -> Verdict:
    ulp = program if isinstance(program, UndoLogProgram) else UndoLogProgram.infer(program)
    if s is Strategy.NoSm:
        return verify_trace(plain_trace(ulp.program, with_fences=False), ulp, limit, s.value)
    if ulp.program.num_writes > limit:
        raise LimitExceeded(f"{ulp.program.num_writes} writes exceed the enumeration limit of {limit}")
    return verify_trace(lower(ulp.program, s), ulp, limit)


def plain_trace(program: TransactionProgram, with_fences: bool = False) -> PrimitiveTrace:
    """Plain RDMA writes only: no ordering or durability primitive at all."""
    trace = PrimitiveTrace(None)
    for txn in program.transactions():
        start = len(trace.ops)
        for epoch in txn:
            for wr in epoch:
                trace.ops.append(Op(OpKind.WRITE, wr.address, wr.write_id))
            if with_fences:
                trace.ops.append(Op(OpKind.SFENCE))
        trace.txn_spans.append((start, len(trace.ops)))
    return trace


def drop_op(trace: PrimitiveTrace, kind: OpKind, nth: int = 0) -> PrimitiveTrace:
    """Delete the ``nth`` op of ``kind`` (fault injection)."""
    hits = [i for i, op in enumerate(trace.ops) if op.kind is kind]
    if nth >= len(hits):
        raise IndexError(f"trace has no {kind.value} #{nth}")
    return trace.without(hits[nth])


def is_linear_extension(persist_log: Sequence, order: PersistOrderConstraint, addresses) -> bool:
    """Does the observed MC persist order respect ``order``?

    ``persist_log`` holds ``(write_id, ...)`` tuples in persist order.  A line
    overwritten in the LLC before write-back reaches PM under its newest write
    id, which then stands in for the older same-address writes it absorbed.
    """
    return not linear_extension_violations(persist_log, order, addresses)


def linear_extension_violations(persist_log: Sequence, order: PersistOrderConstraint, addresses) -> list:
    by_addr: dict = {}
    for pos, rec in enumerate(persist_log):
        by_addr.setdefault(int(addresses[rec[0]]), []).append((rec[0], pos))
    where = {}
    for w in order.write_ids:
        # first entry for this address carrying this write or a newer one
        hits = [p for wid, p in by_addr.get(int(addresses[w]), ()) if wid >= w]
        where[w] = min(hits) if hits else None
    bad = [(w, w) for w in order.write_ids if where[w] is None]
    levels: dict = {}
    for w in order.write_ids:
        levels.setdefault(order.rank[w], []).append(w)
    hi = -1
    for r in sorted(levels):
        ws = [w for w in levels[r] if where[w] is not None]
        for w in ws:
            if where[w] < hi:
                bad.append((r, w))
        if ws:
            hi = max(hi, max(where[w] for w in ws))
    return bad
