"""Replica-side memory path: DDIO partition of the LLC, the LLC->MC port,
and the bounded memory-controller write queue draining to PM.

All times are integer nanoseconds on one simulated clock.  The memory
controller is a single FIFO server: an entry accepted at ``t`` completes at
``max(t, previous completion) + mc_to_pm_ns`` and frees its slot at that
instant.  Completions are scheduled at enqueue time, so the queue drains in
the background whether or not anybody is waiting on it.
"""
from __future__ import annotations

import bisect
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Optional

ACCEPTED = "accepted"
BACKPRESSURE = "backpressure"


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class CacheGeometry:
    # 16384 sets x 20 ways x 64B = 20MB L3; 2 DDIO ways = 2MB of DDIO buffering
    num_sets: int = 16384
    total_ways: int = 20
    ddio_ways: int = 2
    cacheline_bytes: int = 64

    def __post_init__(self):
        if self.num_sets < 1 or self.num_sets & (self.num_sets - 1):
            raise ValueError(f"num_sets must be a power of two, got {self.num_sets}")
        if not 1 <= self.ddio_ways <= self.total_ways:
            raise ValueError("need 1 <= ddio_ways <= total_ways")
        if self.cacheline_bytes < 1:
            raise ValueError("cacheline_bytes must be positive")


@dataclass(frozen=True)
class LatencyModelConfig:
    pcie_write_rtt_ns: int = 200
    llc_to_mc_ns: int = 10
    mc_queue_capacity: int = 64
    mc_to_pm_ns: int = 150
    rdma_rtt_ns: int = 2000
    local_clwb_ns: int = 0
    # queue pairs used by the multi-QP strategies (SM-RC, SM-OB)
    num_qps: int = 4
    # post rofence asynchronously unless set
    blocking_rofence: bool = False

    def __post_init__(self):
        for name in ("pcie_write_rtt_ns", "llc_to_mc_ns", "mc_to_pm_ns", "rdma_rtt_ns"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.mc_queue_capacity <= 0:
            raise ValueError("mc_queue_capacity must be > 0")
        if self.local_clwb_ns < 0:
            raise ValueError("local_clwb_ns must be >= 0")
        if self.num_qps < 1:
            raise ValueError("num_qps must be >= 1")

    @property
    def one_way_ns(self) -> int:
        """Host -> remote NIC leg of a verb round trip."""
        return self.rdma_rtt_ns // 2

    @property
    def return_ns(self) -> int:
        return self.rdma_rtt_ns - self.rdma_rtt_ns // 2


@dataclass(frozen=True)
class Cacheline:
    address: int
    write_id: int


def check_aligned(addr: int, geo: CacheGeometry) -> None:
    if addr < 0 or addr % geo.cacheline_bytes:
        raise AlignmentError(f"address {addr:#x} is not {geo.cacheline_bytes}-byte aligned")


def map_address_to_set(addr: int, geo: CacheGeometry) -> int:
    check_aligned(addr, geo)
    return (addr // geo.cacheline_bytes) % geo.num_sets


@dataclass
class McEntry:
    line: Cacheline
    accept_ns: int
    done_ns: int


class MemoryController:
    """Bounded FIFO write queue with one PM writer.

    ``enqueue`` must be called with non-decreasing times; earlier times are
    clamped to the last accept time so FIFO order always equals call order.
    """

    def __init__(self, capacity: int, service_ns: int):
        self.capacity = capacity
        self.service_ns = service_ns
        self.entries: list[McEntry] = []
        self._done: list[int] = []
        self._last_accept = 0
        self.stall_ns = 0

    def occupancy(self, t: int) -> int:
        """Entries accepted at or before ``t`` that have not completed by ``t``."""
        k = bisect.bisect_right(self._done, t)
        return sum(1 for e in self.entries[k:] if e.accept_ns <= t)

    def slot_free_at(self, t: int) -> int:
        """Earliest time >= t at which a new entry can be accepted."""
        t = max(t, self._last_accept)
        k = bisect.bisect_right(self._done, t)
        if len(self._done) - k >= self.capacity:
            t = self._done[len(self._done) - self.capacity]
        return t

    def has_room(self, t: int) -> bool:
        return self.slot_free_at(t) == max(t, self._last_accept)

    def enqueue(self, line: Cacheline, t: int) -> McEntry:
        want = max(t, self._last_accept)
        accept = self.slot_free_at(want)
        self.stall_ns += accept - want
        prev = self._done[-1] if self._done else 0
        entry = McEntry(line, accept, max(accept, prev) + self.service_ns)
        self.entries.append(entry)
        self._done.append(entry.done_ns)
        self._last_accept = accept
        return entry

    def last_done(self) -> int:
        return self._done[-1] if self._done else 0


@dataclass
class ReplicaState:
    geometry: CacheGeometry = field(default_factory=CacheGeometry)
    config: LatencyModelConfig = field(default_factory=LatencyModelConfig)
    clock_ns: int = 0

    def __post_init__(self):
        # set index -> OrderedDict(address -> [write_id, dirty]); LRU first
        self.ddio_lru: dict[int, OrderedDict] = {}
        self.mc = MemoryController(self.config.mc_queue_capacity, self.config.mc_to_pm_ns)
        self.pm: dict[int, int] = {}
        self.port_free_ns = 0
        self.port_stall_ns = 0
        self.eviction_log: list[Cacheline] = []
        self._addr_done: dict[int, int] = {}
        self._materialized = 0

    # -- clock -------------------------------------------------------------
    def advance(self, t: int) -> None:
        self.clock_ns = max(self.clock_ns, t)
        entries = self.mc.entries
        while self._materialized < len(entries) and entries[self._materialized].done_ns <= self.clock_ns:
            e = entries[self._materialized]
            self.pm[e.line.address] = e.line.write_id
            self._materialized += 1

    @property
    def mc_queue(self) -> list[McEntry]:
        """Entries resident in the MC queue at the current clock."""
        t = self.clock_ns
        return [e for e in self.mc.entries[self._materialized:] if e.accept_ns <= t < e.done_ns]

    @property
    def persist_log(self) -> list[McEntry]:
        """Every MC entry in persist order (scheduled, including future ones)."""
        return self.mc.entries

    # -- DDIO --------------------------------------------------------------
    def _set(self, addr: int) -> OrderedDict:
        idx = map_address_to_set(addr, self.geometry)
        lru = self.ddio_lru.get(idx)
        if lru is None:
            lru = self.ddio_lru[idx] = OrderedDict()
        return lru

    def resident(self, addr: int) -> bool:
        idx = map_address_to_set(addr, self.geometry)
        return addr in self.ddio_lru.get(idx, ())

    def is_dirty(self, addr: int) -> bool:
        idx = map_address_to_set(addr, self.geometry)
        slot = self.ddio_lru.get(idx, {}).get(addr)
        return bool(slot and slot[1])

    def ddio_insert(self, line: Cacheline, dirty: bool = True) -> Optional[Cacheline]:
        """Make ``line`` MRU in its set; return the evicted line if it was dirty."""
        lru = self._set(line.address)
        if line.address in lru:
            lru.move_to_end(line.address)
            lru[line.address] = [line.write_id, dirty]
            return None
        evicted = None
        if len(lru) >= self.geometry.ddio_ways:
            addr, (wid, was_dirty) = lru.popitem(last=False)
            self.eviction_log.append(Cacheline(addr, wid))
            if was_dirty:
                evicted = Cacheline(addr, wid)
        lru[line.address] = [line.write_id, dirty]
        return evicted

    def mark_clean(self, addr: int) -> None:
        lru = self._set(addr)
        if addr in lru:
            lru[addr][1] = False

    # -- LLC -> MC ---------------------------------------------------------
    def transfer(self, line: Cacheline, t: int) -> McEntry:
        """Move one line from the LLC into the MC queue through the port.

        The port carries one line per ``llc_to_mc_ns`` and stays blocked while
        the MC queue is full.
        """
        start = max(t, self.port_free_ns)
        arrive = start + self.config.llc_to_mc_ns
        stall_before = self.mc.stall_ns
        entry = self.mc.enqueue(line, arrive)
        self.port_stall_ns += self.mc.stall_ns - stall_before
        self.port_free_ns = entry.accept_ns
        self._addr_done[line.address] = entry.done_ns
        return entry

    def enqueue_direct(self, line: Cacheline, t: int) -> McEntry:
        """Non-temporal path: straight into the MC queue, stalling when full."""
        entry = self.mc.enqueue(line, t)
        self._addr_done[line.address] = entry.done_ns
        return entry

    def done_time(self, addr: int) -> Optional[int]:
        return self._addr_done.get(addr)

    def dirty_lines(self) -> list[Cacheline]:
        out = []
        for idx in sorted(self.ddio_lru):
            for addr, (wid, dirty) in self.ddio_lru[idx].items():
                if dirty:
                    out.append(Cacheline(addr, wid))
        return out

    @property
    def stall_ns(self) -> int:
        return self.mc.stall_ns


# -- operation-level API ---------------------------------------------------

def ddio_insert(state: ReplicaState, line: Cacheline) -> tuple[Optional[Cacheline], int]:
    check_aligned(line.address, state.geometry)
    return state.ddio_insert(line), 0


def mc_enqueue(state: ReplicaState, line: Cacheline) -> str:
    """Try to place ``line`` in the MC queue at the current clock."""
    state.advance(state.clock_ns)
    if not state.mc.has_room(state.clock_ns):
        return BACKPRESSURE
    state.enqueue_direct(line, state.clock_ns)
    return ACCEPTED


def mc_drain(state: ReplicaState, until_ns: int) -> ReplicaState:
    if until_ns < state.clock_ns:
        raise ValueError("until_ns precedes the replica clock")
    state.advance(until_ns)
    return state


def drain_all(state: ReplicaState, scope: Optional[Iterable[Cacheline]] = None,
              at: Optional[int] = None) -> tuple[int, ReplicaState]:
    """Write back scoped LLC lines and wait until they reach PM.

    ``scope=None`` means every dirty DDIO line plus the whole MC queue.
    Returns the elapsed time from ``at`` (default: the replica clock).
    """
    t = state.clock_ns if at is None else max(at, state.clock_ns)
    state.advance(t)
    if scope is None:
        lines = state.dirty_lines()
        finish = max(t, state.mc.last_done())
    else:
        lines = list(scope)
        finish = t
    for line in lines:
        if state.is_dirty(line.address):
            idx = map_address_to_set(line.address, state.geometry)
            wid = state.ddio_lru[idx][line.address][0]
            state.transfer(Cacheline(line.address, wid), t)
            state.mark_clean(line.address)
        done = state.done_time(line.address)
        if done is not None:
            finish = max(finish, done)
    return finish - t, state
