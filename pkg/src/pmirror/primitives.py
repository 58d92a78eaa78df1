"""Local and remote persistence primitives executed against the core model.

Timing rules shared by every remote verb:

* a verb posted at host time ``t`` reaches the remote NIC at ``t + rtt//2``
  and its response is back ``rtt - rtt//2`` after the NIC answers;
* a queue pair serves its writes one at a time, each holding the QP for one
  PCIe write round trip; the data lands (LLC or MC queue) when it ends;
* posted writes (plain, write-through) are acked as soon as the NIC starts
  on them, before the data is anywhere near PM;
* a non-temporal write keeps its QP until the MC queue accepts it, so a full
  queue stalls everything behind it on that QP.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core_model import (
    CacheGeometry,
    Cacheline,
    LatencyModelConfig,
    MemoryController,
    ReplicaState,
    check_aligned,
    drain_all,
)


class ProtectionError(ValueError):
    pass


class RemoteOpKind(enum.Enum):
    WritePlain = "write"
    WriteWT = "write_wt"
    WriteNT = "write_nt"
    Rcommit = "rcommit"
    Rofence = "rofence"
    Rdfence = "rdfence"
    SentinelRead = "sentinel_read"


WRITE_KINDS = (RemoteOpKind.WritePlain, RemoteOpKind.WriteWT, RemoteOpKind.WriteNT)


class LocalState:
    """Primary-side persistence: clwb tags a line for eager writeback through
    the local LLC->MC port; sfence waits for whatever has not reached PM."""

    def __init__(self, config: LatencyModelConfig | None = None,
                 geometry: CacheGeometry | None = None):
        self.config = config or LatencyModelConfig()
        self.geometry = geometry or CacheGeometry()
        self.mc = MemoryController(self.config.mc_queue_capacity, self.config.mc_to_pm_ns)
        self.port_free_ns = 0
        self.pending_clwb: dict[int, tuple[int, int, int]] = {}  # addr -> (issue, done, write_id)
        self.local_pm: dict[int, int] = {}
        self.local_clock_ns = 0

    def advance(self, t: int) -> None:
        self.local_clock_ns = max(self.local_clock_ns, t)
        for addr in [a for a, (_, done, _) in self.pending_clwb.items() if done <= self.local_clock_ns]:
            _, _, wid = self.pending_clwb.pop(addr)
            self.local_pm[addr] = wid

    def clwb(self, addr: int, t: int, write_id: int = -1) -> None:
        check_aligned(addr, self.geometry)
        self.advance(t)
        if addr in self.pending_clwb:
            return
        start = max(self.local_clock_ns, self.port_free_ns)
        entry = self.mc.enqueue(Cacheline(addr, write_id), start + self.config.llc_to_mc_ns)
        self.port_free_ns = entry.accept_ns
        self.pending_clwb[addr] = (self.local_clock_ns, entry.done_ns, write_id)

    def sfence(self, t: int) -> int:
        self.advance(t)
        if not self.pending_clwb:
            return 0
        finish = max(done for _, done, _ in self.pending_clwb.values())
        latency = max(0, finish - self.local_clock_ns)
        self.advance(self.local_clock_ns + latency)
        return latency


def exec_store_clwb(local: LocalState, addr: int, write_id: int = -1) -> LocalState:
    local.clwb(addr, local.local_clock_ns, write_id)
    local.local_clock_ns += local.config.local_clwb_ns
    return local


def exec_sfence(local: LocalState) -> int:
    return local.sfence(local.local_clock_ns)


@dataclass
class QueuePair:
    qp_id: int
    free_ns: int = 0
    # (kind, write ids, issue time, remote arrival time), in arrival order
    ops: list = field(default_factory=list)


@dataclass(frozen=True)
class Completion:
    kind: RemoteOpKind
    qp_id: int
    issue_ns: int
    land_ns: int
    complete_ns: int


class OutstandingRemote:
    """One replication connection: its queue pairs plus the bookkeeping the
    fences need (what has been written since the last durability point)."""

    def __init__(self, num_qps: int = 1, region: Optional[tuple[int, int]] = None):
        self.qps = [QueuePair(i) for i in range(num_qps)]
        self.region = region
        self.undurable: list[Cacheline] = []
        self.last_ack_ns = 0
        self.barrier_ns = 0
        self._epoch_accepts: list[int] = []
        self._rr = 0
        self.nt_stall_ns = 0
        self.qp_wait_ns = 0

    def next_qp(self) -> int:
        qp = self._rr % len(self.qps)
        self._rr += 1
        return qp

    def check_registered(self, addr: int) -> None:
        if self.region is None:
            return
        lo, length = self.region
        if not lo <= addr < lo + length:
            raise ProtectionError(f"address {addr:#x} outside the registered region")


def exec_rdma_write(out: OutstandingRemote, replica: ReplicaState, addr: int,
                    kind: RemoteOpKind, now: int, write_id: int = -1,
                    qp: Optional[int] = None) -> Completion:
    if kind not in WRITE_KINDS:
        raise ValueError(f"{kind} is not a write")
    check_aligned(addr, replica.geometry)
    out.check_registered(addr)
    cfg = replica.config
    q = out.qps[out.next_qp() if qp is None else qp]
    arrival = now + cfg.one_way_ns
    start = max(arrival, q.free_ns)
    out.qp_wait_ns += start - arrival
    land = start + cfg.pcie_write_rtt_ns
    line = Cacheline(addr, write_id)
    replica.advance(land)

    if kind is RemoteOpKind.WriteNT:
        stall_before = replica.mc.stall_ns
        entry = replica.enqueue_direct(line, land)
        out.nt_stall_ns += replica.mc.stall_ns - stall_before
        q.free_ns = entry.accept_ns
        complete = entry.accept_ns + cfg.return_ns
    else:
        evicted = replica.ddio_insert(line, dirty=kind is RemoteOpKind.WritePlain)
        if evicted is not None:
            replica.transfer(evicted, land)
        if kind is RemoteOpKind.WriteWT:
            entry = replica.transfer(line, max(land, out.barrier_ns))
            out._epoch_accepts.append(entry.accept_ns)
        q.free_ns = land
        complete = start + cfg.return_ns

    q.ops.append((kind, (write_id,), now, arrival))
    out.undurable.append(line)
    out.last_ack_ns = max(out.last_ack_ns, complete)
    return Completion(kind, q.qp_id, now, land, complete)


def _remote_start(replica: ReplicaState, now: int) -> tuple[int, int]:
    arrival = now + replica.config.one_way_ns
    # a fence is handled after every earlier write has landed
    return arrival, max(arrival, replica.clock_ns)


def _durability_point(out: OutstandingRemote, replica: ReplicaState, now: int,
                      scope: Optional[Sequence[Cacheline]] = None) -> int:
    arrival, tau = _remote_start(replica, now)
    lines = out.undurable if scope is None else list(scope)
    drain, _ = drain_all(replica, lines, at=tau)
    finish = tau + drain
    replica.advance(finish)
    out.undurable = []
    out._epoch_accepts = []
    return finish + replica.config.return_ns - now


def exec_rcommit(out: OutstandingRemote, replica: ReplicaState, now: int,
                 flush_range: Optional[Sequence[Cacheline]] = None) -> int:
    """Round trip plus draining every line written since the last rcommit."""
    q = out.qps[0]
    q.ops.append((RemoteOpKind.Rcommit, (), now, now + replica.config.one_way_ns))
    return _durability_point(out, replica, now, flush_range)


def exec_rofence(out: OutstandingRemote, now: int, rtt_ns: int = 2000) -> int:
    """Ordering marker: later write-throughs enter the MC queue only after the
    ones already issued.  Touches neither the LLC nor the MC queue."""
    if out._epoch_accepts:
        out.barrier_ns = max(out.barrier_ns, max(out._epoch_accepts))
    out._epoch_accepts = []
    out.qps[0].ops.append((RemoteOpKind.Rofence, (), now, now + rtt_ns // 2))
    return rtt_ns


def exec_rdfence(out: OutstandingRemote, replica: ReplicaState, now: int) -> int:
    out.qps[0].ops.append((RemoteOpKind.Rdfence, (), now, now + replica.config.one_way_ns))
    return _durability_point(out, replica, now)


def exec_sentinel_read(out: OutstandingRemote, replica: ReplicaState, now: int,
                       qp: int = 0) -> int:
    """RDMA read of address 0 on ``qp``: answered once every earlier write on
    that QP has been accepted by the MC queue (persistent under ADR)."""
    q = out.qps[qp]
    arrival, tau = _remote_start(replica, now)
    tau = max(tau, q.free_ns)
    q.ops.append((RemoteOpKind.SentinelRead, (), now, arrival))
    replica.advance(tau)
    out.undurable = [ln for ln in out.undurable if replica.done_time(ln.address) is None]
    return tau + replica.config.return_ns - now
