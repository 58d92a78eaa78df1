"""Reference executor: walks a primitive trace op by op through the
primitives layer.  Slow but direct; the compiled kernel in ``_kernel`` must
reproduce its results exactly."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_model import CacheGeometry, LatencyModelConfig, ReplicaState
from .primitives import (
    LocalState,
    OutstandingRemote,
    RemoteOpKind,
    exec_rcommit,
    exec_rdfence,
    exec_rdma_write,
    exec_rofence,
    exec_sentinel_read,
)
from .strategies import OpKind, PrimitiveTrace, Strategy, TransactionProgram, lower

_REMOTE_KIND = {
    OpKind.WRITE: RemoteOpKind.WritePlain,
    OpKind.WRITE_WT: RemoteOpKind.WriteWT,
    OpKind.WRITE_NT: RemoteOpKind.WriteNT,
}

FENCE_KINDS = ("rcommit", "rofence", "rdfence", "read0")


@dataclass
class SimResult:
    strategy: str
    total_ns: int
    txn_latency_ns: np.ndarray
    fences: dict
    stall_ns: int
    # remote MC entries in persist order: (write_id, address, accept_ns, done_ns)
    persist_log: list = field(default_factory=list)
    # per durability op: (writes issued before it, remote completion time)
    durability_log: list = field(default_factory=list)

    @property
    def remote_fences(self) -> int:
        return sum(self.fences.get(k, 0) for k in FENCE_KINDS)


def simulate_trace(trace: PrimitiveTrace, latency: LatencyModelConfig | None = None,
                   geometry: CacheGeometry | None = None, volatile_ns: int = 0) -> SimResult:
    cfg = latency or LatencyModelConfig()
    geo = geometry or CacheGeometry()
    local = LocalState(cfg, geo)
    replica = ReplicaState(geo, cfg)
    single_qp = trace.strategy is Strategy.SmDd
    out = OutstandingRemote(1 if single_qp else cfg.num_qps)
    fences = {k.value: 0 for k in OpKind if k not in (OpKind.STORE, OpKind.CLWB)}
    durability = []
    writes_issued = 0
    lat = np.zeros(len(trace.txn_spans), dtype=np.int64)
    now = 0

    for t, (a, b) in enumerate(trace.txn_spans):
        start = now
        for op in trace.ops[a:b]:
            k = op.kind
            if k is OpKind.STORE:
                now += volatile_ns
            elif k is OpKind.CLWB:
                local.clwb(op.address, now, op.write_id)
                now += cfg.local_clwb_ns
            elif k in _REMOTE_KIND:
                exec_rdma_write(out, replica, op.address, _REMOTE_KIND[k], now, op.write_id, op.qp)
                writes_issued += 1
            elif k is OpKind.SFENCE:
                now += local.sfence(now)
            elif k is OpKind.RCOMMIT:
                # rcommit only orders its own QP: reap every write ack first
                now = max(now, out.last_ack_ns)
                now += exec_rcommit(out, replica, now)
                durability.append((writes_issued, now - cfg.return_ns))
            elif k is OpKind.ROFENCE:
                cost = exec_rofence(out, now, cfg.rdma_rtt_ns)
                if cfg.blocking_rofence:
                    now += cost
            elif k is OpKind.RDFENCE:
                now += exec_rdfence(out, replica, now)
                durability.append((writes_issued, now - cfg.return_ns))
            elif k is OpKind.SENTINEL_READ:
                now += exec_sentinel_read(out, replica, now, op.qp or 0)
                durability.append((writes_issued, now - cfg.return_ns))
            if k not in (OpKind.STORE, OpKind.CLWB):
                fences[k.value] += 1
        lat[t] = now - start

    log = [(e.line.write_id, e.line.address, e.accept_ns, e.done_ns) for e in replica.mc.entries]
    strategy = trace.strategy.value if trace.strategy else "custom"
    return SimResult(strategy, now, lat, fences, replica.mc.stall_ns + out.qp_wait_ns, log, durability)


def simulate(program: TransactionProgram, strategy: Strategy,
             latency: LatencyModelConfig | None = None, geometry: CacheGeometry | None = None,
             volatile_ns: int = 0) -> SimResult:
    return simulate_trace(lower(program, strategy), latency, geometry, volatile_ns)
