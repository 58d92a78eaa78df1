"""Compiled fast path for the simulator.

Same timing rules as ``simulator.simulate`` but specialised per strategy and
run on flat arrays; ``tests/test_kernel_agreement.py`` holds the two engines
to bit-identical output.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .core_model import CacheGeometry, LatencyModelConfig
from .simulator import SimResult
from .strategies import Strategy, TransactionProgram

_CODES = {Strategy.NoSm: 0, Strategy.SmRc: 1, Strategy.SmOb: 2, Strategy.SmDd: 3}

# MC state slots
_LAST_ACCEPT, _TOTAL, _STALL = 0, 1, 2


@njit(cache=True, nogil=True)
def _mc_enqueue(ring, st, cap, service, t):
    want = max(t, st[_LAST_ACCEPT])
    accept = want
    total = st[_TOTAL]
    if total >= cap:
        oldest = ring[(total - cap) % cap]
        if oldest > want:
            accept = oldest
    st[_STALL] += accept - want
    prev = ring[(total - 1) % cap] if total > 0 else 0
    done = max(accept, prev) + service
    ring[total % cap] = done
    st[_TOTAL] = total + 1
    st[_LAST_ACCEPT] = accept
    return accept, done


@njit(cache=True, nogil=True)
def _run(code, addrs, eoff, toff, pcie, llc, cap, pm_ns, rtt, clwb_ns, nqps,
         block_rofence, volatile_ns, num_sets, ways, line_bytes, record):
    one_way = rtt // 2
    ret = rtt - one_way
    n = addrs.shape[0]
    ntx = toff.shape[0] - 1

    # local side
    l_ring = np.zeros(cap, np.int64)
    l_st = np.zeros(3, np.int64)
    l_port = 0
    maxw = 1
    for ep in range(eoff.shape[0] - 1):
        maxw = max(maxw, eoff[ep + 1] - eoff[ep])
    p_addr = np.empty(maxw + 1, np.int64)
    p_done = np.empty(maxw + 1, np.int64)
    npend = 0

    # replica
    r_ring = np.zeros(cap, np.int64)
    r_st = np.zeros(3, np.int64)
    r_port = 0
    rclock = 0
    tags = np.full(num_sets * ways, -1, np.int64)
    wids = np.zeros(num_sets * ways, np.int64)
    dirty = np.zeros(num_sets * ways, np.bool_)
    stamp = np.zeros(num_sets * ways, np.int64)
    tick = 0

    nq = 1 if code == 3 else nqps
    qfree = np.zeros(nq, np.int64)
    rr = 0
    qp_wait = 0
    last_ack = 0
    barrier = 0
    epoch_accept = -1

    und_addr = np.empty(n + 1, np.int64)
    und_done = np.empty(n + 1, np.int64)
    nund = 0

    log_cap = 2 * n + 1 if record else 1
    log_wid = np.empty(log_cap, np.int64)
    log_acc = np.empty(log_cap, np.int64)
    log_done = np.empty(log_cap, np.int64)
    nlog = 0
    ndur_cap = eoff.shape[0] if record else 1
    dur_w = np.empty(ndur_cap, np.int64)
    dur_t = np.empty(ndur_cap, np.int64)
    ndur = 0

    lat = np.zeros(ntx, np.int64)
    fences = np.zeros(5, np.int64)  # sfence, rcommit, rofence, rdfence, read0
    now = 0
    wi = 0

    for t in range(ntx):
        start_txn = now
        for ep in range(toff[t], toff[t + 1]):
            last_epoch = ep == toff[t + 1] - 1
            for i in range(eoff[ep], eoff[ep + 1]):
                a = addrs[i]
                now += volatile_ns
                # clwb: drop lines that already reached PM, tag unless pending
                k = 0
                for j in range(npend):
                    if p_done[j] > now:
                        p_addr[k] = p_addr[j]
                        p_done[k] = p_done[j]
                        k += 1
                npend = k
                found = False
                for j in range(npend):
                    if p_addr[j] == a:
                        found = True
                        break
                if not found:
                    s0 = max(now, l_port)
                    acc, dn = _mc_enqueue(l_ring, l_st, cap, pm_ns, s0 + llc)
                    l_port = acc
                    p_addr[npend] = a
                    p_done[npend] = dn
                    npend += 1
                now += clwb_ns
                if code == 0:
                    continue

                # remote write
                if code == 3:
                    q = 0
                else:
                    q = rr % nq
                    rr += 1
                arrival = now + one_way
                st = max(arrival, qfree[q])
                qp_wait += st - arrival
                land = st + pcie
                rclock = max(rclock, land)
                und_addr[nund] = a
                if code == 3:
                    acc, dn = _mc_enqueue(r_ring, r_st, cap, pm_ns, land)
                    if record:
                        log_wid[nlog] = i
                        log_acc[nlog] = acc
                        log_done[nlog] = dn
                        nlog += 1
                    und_done[nund] = dn
                    qfree[q] = acc
                    ack = acc + ret
                else:
                    und_done[nund] = -1
                    base = ((a // line_bytes) % num_sets) * ways
                    slot = -1
                    for j in range(ways):
                        if tags[base + j] == a:
                            slot = base + j
                            break
                    tick += 1
                    if slot < 0:
                        for j in range(ways):
                            if tags[base + j] == -1:
                                slot = base + j
                                break
                        if slot < 0:
                            slot = base
                            for j in range(1, ways):
                                if stamp[base + j] < stamp[slot]:
                                    slot = base + j
                            if dirty[slot]:
                                ea = tags[slot]
                                s0 = max(land, r_port)
                                acc, dn = _mc_enqueue(r_ring, r_st, cap, pm_ns, s0 + llc)
                                r_port = acc
                                if record:
                                    log_wid[nlog] = wids[slot]
                                    log_acc[nlog] = acc
                                    log_done[nlog] = dn
                                    nlog += 1
                                for j in range(nund):
                                    if und_addr[j] == ea:
                                        und_done[j] = dn
                    tags[slot] = a
                    wids[slot] = i
                    stamp[slot] = tick
                    dirty[slot] = code == 1
                    if code == 2:
                        s0 = max(max(land, barrier), r_port)
                        acc, dn = _mc_enqueue(r_ring, r_st, cap, pm_ns, s0 + llc)
                        r_port = acc
                        if record:
                            log_wid[nlog] = i
                            log_acc[nlog] = acc
                            log_done[nlog] = dn
                            nlog += 1
                        und_done[nund] = dn
                        epoch_accept = max(epoch_accept, acc)
                    qfree[q] = land
                    ack = st + ret
                nund += 1
                last_ack = max(last_ack, ack)
                wi += 1

            # sfence
            fin = now
            for j in range(npend):
                if p_done[j] > now:
                    fin = max(fin, p_done[j])
            npend = 0
            now = fin
            fences[0] += 1
            if code == 0:
                continue

            if code == 2 and not last_epoch:
                if epoch_accept >= 0:
                    barrier = max(barrier, epoch_accept)
                epoch_accept = -1
                fences[2] += 1
                if block_rofence:
                    now += rtt
                continue
            if code == 3 and not last_epoch:
                continue

            if code == 1:
                now = max(now, last_ack)
            arrival = now + one_way
            tau = max(arrival, rclock)
            if code == 3:
                tau = max(tau, qfree[0])
                rclock = tau
                fin = tau
                fences[4] += 1
            else:
                fin = tau
                for j in range(nund):
                    a = und_addr[j]
                    base = ((a // line_bytes) % num_sets) * ways
                    for s in range(base, base + ways):
                        if tags[s] == a:
                            if dirty[s]:
                                s0 = max(tau, r_port)
                                acc, dn = _mc_enqueue(r_ring, r_st, cap, pm_ns, s0 + llc)
                                r_port = acc
                                dirty[s] = False
                                if record:
                                    log_wid[nlog] = wids[s]
                                    log_acc[nlog] = acc
                                    log_done[nlog] = dn
                                    nlog += 1
                                for m in range(nund):
                                    if und_addr[m] == a:
                                        und_done[m] = dn
                            break
                    if und_done[j] > fin:
                        fin = und_done[j]
                rclock = max(rclock, fin)
                epoch_accept = -1
                if code == 1:
                    fences[1] += 1
                else:
                    fences[3] += 1
            nund = 0
            if record:
                dur_w[ndur] = wi
                dur_t[ndur] = fin
                ndur += 1
            now = fin + ret
        lat[t] = now - start_txn

    return (now, lat, fences, r_st[_STALL] + qp_wait, log_wid[:nlog], log_acc[:nlog],
            log_done[:nlog], dur_w[:ndur], dur_t[:ndur])


def fast_simulate(program: TransactionProgram, strategy: Strategy,
                  latency: LatencyModelConfig | None = None, geometry: CacheGeometry | None = None,
                  volatile_ns: int = 0, record: bool = False) -> SimResult:
    cfg = latency or LatencyModelConfig()
    geo = geometry or CacheGeometry()
    total, lat, fences, stall, lw, la, ld, dw, dt = _run(
        _CODES[strategy], program.addresses, program.epoch_offsets, program.txn_offsets,
        cfg.pcie_write_rtt_ns, cfg.llc_to_mc_ns, cfg.mc_queue_capacity, cfg.mc_to_pm_ns,
        cfg.rdma_rtt_ns, cfg.local_clwb_ns, cfg.num_qps, cfg.blocking_rofence, volatile_ns,
        geo.num_sets, geo.ddio_ways, geo.cacheline_bytes, record)
    names = ("sfence", "rcommit", "rofence", "rdfence", "read0")
    fence_counts = {k: int(v) for k, v in zip(names, fences)}
    writes = 0 if strategy is Strategy.NoSm else program.num_writes
    kind = {Strategy.SmRc: "write", Strategy.SmOb: "write_wt", Strategy.SmDd: "write_nt"}
    for k in ("write", "write_wt", "write_nt"):
        fence_counts[k] = writes if kind.get(strategy) == k else 0
    log = []
    if record:
        addrs = program.addresses
        log = [(int(w), int(addrs[w]), int(a), int(d)) for w, a, d in zip(lw, la, ld)]
    dur = [(int(w), int(t)) for w, t in zip(dw, dt)]
    return SimResult(strategy.value, int(total), lat, fence_counts, int(stall), log, dur)
