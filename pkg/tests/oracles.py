"""Independent reference models used to cross-check the package.

Kept deliberately naive: plain lists, step-by-step replays, brute force.
"""
from itertools import combinations


def lru_replay(addrs, ways, num_sets, line=64):
    """Evicted addresses, in order, for a sequence of DDIO insertions."""
    sets = {}
    evicted = []
    for a in addrs:
        s = sets.setdefault((a // line) % num_sets, [])
        if a in s:
            s.remove(a)
        elif len(s) == ways:
            evicted.append(s.pop(0))
        s.append(a)
    return evicted


def mc_schedule(arrivals, capacity, service):
    """(accept, done) per arrival for a FIFO queue with one server.

    Replays the queue one arrival at a time: completed entries leave, a full
    queue makes the arrival wait for the oldest entry to leave.
    """
    queue = []  # done times of entries still in the queue
    last_accept = 0
    last_done = 0
    out = []
    for t in arrivals:
        t = max(t, last_accept)
        queue = [d for d in queue if d > t]
        while len(queue) >= capacity:
            t = queue.pop(0)
            queue = [d for d in queue if d > t]
        done = max(t, last_done) + service
        queue.append(done)
        out.append((t, done))
        last_accept, last_done = t, done
    return out


def naive_crash_states(trace, order):
    """All subsets of the remote writes that a crash could leave in PM, by
    brute force over every subset."""
    from pmirror.strategies import DURABILITY_OPS, REMOTE_WRITES

    ids = list(order.write_ids)
    pairs = order.pairs()
    # write id -> writes that must be in PM if it is (durability points passed)
    forced = {}
    seen = []
    done_prefix = []
    for op in trace.ops:
        if op.kind in DURABILITY_OPS:
            done_prefix = list(seen)
        elif op.kind in REMOTE_WRITES:
            forced[op.write_id] = set(done_prefix)
            seen.append(op.write_id)
    out = set()
    for r in range(len(ids) + 1):
        for sub in combinations(ids, r):
            s = set(sub)
            if any(b in s and a not in s for a, b in pairs):
                continue
            if any(not forced[b] <= s for b in s):
                continue
            out.add(frozenset(s))
    return out


def respects_order(persist_log, pairs, addresses, write_ids=()):
    """Brute-force linear-extension check with same-address coalescing.
    Every id in ``write_ids`` must reach PM (itself or a newer same-line write)."""
    def pos(w):
        for p, rec in enumerate(persist_log):
            if rec[0] >= w and addresses[rec[0]] == addresses[w]:
                return p
        return None

    if any(pos(w) is None for w in write_ids):
        return False
    for a, b in pairs:
        pa, pb = pos(a), pos(b)
        if pa is None or pb is None or pa > pb:
            return False
    return True
