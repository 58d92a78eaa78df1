from collections import Counter
from graphlib import CycleError, TopologicalSorter

import pytest
from hypothesis import given, settings, strategies as st

from pmirror.strategies import (
    ALL_STRATEGIES,
    OpKind,
    REMOTE_OPS,
    REMOTE_WRITES,
    Strategy,
    TransactionProgram,
    constraints,
    lower,
)
from pmirror.workloads import TransactConfig, gen_transact

RC, OB, DD, NO = Strategy.SmRc, Strategy.SmOb, Strategy.SmDd, Strategy.NoSm


def prog(*txns):
    return TransactionProgram.from_nested([[[64 * a for a in ep] for ep in t] for t in txns])


programs = st.lists(
    st.lists(st.lists(st.integers(0, 20), min_size=1, max_size=4), min_size=1, max_size=5),
    min_size=1, max_size=4,
).map(lambda txns: prog(*txns))


def test_parse():
    assert Strategy.parse("SM-RC") is RC
    assert Strategy.parse("smdd") is DD
    with pytest.raises(ValueError):
        Strategy.parse("raid")


def test_program_invariants():
    with pytest.raises(ValueError):
        TransactionProgram.from_nested([[[]]])
    with pytest.raises(ValueError):
        TransactionProgram.from_nested([[]])
    p = prog([[1, 2], [3]], [[4]])
    assert (p.num_writes, p.num_epochs, p.num_txns) == (4, 3, 2)
    assert list(p.txn_of_write()) == [0, 0, 0, 1]


def test_lower_rc_single_write():
    assert lower(prog([[1]]), RC).kinds() == ["st", "clwb", "write", "sfence", "rcommit"]


def test_lower_ob_two_epochs():
    k = lower(prog([[1], [2]]), OB).kinds()
    assert k[-2:] == ["sfence", "rdfence"]
    assert k.count("rofence") == 1
    assert k == ["st", "clwb", "write_wt", "sfence", "rofence", "st", "clwb", "write_wt", "sfence", "rdfence"]


def test_lower_dd():
    t = lower(prog([[1, 2], [3]]), DD)
    assert t.kinds() == ["st", "clwb", "write_nt", "st", "clwb", "write_nt", "sfence",
                         "st", "clwb", "write_nt", "sfence", "read0"]
    assert {op.qp for op in t.remote_writes()} == {0}


@given(programs)
def test_nosm_has_no_remote_ops(p):
    t = lower(p, NO)
    assert not any(op.kind in REMOTE_OPS for op in t.ops)
    assert t.count(OpKind.SFENCE) == p.num_epochs


@given(programs)
def test_lowering_preserves_writes(p):
    want = Counter(int(a) for a in p.addresses)
    for s in (RC, OB, DD):
        t = lower(p, s)
        assert Counter(op.address for op in t.remote_writes()) == want
        assert [op.write_id for op in t.remote_writes()] == list(range(p.num_writes))
    assert Counter(op.address for op in lower(p, NO).ops if op.kind is OpKind.STORE) == want


@pytest.mark.parametrize("e,T", [(16, 100), (1, 7), (3, 5)])
def test_fence_counts(e, T):
    p = gen_transact(TransactConfig(e, 2, T))
    assert lower(p, RC).count(OpKind.RCOMMIT) == T * e
    ob = lower(p, OB)
    assert ob.count(OpKind.ROFENCE) == T * (e - 1) and ob.count(OpKind.RDFENCE) == T
    dd = lower(p, DD)
    assert dd.count(OpKind.SENTINEL_READ) == T
    assert sum(dd.count(k) for k in (OpKind.RCOMMIT, OpKind.ROFENCE, OpKind.RDFENCE)) == 0


def test_constraint_examples():
    p = prog([[1, 2]])
    assert constraints(p, OB).pairs() == set()
    assert constraints(p, DD).pairs() == {(0, 1)}
    assert constraints(prog([[1], [2]]), RC).pairs() == {(0, 1)}
    with pytest.raises(ValueError):
        constraints(p, NO)


def _epoch_pairs(p):
    ep = p.epoch_of_write()
    n = p.num_writes
    return {(a, b) for a in range(n) for b in range(n) if ep[a] < ep[b]}


@settings(max_examples=100)
@given(programs)
def test_constraint_refinement(p):
    rc, ob, dd = (constraints(p, s) for s in (RC, OB, DD))
    assert rc.pairs() == ob.pairs() == _epoch_pairs(p)
    n = p.num_writes
    assert dd.pairs() == {(a, b) for a in range(n) for b in range(n) if a < b}
    assert dd.pairs() >= ob.pairs()


@settings(max_examples=100)
@given(programs)
def test_durability_points(p):
    for s, kind in ((RC, OpKind.RCOMMIT), (OB, OpKind.RDFENCE), (DD, OpKind.SENTINEL_READ)):
        t = lower(p, s)
        c = constraints(p, s)
        assert list(c.durability_points) == [i for i, op in enumerate(t.ops) if op.kind is kind]
        # every durability point covers exactly the writes issued before it
        for i, n in zip(c.durability_points, c.durable_prefixes):
            assert n == sum(1 for op in t.ops[:i] if op.kind in REMOTE_WRITES)


@settings(max_examples=100)
@given(programs, st.sampled_from([RC, OB, DD]))
def test_acyclic(p, s):
    pairs = constraints(p, s).pairs()
    ts = TopologicalSorter({b: set() for b in range(p.num_writes)})
    for a, b in pairs:
        ts.add(b, a)
    try:
        order = list(ts.static_order())
    except CycleError:
        pytest.fail("persist order has a cycle")
    pos = {w: i for i, w in enumerate(order)}
    assert all(pos[a] < pos[b] for a, b in pairs)
    # transitive
    for a, b in pairs:
        for c, d in pairs:
            if b == c:
                assert (a, d) in pairs


def test_downward_closed():
    c = constraints(prog([[1, 2], [3]]), OB)
    assert c.is_downward_closed({0})
    assert c.is_downward_closed({0, 1, 2})
    assert not c.is_downward_closed({2})
    assert not c.is_downward_closed({0, 2})


def test_nt_must_share_qp():
    from pmirror.strategies import Op, PrimitiveTrace, constraints_from_trace
    t = PrimitiveTrace(None, [Op(OpKind.WRITE_NT, 0, 0, 0), Op(OpKind.WRITE_NT, 64, 1, 1)])
    with pytest.raises(ValueError):
        constraints_from_trace(t)


def test_all_strategies_listed():
    assert set(ALL_STRATEGIES) == set(Strategy)
