import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from care.config import MessageRecord
from care.detectors import NeverSimilar, OracleDetector
from care.routing import (Admit, NodeBuffer, Outcome, TransferSession, admit_care, admit_epidemic,
                          summary_exchange, transfer_tick)

SIZE = 300_000


def m(mid, cid=None, size=SIZE):
    return MessageRecord(mid, mid if cid is None else cid, 0, 0.0, size)


def holding(*msgs, capacity=math.inf):
    b = NodeBuffer(capacity)
    for x in msgs:
        b.append(x)
    return b


# -- epidemic admission -----------------------------------------------------------------

def test_admit_into_empty_buffer():
    b = NodeBuffer(10 * SIZE)
    assert admit_epidemic(b, m(1)).status == Admit.ACCEPTED
    assert b.ids() == [1] and b.occupied == SIZE


def test_duplicate_leaves_buffer_unchanged():
    b = holding(m(1), m(2))
    res = admit_epidemic(b, m(1))
    assert res.status == Admit.REJECTED_DUPLICATE and not res.accepted
    assert b.ids() == [1, 2] and b.occupied == 2 * SIZE


def test_fifo_head_drop():
    b = holding(m(1), m(2), capacity=2 * SIZE)
    res = admit_epidemic(b, m(3))
    assert res.status == Admit.ACCEPTED_WITH_DROPS
    assert [d.msg_id for d in res.dropped] == [1]
    assert b.ids() == [2, 3]


def test_oversize_rejected():
    b = holding(m(1), capacity=SIZE)
    res = admit_epidemic(b, m(2, size=SIZE + 1))
    assert res.status == Admit.REJECTED_OVERSIZE and b.ids() == [1]


@given(st.lists(st.tuples(st.integers(1, 40), st.integers(1, 5)), max_size=80), st.integers(1, 12))
def test_buffer_invariants_under_random_admissions(ops, cap_msgs):
    b = NodeBuffer(cap_msgs * 100)
    model = []  # (msg_id, size) in admission order
    for mid, size_units in ops:
        msg = m(mid, size=size_units * 100)
        res = admit_epidemic(b, msg)
        if any(i == mid for i, _ in model):
            assert res.status == Admit.REJECTED_DUPLICATE
        elif msg.size > b.capacity:
            assert res.status == Admit.REJECTED_OVERSIZE
        else:
            evicted = []
            while sum(sz for _, sz in model) + msg.size > b.capacity:
                evicted.append(model.pop(0)[0])
            model.append((mid, msg.size))
            assert [d.msg_id for d in res.dropped] == evicted
        assert b.ids() == [i for i, _ in model]
        assert b.occupied == sum(x.size for x in b.queue.values()) <= b.capacity


# -- CARE admission ------------------------------------------------------------------------

def test_care_rejects_same_cluster_with_perfect_oracle():
    b = holding(m(1, cid=7))
    stats = {}
    assert admit_care(b, m(2, cid=7), OracleDetector(), stats).status == Admit.REJECTED_REDUNDANT
    assert stats == {"rejected_redundant": 1}
    assert admit_care(b, m(3, cid=8), OracleDetector()).status == Admit.ACCEPTED
    assert b.ids() == [1, 3]


def test_care_fp_one_rejects_everything_after_first():
    b = NodeBuffer()
    det = OracleDetector(fp=1.0, seed=3)
    assert admit_care(b, m(1), det).accepted
    for k in range(2, 20):
        assert admit_care(b, m(k), det).status == Admit.REJECTED_FP
    assert b.ids() == [1]


def test_care_duplicate_checked_before_detector():
    b = holding(m(1, cid=7))
    assert admit_care(b, m(1, cid=7), OracleDetector()).status == Admit.REJECTED_DUPLICATE


@given(st.lists(st.tuples(st.integers(1, 30), st.integers(1, 6)), max_size=60))
def test_never_similar_care_equals_epidemic(ops):
    a, b = NodeBuffer(5 * SIZE), NodeBuffer(5 * SIZE)
    for mid, cid in ops:
        ra = admit_care(a, m(mid, cid), NeverSimilar())
        rb = admit_epidemic(b, m(mid, cid))
        assert ra.status == rb.status and ra.dropped == rb.dropped
    assert a.ids() == b.ids()


def test_care_fn_one_admits_everything():
    b = NodeBuffer()
    det = OracleDetector(fn=1.0)
    for k in range(1, 6):
        assert admit_care(b, m(k, cid=1), det).accepted


# -- exchange ---------------------------------------------------------------------------------

def test_summary_exchange_examples():
    assert summary_exchange(holding(m(1), m(2)), holding(m(1), m(2))) == []
    assert summary_exchange(holding(m(1), m(2), m(3)), holding(m(2))) == [1, 3]


def test_local_dedup_then_exchange():
    # node 1 creates M1, a near-copy M2 of M1, then an unrelated M3
    n1, n2 = NodeBuffer(), NodeBuffer()
    det = OracleDetector()
    results = [admit_care(n1, x, det).status for x in (m(11, cid=1), m(12, cid=1), m(13, cid=3))]
    assert results == [Admit.ACCEPTED, Admit.REJECTED_REDUNDANT, Admit.ACCEPTED]
    assert summary_exchange(n1, n2) == [11, 13]


def test_transfer_tick_timing():
    s = TransferSession(0, 1, m(1), 10e6)
    assert transfer_tick(s, 0.239) == Outcome.IN_PROGRESS
    assert transfer_tick(s, 0.001) == Outcome.DELIVERED
    assert s.bytes_sent == SIZE


def test_transfer_abort_discards_partial():
    s = TransferSession(0, 1, m(1), 10e6)
    assert transfer_tick(s, 0.1) == Outcome.IN_PROGRESS
    assert transfer_tick(s, 0.1, contact_alive=False) == Outcome.ABORTED
    assert s.bytes_sent == 0.0
    with pytest.raises(ValueError):
        transfer_tick(TransferSession(0, 1, m(1), 0.0), 1.0)


def test_hundred_messages_drain_in_2_4_seconds():
    elapsed = 0.0
    for k in range(100):
        s = TransferSession(0, 1, m(k), 100e6)
        need = s.remaining * 8 / s.rate
        assert transfer_tick(s, need) == Outcome.DELIVERED
        elapsed += need
    assert elapsed == pytest.approx(2.4)
