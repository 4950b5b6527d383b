import pytest
from hypothesis import given, strategies as st

from rbis.estimator import TimestampTuple
from rbis.protocol import (
    BadMagic,
    FollowUpMessage,
    Master,
    ProtocolFault,
    Slave,
    SyncMessage,
    TrailingBytes,
    Truncated,
    UnknownType,
    UnsupportedVersion,
    decode,
    encode,
    master_on_beacon,
    slave_on_followup,
    slave_on_sync,
)

GOLDEN_FOLLOW_UP = bytes.fromhex("52424953 01 02 00000001 0000000000019000 000000003B9ACA00".replace(" ", ""))


def _layout(mtype, seq, tsf, *tail):
    """Byte layout written out field by field, independent of the encoder."""
    out = b"RBIS" + bytes([1, mtype]) + seq.to_bytes(4, "big") + tsf.to_bytes(8, "big")
    for t in tail:
        out += t.to_bytes(8, "big")
    return out


def test_golden_vector_matches_layout():
    assert _layout(2, 1, 102_400, 10**9) == GOLDEN_FOLLOW_UP
    assert len(GOLDEN_FOLLOW_UP) == 26


def test_golden_vector_encode_decode():
    msg = FollowUpMessage(seq=1, tsf_us=102_400, master_time_ns=10**9)
    assert encode(msg) == GOLDEN_FOLLOW_UP
    assert decode(GOLDEN_FOLLOW_UP) == msg


def test_sync_layout():
    wire = encode(SyncMessage(7, 123456789))
    assert wire == _layout(1, 7, 123456789) and len(wire) == 18


def test_batched_layout():
    msg = FollowUpMessage(4, 55, 1000, ((5, 2000), (6, 3000)))
    wire = encode(msg)
    expected = _layout(2, 4, 55, 1000) + bytes([2])
    for seq, t in msg.extra:
        expected += seq.to_bytes(4, "big") + t.to_bytes(8, "big")
    assert wire == expected
    assert decode(wire) == msg


u32 = st.integers(0, 2**32 - 1)
u64 = st.integers(0, 2**64 - 1)
messages = st.one_of(
    st.builds(SyncMessage, u32, u64),
    st.builds(FollowUpMessage, u32, u64, u64, st.lists(st.tuples(u32, u64), max_size=5).map(tuple)),
)


@given(messages)
def test_round_trip(msg):
    assert decode(encode(msg)) == msg


@pytest.mark.parametrize(
    "data,exc",
    [
        (b"\x00" + GOLDEN_FOLLOW_UP[1:], BadMagic),
        (b"\x00", BadMagic),
        (b"", Truncated),
        (b"RBI", Truncated),
        (GOLDEN_FOLLOW_UP[:17], Truncated),
        (GOLDEN_FOLLOW_UP[:4] + b"\x02" + GOLDEN_FOLLOW_UP[5:], UnsupportedVersion),
        (GOLDEN_FOLLOW_UP[:5] + b"\x07" + GOLDEN_FOLLOW_UP[6:], UnknownType),
        (GOLDEN_FOLLOW_UP[:20], Truncated),
        (encode(SyncMessage(1, 1)) + b"\x00", TrailingBytes),
        (GOLDEN_FOLLOW_UP + b"\x02" + bytes(12), Truncated),
        (GOLDEN_FOLLOW_UP + b"\x01" + bytes(13), TrailingBytes),
        (GOLDEN_FOLLOW_UP + b"\x00", TrailingBytes),
    ],
)
def test_decode_errors(data, exc):
    with pytest.raises(exc):
        decode(data)


def test_encode_range_checks():
    with pytest.raises(ValueError):
        encode(SyncMessage(2**32, 0))
    with pytest.raises(ValueError):
        encode(FollowUpMessage(0, 0, -1))


def test_master_numbering_and_stall():
    m = Master()
    sync, fu = master_on_beacon(m, 100, 5000)
    assert sync == SyncMessage(1, 100) and fu == FollowUpMessage(1, 100, 5000)
    sync, fu = m.on_beacon(100, 6000)
    assert sync.seq == 2 and sync.tsf_us == 100
    with pytest.raises(ProtocolFault):
        m.on_beacon(99, 7000)


def test_master_batching():
    m = Master(follow_up_every=3)
    fus = []
    for k in range(1, 10):
        _, fu = m.on_beacon(k * 100, k * 1000)
        if fu is not None:
            fus.append(fu)
    assert [f.seq for f in fus] == [1, 4, 7]
    assert fus[1].entries() == [(4, 4000), (5, 5000), (6, 6000)]
    m.on_beacon(1000, 10_000)
    assert m.flush().entries() == [(10, 10_000)]
    assert m.flush() is None


def test_slave_pairing_and_first_wins():
    s = Slave()
    slave_on_sync(s, SyncMessage(7, 1), 5_000_000)
    s.on_sync(SyncMessage(7, 1), 6_000_000)
    assert s.pending[7].t_slave_ns == 5_000_000 and s.counters.duplicate_syncs == 1
    tup = slave_on_followup(s, FollowUpMessage(7, 1, 4_000_000), 5_100_000)
    assert tup == TimestampTuple(7, 4_000_000, 5_000_000)


def test_slave_missing_and_expired():
    s = Slave(pairing_timeout_ns=1_000_000_000)
    assert slave_on_followup(s, FollowUpMessage(3, 0, 1), 0) is None
    # held for a SYNC that never comes; unmatched once the timeout passes
    assert s.counters.unmatched_followups == 0 and 3 in s.early
    s.on_sync(SyncMessage(4, 0), 0)
    assert slave_on_followup(s, FollowUpMessage(4, 0, 1), 1_000_000_001) is None
    assert s.counters.expired == 1 and s.counters.unmatched_followups == 1
    assert s.lost_seqs == [4]
    s.flush()
    assert s.counters.unmatched_followups == 2 and not s.early


def test_followup_before_sync_pairs_on_arrival():
    s = Slave()
    assert s.on_followup(FollowUpMessage(9, 90, 4_000_000), 4_500_000) == []
    assert s.on_sync(SyncMessage(9, 90), 5_000_000) == TimestampTuple(9, 4_000_000, 5_000_000)
    assert not s.early and s.counters.paired == 1 and s.counters.unmatched_followups == 0


def test_early_followup_buffer_is_bounded():
    s = Slave(capacity=2)
    for seq in (1, 2, 3):
        s.on_followup(FollowUpMessage(seq, 0, seq), 0)
    assert list(s.early) == [2, 3] and s.counters.unmatched_followups == 1


def test_slave_capacity_evicts_oldest():
    s = Slave()
    for seq in range(1, 130):
        s.on_sync(SyncMessage(seq, 0), seq)
    assert len(s.pending) == 128 and 1 not in s.pending and 129 in s.pending
    assert s.counters.evicted == 1


def test_followup_delay_does_not_enter_tuple():
    results = []
    for fu_arrival in (5_000_001, 5_050_000, 5_900_000):
        s = Slave()
        s.on_sync(SyncMessage(7, 0), 5_000_000)
        results.append(slave_on_followup(s, FollowUpMessage(7, 0, 4_000_000), fu_arrival))
    assert results[0] == results[1] == results[2]


def test_batched_followup_pairs_all():
    s = Slave()
    for seq in (1, 2, 3):
        s.on_sync(SyncMessage(seq, seq), seq * 100)
    tuples = s.on_followup(FollowUpMessage(1, 1, 10, ((2, 20), (3, 30))), 400)
    assert tuples == [TimestampTuple(1, 10, 100), TimestampTuple(2, 20, 200), TimestampTuple(3, 30, 300)]


def test_tsf_cross_check():
    s = Slave()
    s.on_sync(SyncMessage(1, 500), 0)
    s.on_followup(FollowUpMessage(1, 501, 0), 1)
    assert s.counters.tsf_mismatches == 1


def test_shift_pending():
    s = Slave()
    s.on_sync(SyncMessage(1, 0), 1000)
    s.shift_pending(-400)
    assert s.on_followup(FollowUpMessage(1, 0, 5), 700) == [TimestampTuple(1, 5, 600)]


def test_followup_order_does_not_change_tuples():
    """SYNC-first and FOLLOW_UP-first deliveries form the same tuple."""
    a, b = Slave(), Slave()
    a.on_sync(SyncMessage(5, 50), 7_000)
    first = a.on_followup(FollowUpMessage(5, 50, 3_000), 9_000)
    b.on_followup(FollowUpMessage(5, 50, 3_000), 1_000)
    assert first == [b.on_sync(SyncMessage(5, 50), 7_000)]
