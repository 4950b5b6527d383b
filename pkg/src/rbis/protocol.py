"""RBIS messages, wire format and master/slave state machines.

Wire layout (big-endian)::

    magic "RBIS" | version u8 | type u8 | seq u32 | tsf_us u64
    FOLLOW_UP adds: master_time_ns u64
    batched FOLLOW_UP adds: count u8 | count * (seq u32, master_time_ns u64)

A SYNC is 18 bytes and a single FOLLOW_UP 26 bytes.  The trailing groups
only appear when a FOLLOW_UP covers more than one SYNC.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field

from .estimator import TimestampTuple

MAGIC = b"RBIS"
VERSION = 0x01
TYPE_SYNC = 0x01
TYPE_FOLLOW_UP = 0x02

_HEADER = struct.Struct(">4sBBIQ")
_MASTER_TIME = struct.Struct(">Q")
_GROUP = struct.Struct(">IQ")
HEADER_LEN = _HEADER.size  # 18
SYNC_LEN = HEADER_LEN
FOLLOW_UP_LEN = HEADER_LEN + _MASTER_TIME.size  # 26
MAX_BATCH = 1 + 255

DEFAULT_PAIRING_TIMEOUT_NS = 1_000_000_000
DEFAULT_PENDING_CAPACITY = 128

U32_MAX = 0xFFFF_FFFF
U64_MAX = 0xFFFF_FFFF_FFFF_FFFF


class DecodeError(ValueError):
    pass


class BadMagic(DecodeError):
    pass


class UnsupportedVersion(DecodeError):
    pass


class UnknownType(DecodeError):
    pass


class Truncated(DecodeError):
    pass


class TrailingBytes(DecodeError):
    pass


class ProtocolFault(RuntimeError):
    """The master's beacon timestamps went backwards."""


@dataclass(frozen=True)
class SyncMessage:
    seq: int
    tsf_us: int


@dataclass(frozen=True)
class FollowUpMessage:
    seq: int
    tsf_us: int
    master_time_ns: int
    # further (seq, master_time_ns) pairs when several SYNCs are batched
    extra: tuple[tuple[int, int], ...] = ()

    def entries(self) -> list[tuple[int, int]]:
        return [(self.seq, self.master_time_ns), *self.extra]


Message = SyncMessage | FollowUpMessage


def _check_range(name: str, value: int, hi: int) -> None:
    if not 0 <= value <= hi:
        raise ValueError(f"{name}={value} out of range [0, {hi}]")


def encode(msg: Message) -> bytes:
    _check_range("seq", msg.seq, U32_MAX)
    _check_range("tsf_us", msg.tsf_us, U64_MAX)
    if isinstance(msg, SyncMessage):
        return _HEADER.pack(MAGIC, VERSION, TYPE_SYNC, msg.seq, msg.tsf_us)
    if isinstance(msg, FollowUpMessage):
        _check_range("master_time_ns", msg.master_time_ns, U64_MAX)
        out = bytearray(_HEADER.pack(MAGIC, VERSION, TYPE_FOLLOW_UP, msg.seq, msg.tsf_us))
        out += _MASTER_TIME.pack(msg.master_time_ns)
        if msg.extra:
            if len(msg.extra) > 255:
                raise ValueError("at most 255 extra entries per FOLLOW_UP")
            out.append(len(msg.extra))
            for seq, t in msg.extra:
                _check_range("seq", seq, U32_MAX)
                _check_range("master_time_ns", t, U64_MAX)
                out += _GROUP.pack(seq, t)
        return bytes(out)
    raise TypeError(f"cannot encode {type(msg).__name__}")


def decode(data: bytes) -> Message:
    data = bytes(data)
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4].hex()}")
    if len(data) < HEADER_LEN:
        if not MAGIC.startswith(data[:4]):
            raise BadMagic(f"bad magic {data[:4].hex()}")
        raise Truncated(f"need at least {HEADER_LEN} bytes, got {len(data)}")
    magic, version, mtype, seq, tsf = _HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version}")
    if mtype == TYPE_SYNC:
        if len(data) != SYNC_LEN:
            raise TrailingBytes(f"SYNC is {SYNC_LEN} bytes, got {len(data)}")
        return SyncMessage(seq, tsf)
    if mtype != TYPE_FOLLOW_UP:
        raise UnknownType(f"unknown message type 0x{mtype:02x}")
    if len(data) < FOLLOW_UP_LEN:
        raise Truncated(f"FOLLOW_UP needs {FOLLOW_UP_LEN} bytes, got {len(data)}")
    (master_time,) = _MASTER_TIME.unpack_from(data, HEADER_LEN)
    if len(data) == FOLLOW_UP_LEN:
        return FollowUpMessage(seq, tsf, master_time)
    count = data[FOLLOW_UP_LEN]
    expected = FOLLOW_UP_LEN + 1 + count * _GROUP.size
    if count == 0:
        raise TrailingBytes("batched FOLLOW_UP with zero entries")
    if len(data) < expected:
        raise Truncated(f"batched FOLLOW_UP needs {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise TrailingBytes(f"{len(data) - expected} unexpected trailing bytes")
    extra = tuple(
        _GROUP.unpack_from(data, FOLLOW_UP_LEN + 1 + i * _GROUP.size) for i in range(count)
    )
    return FollowUpMessage(seq, tsf, master_time, extra)


class Master:
    """Master side: numbers beacons and publishes their master timestamps.

    With ``follow_up_every=N`` one FOLLOW_UP is released per N beacons,
    carrying all N timestamps; :meth:`flush` releases a partial batch.
    """

    def __init__(self, follow_up_every: int = 1):
        if not 1 <= follow_up_every <= MAX_BATCH:
            raise ValueError(f"follow_up_every must be in [1, {MAX_BATCH}]")
        self.follow_up_every = follow_up_every
        self.seq = 0
        self.last_tsf_us: int | None = None
        self._batch: list[tuple[int, int, int]] = []

    def on_beacon(self, tsf_us: int, master_time_ns: int) -> tuple[SyncMessage, FollowUpMessage | None]:
        if self.last_tsf_us is not None and tsf_us < self.last_tsf_us:
            raise ProtocolFault(f"TSF regressed: {tsf_us} < {self.last_tsf_us}")
        self.last_tsf_us = tsf_us
        self.seq = (self.seq + 1) & U32_MAX
        sync = SyncMessage(self.seq, tsf_us)
        self._batch.append((self.seq, tsf_us, master_time_ns))
        if len(self._batch) >= self.follow_up_every:
            return sync, self.flush()
        return sync, None

    def flush(self) -> FollowUpMessage | None:
        if not self._batch:
            return None
        (seq, tsf, t), *rest = self._batch
        self._batch = []
        return FollowUpMessage(seq, tsf, t, tuple((s, m) for s, _, m in rest))


def master_on_beacon(
    state: Master, tsf_us: int, system_time_ns: int
) -> tuple[SyncMessage, FollowUpMessage | None]:
    return state.on_beacon(tsf_us, system_time_ns)


@dataclass
class PendingSync:
    seq: int
    t_slave_ns: int
    expiry: int
    tsf_us: int = 0


@dataclass
class EarlyFollowUp:
    """A FOLLOW_UP entry that overtook its SYNC, held until the SYNC lands."""

    master_time_ns: int
    expiry: int
    tsf_us: int | None = None


@dataclass
class SlaveCounters:
    syncs: int = 0
    duplicate_syncs: int = 0
    paired: int = 0
    unmatched_followups: int = 0
    expired: int = 0
    evicted: int = 0
    tsf_mismatches: int = 0


class Slave:
    """Slave side: timestamps SYNCs and pairs them with FOLLOW_UP entries.

    Pending receptions live until the pairing timeout (slave local time) or
    until capacity pushes out the oldest.  A duplicate SYNC keeps the first
    reception time.  FOLLOW_UP entries that arrive before their SYNC are held
    under the same timeout and capacity, and only count as unmatched if they
    leave that buffer unpaired.
    """

    def __init__(
        self,
        pairing_timeout_ns: int = DEFAULT_PAIRING_TIMEOUT_NS,
        capacity: int = DEFAULT_PENDING_CAPACITY,
    ):
        if pairing_timeout_ns <= 0 or capacity < 1:
            raise ValueError("pairing timeout and capacity must be positive")
        self.pairing_timeout_ns = pairing_timeout_ns
        self.capacity = capacity
        self.pending: OrderedDict[int, PendingSync] = OrderedDict()
        self.early: OrderedDict[int, EarlyFollowUp] = OrderedDict()
        self.counters = SlaveCounters()
        # seqs that left the pending table unpaired, in order
        self.lost_seqs: list[int] = []

    def _expire(self, local_now: int) -> None:
        for seq in [s for s, p in self.pending.items() if p.expiry < local_now]:
            del self.pending[seq]
            self.counters.expired += 1
            self.lost_seqs.append(seq)
        for seq in [s for s, e in self.early.items() if e.expiry < local_now]:
            del self.early[seq]
            self.counters.unmatched_followups += 1

    def _tuple(self, seq: int, master_time_ns: int, t_slave_ns: int,
               sent_tsf: int | None, seen_tsf: int) -> TimestampTuple:
        if sent_tsf is not None and sent_tsf != seen_tsf:
            self.counters.tsf_mismatches += 1
        self.counters.paired += 1
        return TimestampTuple(seq, master_time_ns, t_slave_ns)

    def on_sync(self, msg: SyncMessage, local_time_ns: int) -> TimestampTuple | None:
        """Record a reception; returns a tuple if its FOLLOW_UP came first."""
        self._expire(local_time_ns)
        self.counters.syncs += 1
        if msg.seq in self.pending:
            self.counters.duplicate_syncs += 1
            return None
        e = self.early.pop(msg.seq, None)
        if e is not None:
            return self._tuple(msg.seq, e.master_time_ns, local_time_ns, e.tsf_us, msg.tsf_us)
        if len(self.pending) >= self.capacity:
            seq, _ = self.pending.popitem(last=False)
            self.counters.evicted += 1
            self.lost_seqs.append(seq)
        self.pending[msg.seq] = PendingSync(
            msg.seq, local_time_ns, local_time_ns + self.pairing_timeout_ns, msg.tsf_us
        )
        return None

    def expire(self, local_now: int) -> None:
        self._expire(local_now)

    def pair(
        self,
        seq: int,
        master_time_ns: int,
        tsf_us: int | None = None,
        local_time_ns: int | None = None,
    ) -> TimestampTuple | None:
        """Pair one FOLLOW_UP entry with its pending reception, if any.

        With ``local_time_ns`` an entry that has no reception yet is held for
        a later SYNC; without it the entry is counted as unmatched at once.
        """
        p = self.pending.pop(seq, None)
        if p is not None:
            return self._tuple(seq, master_time_ns, p.t_slave_ns, tsf_us, p.tsf_us)
        if local_time_ns is None:
            self.counters.unmatched_followups += 1
            return None
        if seq in self.early:
            # repeated FOLLOW_UP for the same beacon: keep the first
            self.counters.unmatched_followups += 1
            return None
        if len(self.early) >= self.capacity:
            self.early.popitem(last=False)
            self.counters.unmatched_followups += 1
        self.early[seq] = EarlyFollowUp(master_time_ns, local_time_ns + self.pairing_timeout_ns, tsf_us)
        return None

    def on_followup(self, msg: FollowUpMessage, local_time_ns: int) -> list[TimestampTuple]:
        self._expire(local_time_ns)
        out = []
        for seq, master_time in msg.entries():
            tup = self.pair(seq, master_time, msg.tsf_us if seq == msg.seq else None, local_time_ns)
            if tup is not None:
                out.append(tup)
        return out

    def shift_pending(self, delta_ns: int) -> None:
        """Re-express pending reception times after a clock step."""
        for p in self.pending.values():
            p.t_slave_ns += delta_ns
            p.expiry += delta_ns
        for e in self.early.values():
            e.expiry += delta_ns

    def flush(self) -> list[int]:
        """Drop every pending entry (end of session); returns their seqs."""
        seqs = list(self.pending)
        self.pending.clear()
        self.counters.expired += len(seqs)
        self.lost_seqs.extend(seqs)
        self.counters.unmatched_followups += len(self.early)
        self.early.clear()
        return seqs


def slave_on_sync(state: Slave, msg: SyncMessage, local_time_ns: int) -> Slave:
    state.on_sync(msg, local_time_ns)
    return state


def slave_on_followup(
    state: Slave, msg: FollowUpMessage, local_time_ns: int
) -> TimestampTuple | None:
    """Single-entry form: the first tuple formed, if any."""
    tuples = state.on_followup(msg, local_time_ns)
    return tuples[0] if tuples else None
