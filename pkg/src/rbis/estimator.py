"""Offset and skew estimation from paired master/slave timestamps.

Offset is the plain difference ``t_slave - t_master``.  Instantaneous skew is
the change in offset divided by the elapsed master time since the previous
accepted tuple, so dropped SYNCs between two samples do not bias it.  A
sliding-window least-squares slope of offset against master time gives the
filtered skew.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1
UINT16_MAX = 0xFFFF
DEFAULT_WINDOW = 64


class SessionFault(RuntimeError):
    """Master time regressed while sequence numbers advanced."""


@dataclass(frozen=True)
class TimestampTuple:
    seq: int
    t_master_ns: int
    t_slave_ns: int


@dataclass(frozen=True)
class SyncEstimate:
    seq: int
    offset_ns: int
    skew_ppm: float
    window_skew_ppm: float
    dropped_since_last: int
    valid_skew: bool
    t_master_ns: int = 0
    interval_ns: int = 0


@dataclass(frozen=True)
class Increment:
    """Offset change between two consecutive accepted tuples."""

    seq: int
    gap: int
    delta_offset_ns: int
    delta_master_ns: int


def compute_offset(tup: TimestampTuple) -> int:
    offset = tup.t_slave_ns - tup.t_master_ns
    assert INT64_MIN <= offset <= INT64_MAX, "offset overflows signed 64-bit"
    return offset


def compute_skew(
    prev_offset_ns: int, curr_offset_ns: int, curr_t_master_ns: int, prev_t_master_ns: int
) -> float:
    """Skew in ppm between two offset samples."""
    dt = curr_t_master_ns - prev_t_master_ns
    if dt <= 0:
        raise ValueError(f"master time must increase, got delta {dt} ns")
    return (curr_offset_ns - prev_offset_ns) * 1_000_000 / dt


def ls_slope_ppm(points) -> float:
    """Least-squares slope of (x, y) integer points, in ppm.

    Sums are exact integers; only the final division is floating point.
    """
    n = len(points)
    if n < 2:
        raise ValueError("need at least two points")
    x0 = points[0][0]
    sx = sy = sxx = sxy = 0
    for x, y in points:
        x -= x0
        sx += x
        sy += y
        sxx += x * x
        sxy += x * y
    den = n * sxx - sx * sx
    if den == 0:
        raise ValueError("degenerate abscissae")
    return (n * sxy - sx * sy) * 1_000_000 / den


class Estimator:
    """Per-session estimator state machine.

    Feed tuples in sequence order with :meth:`update`.  Tuples with a
    sequence number at or below the last accepted one are discarded and
    counted in :attr:`discarded`.
    """

    def __init__(self, window: int = DEFAULT_WINDOW, keep_increments: bool = True):
        if window < 2:
            raise ValueError("window must hold at least two samples")
        self.window = window
        self.keep_increments = keep_increments
        self.discarded = 0
        self.accepted = 0
        self._points: deque[tuple[int, int]] = deque(maxlen=window)
        self._last: SyncEstimate | None = None
        self._increments: list[Increment] = []

    @property
    def last(self) -> SyncEstimate | None:
        return self._last

    def update(self, tup: TimestampTuple) -> SyncEstimate | None:
        prev = self._last
        if prev is not None and tup.seq <= prev.seq:
            self.discarded += 1
            return None
        if prev is not None and tup.t_master_ns <= prev.t_master_ns:
            raise SessionFault(
                f"master time regressed at seq {tup.seq}: "
                f"{tup.t_master_ns} <= {prev.t_master_ns}"
            )
        offset = compute_offset(tup)
        self._points.append((tup.t_master_ns, offset))
        if prev is None:
            est = SyncEstimate(
                seq=tup.seq,
                offset_ns=offset,
                skew_ppm=0.0,
                window_skew_ppm=0.0,
                dropped_since_last=0,
                valid_skew=False,
                t_master_ns=tup.t_master_ns,
            )
        else:
            gap = tup.seq - prev.seq
            dt = tup.t_master_ns - prev.t_master_ns
            if self.keep_increments:
                self._increments.append(Increment(tup.seq, gap, offset - prev.offset_ns, dt))
            est = SyncEstimate(
                seq=tup.seq,
                offset_ns=offset,
                skew_ppm=compute_skew(prev.offset_ns, offset, tup.t_master_ns, prev.t_master_ns),
                window_skew_ppm=ls_slope_ppm(self._points),
                dropped_since_last=min(gap - 1, UINT16_MAX),
                valid_skew=True,
                t_master_ns=tup.t_master_ns,
                interval_ns=dt,
            )
        self.accepted += 1
        self._last = est
        return est

    def apply_step(self, delta_ns: int) -> None:
        """Re-express stored history after the slave clock was stepped.

        Keeps the next instantaneous skew and the window fit free of the
        discontinuity.
        """
        if not delta_ns:
            return
        self._points = deque(((x, y + delta_ns) for x, y in self._points), maxlen=self.window)
        if self._last is not None:
            self._last = replace(self._last, offset_ns=self._last.offset_ns + delta_ns)

    def increments(self) -> list[Increment]:
        return list(self._increments)


def estimator_update(state: Estimator, tup: TimestampTuple) -> SyncEstimate | None:
    return state.update(tup)


def raw_increment_series(state: Estimator) -> list[Increment]:
    return state.increments()
