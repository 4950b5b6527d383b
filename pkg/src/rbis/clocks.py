"""Simulated clocks and the 802.11 TSF counter.

A :class:`SimulatedClock` maps true (simulation) time to a local clock
reading.  Its value is stored as a chain of linear segments: every frequency
change or step starts a new segment anchored at the integer value the clock
had at that moment, so past reads never change retroactively and replays are
bit-exact.

All values are integer nanoseconds.  The fractional part of the drift term is
rounded half away from zero, once per read.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Protocol

NS_PER_US = 1000
PPB_SCALE = 1_000_000_000
MAX_SKEW_PPM = 1000.0
DEFAULT_MAX_FREQ_PPB = 500_000


class ClockOrderError(ValueError):
    """Raised when a clock is read or adjusted at an earlier true time."""


class BackwardStepError(ValueError):
    """Raised on a negative step that the caller did not explicitly permit."""


def div_round_half_away(num: int, den: int) -> int:
    """Integer ``num / den`` rounded half away from zero (``den > 0``)."""
    if den <= 0:
        raise ValueError("denominator must be positive")
    q, r = divmod(abs(num), den)
    if 2 * r >= den:
        q += 1
    return q if num >= 0 else -q


def round_half_away(x: float | Fraction) -> int:
    fx = Fraction(x)
    return div_round_half_away(fx.numerator, fx.denominator)


def _exact_ppm(skew_ppm: float) -> Fraction:
    # repr() gives the shortest decimal that round-trips, so 3.96 stays 99/25
    return Fraction(repr(float(skew_ppm)))


class SimulatedClock:
    """A drifting local clock driven by true time.

    ``read(t)`` returns ``anchor_value + (t - anchor_true)`` plus the drift
    ``(t - anchor_true) * (skew_ppb + freq_adj_ppb) / 1e9``.  At construction
    the anchor is ``(base_true_ns, base_true_ns + offset_ns)``.
    """

    def __init__(
        self,
        offset_ns: int = 0,
        skew_ppm: float = 0.0,
        freq_adj_ppb: int = 0,
        base_true_ns: int = 0,
        max_freq_adj_ppb: int = DEFAULT_MAX_FREQ_PPB,
    ):
        if abs(skew_ppm) > MAX_SKEW_PPM:
            raise ValueError(f"|skew_ppm| must be <= {MAX_SKEW_PPM}, got {skew_ppm}")
        if max_freq_adj_ppb < 0:
            raise ValueError("max_freq_adj_ppb must be non-negative")
        self.offset_ns = int(offset_ns)
        self.skew_ppm = float(skew_ppm)
        self.max_freq_adj_ppb = int(max_freq_adj_ppb)
        self.saturated = False
        self._skew_ppb = _exact_ppm(skew_ppm) * 1000
        self._anchor_true = int(base_true_ns)
        self._anchor_value = int(base_true_ns) + self.offset_ns
        self._last_true = int(base_true_ns)
        self.freq_adj_ppb = self._clamp(int(freq_adj_ppb))
        self._set_rate()

    @property
    def base_true_ns(self) -> int:
        return self._anchor_true

    @property
    def rate_ppb(self) -> Fraction:
        """Total frequency error currently applied, in ppb."""
        return self._skew_ppb + self.freq_adj_ppb

    def _set_rate(self) -> None:
        r = self.rate_ppb
        self._rate_num = r.numerator
        self._rate_den = r.denominator * PPB_SCALE

    def _clamp(self, adj_ppb: int) -> int:
        lim = self.max_freq_adj_ppb
        if adj_ppb > lim or adj_ppb < -lim:
            self.saturated = True
            return lim if adj_ppb > 0 else -lim
        self.saturated = False
        return adj_ppb

    def _check_order(self, true_now: int) -> None:
        if true_now < self._last_true:
            raise ClockOrderError(
                f"true time went backwards: {true_now} < {self._last_true}"
            )

    def peek(self, true_now: int) -> int:
        """Evaluate the current segment without recording a read.

        Only valid for ``true_now`` at or after the last adjustment.
        """
        elapsed = int(true_now) - self._anchor_true
        if elapsed < 0:
            raise ClockOrderError("cannot evaluate before the current segment")
        drift = div_round_half_away(elapsed * self._rate_num, self._rate_den)
        return self._anchor_value + elapsed + drift

    def read(self, true_now: int) -> int:
        true_now = int(true_now)
        self._check_order(true_now)
        self._last_true = true_now
        return self.peek(true_now)

    def tsf(self, true_now: int) -> int:
        """TSF counter value in microseconds (1 MHz tick of this clock)."""
        return self.read(true_now) // NS_PER_US

    def _reanchor(self, true_now: int) -> None:
        self._anchor_value = self.read(true_now)
        self._anchor_true = true_now

    def step(self, delta_ns: int, true_now: int, allow_backward: bool = False) -> None:
        """Shift all subsequent reads by exactly ``delta_ns``."""
        true_now = int(true_now)
        self._check_order(true_now)
        if delta_ns < 0 and not allow_backward:
            raise BackwardStepError(f"backward step of {delta_ns} ns not permitted")
        self._reanchor(true_now)
        self._anchor_value += int(delta_ns)

    def set_freq(self, adj_ppb: int, true_now: int) -> int:
        """Apply a frequency correction from ``true_now`` on.

        Out-of-range requests saturate at ``max_freq_adj_ppb`` and set
        :attr:`saturated`.  Returns the correction actually applied.
        """
        true_now = int(true_now)
        self._check_order(true_now)
        self._reanchor(true_now)
        self.freq_adj_ppb = self._clamp(int(adj_ppb))
        self._set_rate()
        return self.freq_adj_ppb

    def __repr__(self) -> str:
        return (
            f"SimulatedClock(offset_ns={self.offset_ns}, skew_ppm={self.skew_ppm}, "
            f"freq_adj_ppb={self.freq_adj_ppb})"
        )


def clock_read(clock: SimulatedClock, true_now: int) -> int:
    return clock.read(true_now)


def tsf_read(clock: SimulatedClock, true_now: int) -> int:
    return clock.tsf(true_now)


def clock_step(
    clock: SimulatedClock, delta_ns: int, true_now: int, allow_backward: bool = False
) -> SimulatedClock:
    clock.step(delta_ns, true_now, allow_backward=allow_backward)
    return clock


def clock_set_freq(clock: SimulatedClock, adj_ppb: int, true_now: int) -> SimulatedClock:
    clock.set_freq(adj_ppb, true_now)
    return clock


class TimestampSource(Protocol):
    """Anything that turns "now" into a local timestamp in nanoseconds."""

    def timestamp_ns(self, true_now: int) -> int: ...


class TsfSource:
    """Timestamps taken from the TSF counter: microsecond-grained, in ns."""

    name = "tsf"

    def __init__(self, clock: SimulatedClock):
        self.clock = clock

    def timestamp_ns(self, true_now: int) -> int:
        return self.clock.tsf(true_now) * NS_PER_US


class SystemSource:
    """Timestamps taken from the full-resolution system clock."""

    name = "system"

    def __init__(self, clock: SimulatedClock):
        self.clock = clock

    def timestamp_ns(self, true_now: int) -> int:
        return self.clock.read(true_now)


TIMESTAMP_SOURCES = {"tsf": TsfSource, "system": SystemSource}


def make_source(name: str, clock: SimulatedClock) -> TimestampSource:
    try:
        return TIMESTAMP_SOURCES[name](clock)
    except KeyError:
        raise ValueError(
            f"unknown timestamp source {name!r}; expected one of {sorted(TIMESTAMP_SOURCES)}"
        ) from None
