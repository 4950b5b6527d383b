from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from rbis.clocks import (
    BackwardStepError,
    ClockOrderError,
    SimulatedClock,
    SystemSource,
    TsfSource,
    clock_read,
    clock_set_freq,
    clock_step,
    div_round_half_away,
    make_source,
    tsf_read,
)


def test_identity_clock():
    assert clock_read(SimulatedClock(), 10**9) == 10**9


def test_skewed_clock_after_one_second():
    # 1e9 * (1 + 3.96e-6)
    assert clock_read(SimulatedClock(skew_ppm=3.96), 10**9) == 1_000_003_960


def test_pure_offset():
    assert clock_read(SimulatedClock(offset_ns=500), 1000) == 1500


def test_non_monotone_read_rejected():
    c = SimulatedClock()
    c.read(100)
    with pytest.raises(ClockOrderError):
        c.read(99)


def test_skew_sanity_bound():
    SimulatedClock(skew_ppm=1000)
    with pytest.raises(ValueError):
        SimulatedClock(skew_ppm=1000.5)


@pytest.mark.parametrize("offset,expected_us", [(1_000_003_960 - 10**9, 1_000_003), (999 - 10**9, 0)])
def test_tsf_truncates(offset, expected_us):
    c = SimulatedClock(offset_ns=offset)
    assert tsf_read(c, 10**9) == expected_us


def test_tsf_beacon_interval():
    assert tsf_read(SimulatedClock(), 102_400_000) == 102_400


def test_step_forward_and_zero():
    c = SimulatedClock(skew_ppm=3.96)
    before = c.read(5_000)
    clock_step(c, 600, 5_000)
    assert c.read(5_000) == before + 600
    clock_step(c, 0, 5_000)
    assert c.read(5_000) == before + 600


def test_backward_step_needs_permission():
    c = SimulatedClock(offset_ns=5 * 10**9)
    before = c.read(10)
    with pytest.raises(BackwardStepError):
        c.step(-(10**9), 10)
    c.step(-(10**9), 10, allow_backward=True)
    assert c.read(10) == before - 10**9


def test_set_freq_cancels_skew():
    c = SimulatedClock(skew_ppm=3.96)
    t0 = 10**9
    v0 = c.read(t0)
    clock_set_freq(c, -3960, t0)
    assert c.rate_ppb == 0
    t1 = t0 + 10**12
    assert c.read(t1) - v0 == t1 - t0


def test_set_freq_zero_is_noop():
    a, b = SimulatedClock(skew_ppm=-12.5), SimulatedClock(skew_ppm=-12.5)
    a.set_freq(0, 7_777)
    for t in (7_777, 10**8, 10**11):
        assert a.read(t) == b.read(t)


def test_set_freq_saturates():
    c = SimulatedClock()
    applied = c.set_freq(10**6, 0)
    assert applied == 500_000 and c.freq_adj_ppb == 500_000 and c.saturated
    assert c.set_freq(-(10**6), 0) == -500_000 and c.saturated
    c.set_freq(1000, 0)
    assert not c.saturated


def test_set_freq_continuous():
    c = SimulatedClock(skew_ppm=50)
    v = c.read(123_456_789)
    c.set_freq(-200_000, 123_456_789)
    assert c.read(123_456_789) == v


@pytest.mark.parametrize(
    "num,den,expected",
    [(5, 2, 3), (-5, 2, -3), (4, 2, 2), (7, 3, 2), (-7, 3, -2), (1, 2, 1), (-1, 2, -1), (0, 9, 0)],
)
def test_round_half_away(num, den, expected):
    assert div_round_half_away(num, den) == expected


@given(
    offset=st.integers(-(10**12), 10**12),
    ppm=st.floats(-1000, 1000, allow_nan=False),
    times=st.lists(st.integers(0, 10**13), min_size=1, max_size=20),
)
def test_tsf_is_floor_of_read(offset, ppm, times):
    a = SimulatedClock(offset_ns=offset, skew_ppm=ppm)
    b = SimulatedClock(offset_ns=offset, skew_ppm=ppm)
    for t in sorted(times):
        assert a.tsf(t) == b.read(t) // 1000


@given(
    ppm=st.floats(-1000, 1000, allow_nan=False),
    adjs=st.lists(st.tuples(st.integers(1, 10**11), st.integers(-500_000, 500_000)), max_size=8),
    probe=st.integers(0, 10**11),
)
def test_composition_with_freq_changes(ppm, adjs, probe):
    """Value after a frequency change equals the value at the change plus the
    new rate times elapsed time, rounded once."""
    c = SimulatedClock(skew_ppm=ppm)
    t = 0
    anchor_t, anchor_v = 0, 0
    rate = Fraction(repr(ppm)) * 1000
    for dt, adj in adjs:
        t += dt
        e = t - anchor_t
        anchor_v = anchor_v + e + div_round_half_away((e * rate).numerator, (e * rate).denominator * 10**9)
        anchor_t = t
        c.set_freq(adj, t)
        rate = Fraction(repr(ppm)) * 1000 + adj
    tp = t + probe
    e = tp - anchor_t
    expected = anchor_v + e + div_round_half_away((e * rate).numerator, (e * rate).denominator * 10**9)
    assert c.read(tp) == expected


@given(
    ppm=st.floats(-1000, 1000, allow_nan=False),
    ops=st.lists(
        st.tuples(st.integers(0, 10**10), st.integers(-500_000, 500_000), st.booleans()), max_size=15
    ),
)
def test_monotone_without_backward_steps(ppm, ops):
    c = SimulatedClock(skew_ppm=ppm)
    t, last = 0, c.read(0)
    for dt, adj, is_step in ops:
        t += dt
        if is_step:
            c.step(abs(adj), t)
        else:
            c.set_freq(adj, t)
        v = c.read(t)
        assert v >= last
        last = v


def test_sources():
    c = SimulatedClock(offset_ns=1_234_567)
    assert TsfSource(c).timestamp_ns(0) == 1_234_000
    assert SystemSource(c).timestamp_ns(0) == 1_234_567
    assert make_source("tsf", c).name == "tsf"
    with pytest.raises(ValueError):
        make_source("gps", c)
