import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rbis.stats import compute_stats, format_table_row


def _reference(xs):
    """Textbook definitions, no numpy."""
    n = len(xs)
    mean = math.fsum(xs) / n
    sigma = math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / (n - 1))
    s = sorted(xs)

    def pct(p):
        h = (n - 1) * p / 100
        lo = math.floor(h)
        hi = min(lo + 1, n - 1)
        return s[lo] + (h - lo) * (s[hi] - s[lo])

    return mean, sigma, pct(50), pct(95), pct(99), s[0], s[-1]


def test_simple():
    m = compute_stats([1, 2, 3])
    assert m.mean == 2 and m.sample_sigma == 1.0
    assert m.sigma_bands == ((1.0, 3.0), (0.0, 4.0), (-1.0, 5.0))


def test_constant():
    assert compute_stats([4.5] * 10).sample_sigma == 0


def test_rejects_short():
    with pytest.raises(ValueError):
        compute_stats([1.0])


def test_bss24_draws():
    rng = np.random.default_rng(11)
    m = compute_stats(rng.normal(3.19, 1.80, 6000))
    assert m.mean == pytest.approx(3.19, rel=0.05)
    assert m.sample_sigma == pytest.approx(1.80, rel=0.05)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=200))
def test_matches_reference(xs):
    m = compute_stats(xs)
    mean, sigma, p50, p95, p99, lo, hi = _reference(xs)
    scale = max(1.0, max(abs(x) for x in xs))
    assert m.mean == pytest.approx(mean, rel=1e-9, abs=1e-9 * scale)
    assert m.sample_sigma == pytest.approx(sigma, rel=1e-9, abs=1e-9 * scale)
    for got, want in ((m.p50, p50), (m.p95, p95), (m.p99, p99)):
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9 * scale)
    assert (m.min, m.max) == (lo, hi)


def test_scaled_and_row():
    m = compute_stats([1e6, 2e6, 3e6]).scaled(1e-6)
    assert m.mean == pytest.approx(2.0)
    row = format_table_row("x", m)
    assert "2.00±1.00" in row and "2.00±3.00" in row
    assert m.as_dict()["band3_hi"] == pytest.approx(5.0)
