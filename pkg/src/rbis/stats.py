"""Summary statistics in the style of a latency table: mean, sample sigma,
1/2/3-sigma bands and linearly interpolated percentiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SummaryMetrics:
    count: int
    mean: float
    sample_sigma: float
    sigma_bands: tuple[tuple[float, float], ...]  # (lo, hi) for k = 1, 2, 3
    min: float
    max: float
    p50: float
    p95: float
    p99: float

    def scaled(self, factor: float) -> "SummaryMetrics":
        """Same metrics in another unit (e.g. ns -> ms with 1e-6)."""
        return SummaryMetrics(
            count=self.count,
            mean=self.mean * factor,
            sample_sigma=self.sample_sigma * abs(factor),
            sigma_bands=tuple((lo * factor, hi * factor) for lo, hi in self.sigma_bands),
            min=self.min * factor,
            max=self.max * factor,
            p50=self.p50 * factor,
            p95=self.p95 * factor,
            p99=self.p99 * factor,
        )

    def as_dict(self) -> dict:
        d = {
            "count": self.count,
            "mean": self.mean,
            "sample_sigma": self.sample_sigma,
            "min": self.min,
            "max": self.max,
            "p50": self.p50,
            "p95": self.p95,
            "p99": self.p99,
        }
        for k, (lo, hi) in enumerate(self.sigma_bands, start=1):
            d[f"band{k}_lo"] = lo
            d[f"band{k}_hi"] = hi
        return d


def compute_stats(samples) -> SummaryMetrics:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"need at least 2 samples, got {x.size}")
    mean = float(np.mean(x))
    sigma = float(np.std(x, ddof=1))
    p50, p95, p99 = (float(v) for v in np.percentile(x, [50, 95, 99], method="linear"))
    return SummaryMetrics(
        count=int(x.size),
        mean=mean,
        sample_sigma=sigma,
        sigma_bands=tuple((mean - k * sigma, mean + k * sigma) for k in (1, 2, 3)),
        min=float(x.min()),
        max=float(x.max()),
        p50=p50,
        p95=p95,
        p99=p99,
    )


def format_table_row(label: str, m: SummaryMetrics, unit: str = "ms") -> str:
    """One row in "mean±k·sigma" notation."""
    s = m.sample_sigma
    return (
        f"{label:<20} n={m.count:<6d} mean={m.mean:.3f}{unit}  "
        f"sigma={m.mean:.2f}±{s:.2f}  2sigma={m.mean:.2f}±{2 * s:.2f}  "
        f"3sigma={m.mean:.2f}±{3 * s:.2f}  "
        f"min={m.min:.3f} p50={m.p50:.3f} p95={m.p95:.3f} p99={m.p99:.3f} max={m.max:.3f}"
    )
