"""Offline analysis of a recorded trace."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .stats import SummaryMetrics, compute_stats
from .trace import TraceRecord, read_trace

SETTLE_ROWS = 64


@dataclass(frozen=True)
class GapRow:
    gap: int
    count: int
    mean_increment_ns: float
    per_beacon_ns: float
    ratio_to_base: float | None


@dataclass
class AnalysisReport:
    rows: int
    first_seq: int | None = None
    last_seq: int | None = None
    dropped: int = 0
    offset: SummaryMetrics | None = None
    skew: SummaryMetrics | None = None
    window_skew: SummaryMetrics | None = None
    final_window_skew_ppm: float | None = None
    base_increment_ns: float | None = None
    gap_table: list[GapRow] = field(default_factory=list)
    locked_rows: int = 0
    post_lock_offset: SummaryMetrics | None = None
    post_lock_max_abs_ns: int | None = None
    post_lock_mean_abs_ns: float | None = None

    def render(self) -> str:
        lines = [f"rows: {self.rows}"]
        if self.rows == 0:
            lines.append("dropped SYNCs: 0")
            lines.append("no tuples recorded")
            return "\n".join(lines) + "\n"
        lines.append(f"seq range: {self.first_seq}..{self.last_seq}  dropped SYNCs: {self.dropped}")
        for label, m, unit, fmt in (
            ("offset", self.offset, "ns", ".1f"),
            ("skew (instantaneous)", self.skew, "ppm", ".6f"),
            ("skew (window)", self.window_skew, "ppm", ".6f"),
        ):
            if m is not None:
                lines.append(
                    f"{label:<22} mean={m.mean:{fmt}} {unit}  sigma={m.sample_sigma:{fmt}}  "
                    f"min={m.min:{fmt}}  p50={m.p50:{fmt}}  max={m.max:{fmt}}"
                )
        if self.final_window_skew_ppm is not None:
            lines.append(f"final window skew: {self.final_window_skew_ppm:.6f} ppm")
        if self.gap_table:
            base = f"{self.base_increment_ns:.1f} ns" if self.base_increment_ns is not None else "n/a"
            lines.append(f"offset increment by seq gap (base increment {base}):")
            lines.append("  gap  count  mean_increment_ns  per_beacon_ns  x_base")
            for g in self.gap_table:
                ratio = f"{g.ratio_to_base:.3f}" if g.ratio_to_base is not None else "-"
                lines.append(
                    f"  {g.gap:>3}  {g.count:>5}  {g.mean_increment_ns:>17.1f}  "
                    f"{g.per_beacon_ns:>13.1f}  {ratio:>6}"
                )
        if self.post_lock_offset is not None:
            m = self.post_lock_offset
            lines.append(
                f"post-lock disciplined offset ({self.locked_rows} rows): mean={m.mean:.1f} ns  "
                f"sigma={m.sample_sigma:.1f}  mean|.|={self.post_lock_mean_abs_ns:.1f}  "
                f"max|.|={self.post_lock_max_abs_ns}"
            )
        return "\n".join(lines) + "\n"


def _stats_or_none(values) -> SummaryMetrics | None:
    return compute_stats(values) if len(values) >= 2 else None


def analyze_records(records: list[TraceRecord], settle_rows: int = SETTLE_ROWS) -> AnalysisReport:
    rep = AnalysisReport(rows=len(records))
    if not records:
        return rep
    rep.first_seq = records[0].seq
    rep.last_seq = records[-1].seq
    rep.dropped = sum(r.dropped_since_last for r in records)
    rep.offset = _stats_or_none([r.offset_ns for r in records])
    valid = records[1:]
    rep.skew = _stats_or_none([r.skew_ppm for r in valid])
    settled = valid[settle_rows:] if len(valid) > settle_rows + 1 else valid
    rep.window_skew = _stats_or_none([r.window_skew_ppm for r in settled])
    if valid:
        rep.final_window_skew_ppm = valid[-1].window_skew_ppm

    # same settling as the window skew, so an initial servo step stays out
    rows = records[-len(settled) - 1:]
    by_gap: dict[int, list[int]] = defaultdict(list)
    for prev, cur in zip(rows, rows[1:]):
        by_gap[cur.seq - prev.seq].append(cur.offset_ns - prev.offset_ns)
    if 1 in by_gap:
        rep.base_increment_ns = sum(by_gap[1]) / len(by_gap[1])
    for gap in sorted(by_gap):
        incs = by_gap[gap]
        mean = sum(incs) / len(incs)
        ratio = None
        if rep.base_increment_ns:
            ratio = mean / rep.base_increment_ns
        rep.gap_table.append(GapRow(gap, len(incs), mean, mean / gap, ratio))

    first_lock = next((i for i, r in enumerate(records) if r.servo_phase == "locked"), None)
    if first_lock is not None:
        post = [r.disciplined_offset_ns for r in records[first_lock:] if r.disciplined_offset_ns is not None]
        rep.locked_rows = len(post)
        if post:
            rep.post_lock_max_abs_ns = max(abs(v) for v in post)
            rep.post_lock_mean_abs_ns = sum(abs(v) for v in post) / len(post)
            rep.post_lock_offset = _stats_or_none(post)
    return rep


def analyze_trace(path, settle_rows: int = SETTLE_ROWS) -> AnalysisReport:
    return analyze_records(read_trace(path), settle_rows)
