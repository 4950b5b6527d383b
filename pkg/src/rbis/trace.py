"""CSV trace persistence.

File layout: a version line ``rbis-trace-v1``, a column header row, then one
row per processed tuple.  Nanosecond fields are decimal integers, ppm fields
use six decimals, fields that do not apply (live runs have no true time) are
left empty.
"""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path

TRACE_VERSION = "rbis-trace-v1"


class TraceFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass(frozen=True)
class TraceRecord:
    true_time_ns: int | None
    seq: int
    t_master_ns: int
    t_slave_ns: int
    offset_ns: int
    skew_ppm: float
    window_skew_ppm: float
    dropped_since_last: int
    servo_phase: str
    servo_output_ppb: int
    disciplined_offset_ns: int | None

    def __post_init__(self):
        # ppm fields are stored at the precision they are written with, so a
        # write/read cycle is exact
        object.__setattr__(self, "skew_ppm", round(float(self.skew_ppm), 6))
        object.__setattr__(self, "window_skew_ppm", round(float(self.window_skew_ppm), 6))


COLUMNS = tuple(f.name for f in fields(TraceRecord))
_PPM = {"skew_ppm", "window_skew_ppm"}
_OPTIONAL = {"true_time_ns", "disciplined_offset_ns"}
_TEXT = {"servo_phase"}


def _fmt(name: str, value) -> str:
    if value is None:
        return ""
    if name in _PPM:
        return f"{value:.6f}"
    if name in _TEXT:
        return str(value)
    return str(int(value))


def _parse(name: str, text: str):
    if name in _OPTIONAL and text == "":
        return None
    if name in _PPM:
        return float(text)
    if name in _TEXT:
        return text
    return int(text)


def dumps_trace(records) -> str:
    buf = io.StringIO()
    buf.write(TRACE_VERSION + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for rec in records:
        w.writerow([_fmt(n, v) for n, v in zip(COLUMNS, astuple(rec))])
    return buf.getvalue()


def write_trace(records, path) -> Path:
    path = Path(path)
    path.write_text(dumps_trace(records), encoding="utf-8", newline="")
    return path


def loads_trace(text: str) -> list[TraceRecord]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRACE_VERSION:
        got = lines[0].strip() if lines else "<empty file>"
        raise TraceFormatError(f"expected version line {TRACE_VERSION!r}, got {got!r}")
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or tuple(header) != COLUMNS:
        raise TraceFormatError(f"column header mismatch: {header!r}")
    out = []
    for row_no, row in enumerate(reader, start=1):
        if len(row) != len(COLUMNS):
            raise TraceFormatError(f"expected {len(COLUMNS)} fields, got {len(row)}", row_no)
        try:
            values = [_parse(n, t) for n, t in zip(COLUMNS, row)]
        except ValueError as exc:
            raise TraceFormatError(f"malformed value ({exc})", row_no) from None
        out.append(TraceRecord(*values))
    return out


def read_trace(path) -> list[TraceRecord]:
    return loads_trace(Path(path).read_text(encoding="utf-8"))
