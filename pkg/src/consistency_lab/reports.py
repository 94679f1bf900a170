"""Structured check results and their CSV serialisation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

PASS = "pass"
FAIL = "fail"
REPORT_ONLY = "report-only"


def format_value(value: Any) -> str:
    """Render a value for CSV output with a fixed, platform-stable repr."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if hasattr(value, "item") and getattr(value, "shape", None) == ():
        return format_value(value.item())
    if isinstance(value, (list, tuple)):
        return ";".join(format_value(v) for v in value)
    return str(value)


def write_csv(path_or_stream, columns, rows) -> None:
    """Write dict rows with a mandatory header row, RFC-4180 quoting, ``\\n`` line ends."""
    if isinstance(path_or_stream, (str, Path)):
        path = Path(path_or_stream)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            write_csv(fh, columns, rows)
        tmp.replace(path)
        return
    writer = csv.writer(path_or_stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c, "")) for c in columns])


@dataclass
class CheckReport:
    """Outcome of one theory check.

    ``rows`` hold one dict per configuration; each row carries the computed
    left-hand side, the reference right-hand side and the margin so the verdict
    can be recomputed from the CSV alone.
    """

    name: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    verdict: str = REPORT_ONLY
    tolerances: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict != FAIL

    @property
    def asserted(self) -> bool:
        return self.verdict in (PASS, FAIL)

    def to_csv(self, path_or_stream=None) -> str | None:
        if path_or_stream is None:
            buf = io.StringIO()
            write_csv(buf, self.columns, self.rows)
            return buf.getvalue()
        write_csv(path_or_stream, self.columns, self.rows)
        return None

    def summary(self) -> str:
        lines = [f"[{self.verdict.upper()}] {self.name} ({len(self.rows)} rows)"]
        if self.tolerances:
            tol = ", ".join(f"{k}={format_value(v)}" for k, v in sorted(self.tolerances.items()))
            lines.append(f"  tolerances: {tol}")
        lines.extend(f"  {note}" for note in self.notes)
        return "\n".join(lines)
