"""Score records and aligned plain-text result tables.

Tables print one system per row and one evaluation split per column at
two decimal places, and parse back into exactly the printed values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "ReportError",
    "ScoreRecord",
    "PAPER_SPLITS",
    "append_records",
    "read_records",
    "order_splits",
    "format_table",
    "parse_table",
    "tables_from_records",
]

PAPER_SPLITS = ("dev-2010", "tst2010", "tst-2013", "tst-2014", "tst-2015")

_MISSING = "-"


class ReportError(ValueError):
    """Raised for malformed score files or unparseable tables."""


@dataclass(frozen=True)
class ScoreRecord:
    """One scored cell: a system evaluated on a split with one metric."""

    system: str
    split: str
    metric: str  # "bleu" | "wer"
    mode: str  # "segmented" | "mwer-stream"
    value: float


def append_records(path, records: Iterable[ScoreRecord]) -> None:
    """Append JSON-lines records; later records supersede earlier duplicates."""
    with open(path, "a", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(asdict(record), sort_keys=True) + "\n")


def read_records(path) -> list[ScoreRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ScoreRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ReportError(f"{path}: line {lineno}: {exc}") from exc
    return records


def order_splits(splits: Iterable[str]) -> list[str]:
    """Known evaluation splits in their customary order, then the rest sorted."""
    splits = set(splits)
    ordered = [s for s in PAPER_SPLITS if s in splits]
    ordered += sorted(splits - set(PAPER_SPLITS))
    return ordered


def format_table(
    row_header: str,
    columns: Sequence[str],
    rows: Sequence[tuple[str, dict[str, float]]],
) -> str:
    """Pipe-aligned table; cells print at two decimals, absent cells as '-'."""
    cells = [
        [f"{values[col]:.2f}" if col in values else _MISSING for col in columns]
        for _, values in rows
    ]
    label_width = max([len(row_header)] + [len(label) for label, _ in rows])
    widths = [
        max([len(col)] + [len(row[k]) for row in cells])
        for k, col in enumerate(columns)
    ]
    lines = [
        " | ".join(
            [row_header.ljust(label_width)]
            + [col.rjust(widths[k]) for k, col in enumerate(columns)]
        ).rstrip()
    ]
    for (label, _), row in zip(rows, cells):
        lines.append(
            " | ".join(
                [label.ljust(label_width)]
                + [row[k].rjust(widths[k]) for k in range(len(columns))]
            ).rstrip()
        )
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> tuple[str, list[str], dict[str, dict[str, float]]]:
    """Inverse of :func:`format_table`; returns (row_header, columns, rows)."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ReportError("empty table")
    header = [cell.strip() for cell in lines[0].split("|")]
    row_header, columns = header[0], header[1:]
    if not columns:
        raise ReportError("table header names no columns")
    rows: dict[str, dict[str, float]] = {}
    for line in lines[1:]:
        cells = [cell.strip() for cell in line.split("|")]
        if len(cells) != len(columns) + 1:
            raise ReportError(f"row has {len(cells) - 1} cells, expected {len(columns)}")
        values = {}
        for col, cell in zip(columns, cells[1:]):
            if cell != _MISSING:
                try:
                    values[col] = float(cell)
                except ValueError as exc:
                    raise ReportError(f"bad numeric cell {cell!r}") from exc
        rows[cells[0]] = values
    return row_header, columns, rows


def tables_from_records(records: Sequence[ScoreRecord]) -> dict[str, str]:
    """One table per (metric, mode) present, keyed like ``"bleu/mwer-stream"``.

    Systems keep first-appearance order; a later record for the same cell
    overwrites an earlier one, so re-running an evaluation updates tables.
    """
    groups: dict[str, dict[str, dict[str, float]]] = {}
    for record in records:
        key = f"{record.metric}/{record.mode}"
        table = groups.setdefault(key, {})
        table.setdefault(record.system, {})[record.split] = record.value
    out = {}
    for key, table in groups.items():
        columns = order_splits(
            {split for values in table.values() for split in values}
        )
        rows = [(system, values) for system, values in table.items()]
        out[key] = format_table("system", columns, rows)
    return out
