"""Search history CSV."""

import csv
from pathlib import Path
from typing import Any, Sequence

BASE_COLUMNS = ("epoch", "l_sr", "l_spd", "l_total", "v_n", "active_blocks")
_INTEGER = ("epoch", "active_blocks")


def history_columns(rows: Sequence[dict[str, Any]]) -> list[str]:
    """Base columns followed by the per-block columns in first-seen order."""
    extra: dict[str, None] = {}
    for row in rows:
        extra.update({key: None for key in row if key not in BASE_COLUMNS})
    return [*BASE_COLUMNS, *extra]


def write_history(rows: Sequence[dict[str, Any]], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=history_columns(rows), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _parse(key: str, value: str) -> int | float:
    # per-block widths and flags are integers, losses and latency are floats
    if key in _INTEGER or (key.startswith("b") and "_" in key):
        return int(value)
    return float(value)


def read_history(path: Path) -> list[dict[str, int | float]]:
    with open(path, newline="") as handle:
        return [{key: _parse(key, value) for key, value in row.items()} for row in csv.DictReader(handle)]
