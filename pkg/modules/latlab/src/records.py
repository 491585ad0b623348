"""Width configurations, latency records and their CSV form."""

import csv
import logging
from math import isfinite
from pathlib import Path
from typing import Any, Literal

import numpy as np
from attrs import define, field, validators
from ruamel.yaml import YAML

BLOCK_WIDTHS = 4
HEADER = ("f1", "f2", "f3", "f4", "t_ms")
_LOGGER = logging.LoggerAdapter(logging.getLogger(__name__), {})

Mode = Literal["measured", "analytic"]


class DatasetParseError(ValueError):
    """Malformed latency CSV or sidecar; ``line`` is 1-based and counts the header."""

    def __init__(self, msg: str, line: int | None = None) -> None:
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


def _check_widths(_: Any, __: Any, value: tuple[int, ...]) -> None:
    if len(value) != BLOCK_WIDTHS:
        raise ValueError(f"A width configuration has {BLOCK_WIDTHS} entries, got {len(value)}")
    if any(width < 1 for width in value):
        raise ValueError(f"Widths must be positive, got {value}")


def _check_latency(_: Any, __: Any, value: float) -> None:
    if not (isfinite(value) and value > 0):
        raise ValueError(f"Latency must be positive and finite, got {value}")


@define(frozen=True)
class WidthConfig:
    """``f1`` block input channels, ``f2``/``f3`` conv1/conv2 outputs, ``f4`` conv3 outputs."""

    f: tuple[int, ...] = field(
        converter=lambda value: tuple(int(width) for width in value),
        validator=_check_widths,
    )
    spatial: tuple[int, int] = field(default=(48, 48), converter=tuple)


@define(frozen=True)
class LatencyRecord:
    config: WidthConfig
    t_ms: float = field(converter=float, validator=_check_latency)


@define
class LatencyDataset:
    """Latency records plus the settings they were produced with."""

    records: list[LatencyRecord] = field(factory=list)
    mode: Mode = field(default="analytic", validator=validators.in_(("measured", "analytic")))
    meta: dict[str, Any] = field(factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def widths(self) -> np.ndarray:
        return np.array([record.config.f for record in self.records], dtype=np.float64).reshape(-1, BLOCK_WIDTHS)

    def targets(self) -> np.ndarray:
        return np.array([record.t_ms for record in self.records], dtype=np.float64)


def meta_path(path: Path) -> Path:
    return Path(path).with_suffix(".meta")


def save_csv(dataset: LatencyDataset, path: Path, logger: logging.LoggerAdapter = _LOGGER) -> None:
    """Write the records with full float precision and a YAML ``.meta`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(HEADER)
        for record in dataset.records:
            writer.writerow([*record.config.f, repr(record.t_ms)])
    with open(meta_path(path), "w") as handle:
        YAML(typ="safe").dump({"mode": dataset.mode, **dataset.meta}, handle)
    logger.debug(f"Wrote {len(dataset)} latency records to {path}")


def load_csv(path: Path, logger: logging.LoggerAdapter = _LOGGER) -> LatencyDataset:
    path = Path(path)
    meta: dict[str, Any] = {}
    if meta_path(path).exists():
        meta = YAML(typ="safe").load(meta_path(path).read_text()) or {}
    else:
        logger.warning(f"No metadata next to {path}, assuming measured records")
    spatial = tuple(meta.get("spatial", (48, 48)))

    records = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != HEADER:
            raise DatasetParseError(f"expected header {','.join(HEADER)}, got {header}", line=1)
        for line, row in enumerate(reader, start=2):
            if len(row) != len(HEADER):
                raise DatasetParseError(f"expected {len(HEADER)} fields, got {len(row)}", line=line)
            try:
                records.append(
                    LatencyRecord(
                        config=WidthConfig(f=[int(value) for value in row[:BLOCK_WIDTHS]], spatial=spatial),
                        t_ms=float(row[BLOCK_WIDTHS]),
                    )
                )
            except ValueError as exc:
                raise DatasetParseError(str(exc), line=line) from exc

    mode = meta.pop("mode", "measured")
    try:
        return LatencyDataset(records=records, mode=mode, meta=meta)
    except ValueError as exc:
        raise DatasetParseError(f"{meta_path(path)}: unknown mode '{mode}'") from exc
