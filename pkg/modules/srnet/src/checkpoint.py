"""
Versioned checkpoint container.

A checkpoint is a NumPy ``.npz`` archive. Every array is stored under a dotted
name (``head.weight``, ``blocks.3.convs.1.mask``, ``blocks.3.alpha_s`` ...).
The extra entry ``__meta__`` holds a UTF-8 YAML document with ``format``,
``version``, ``kind``, the topology fields of the stored object and a SHA-256
``checksum`` over the array names, dtypes, shapes and bytes in sorted order.
"""

import hashlib
import io
import logging
import zipfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from diffcore import Tensor
from ruamel.yaml import YAML

from .compact import CompactBlock, CompactModel
from .model import BLOCK_DEPTH, AdaptiveSRBlock, ConvLayer, MaskedConv, MaskedSRBlock, MaskLayer, SupernetModel

FORMAT = "srnas"
VERSION = 1
KINDS = ("supernet", "compact", "speed", "search-state")
_META_KEY = "__meta__"
_LOGGER = logging.LoggerAdapter(logging.getLogger(__name__), {})


class CheckpointError(Exception):
    """Unreadable, foreign, outdated or corrupted checkpoint."""


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def checksum(arrays: Mapping[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        array = np.ascontiguousarray(arrays[name])
        digest.update(f"{name}:{array.dtype.str}:{array.shape}".encode())
        digest.update(array.tobytes())
    return digest.hexdigest()


def save_checkpoint(
    path: Path,
    arrays: Mapping[str, np.ndarray],
    kind: str,
    meta: Mapping[str, Any] | None = None,
) -> None:
    """Write ``arrays`` and ``meta`` to ``path``, replacing it atomically."""
    if kind not in KINDS:
        raise CheckpointError(f"Unknown checkpoint kind '{kind}'")
    if _META_KEY in arrays:
        raise CheckpointError(f"Array name '{_META_KEY}' is reserved")
    document = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        **_plain(meta or {}),
        "checksum": checksum(arrays),
    }
    buffer = io.StringIO()
    YAML(typ="safe").dump(document, buffer)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.name}.tmp")
    with open(tmp, "wb") as handle:
        np.savez(
            handle,
            **{name: np.asarray(array) for name, array in arrays.items()},
            **{_META_KEY: np.frombuffer(buffer.getvalue().encode(), dtype=np.uint8)},
        )
    tmp.replace(path)


def load_checkpoint(path: Path, kind: str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a checkpoint of ``kind``; returns its arrays and its metadata."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path} is not a checkpoint archive: {exc!r}") from exc

    if _META_KEY not in arrays:
        raise CheckpointError(f"{path} has no metadata")
    meta = YAML(typ="safe").load(arrays.pop(_META_KEY).tobytes().decode())
    if not isinstance(meta, dict) or meta.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} checkpoint")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"{path} has version {meta.get('version')}, expected {VERSION}")
    if meta.get("kind") != kind:
        raise CheckpointError(f"{path} holds a '{meta.get('kind')}' checkpoint, expected '{kind}'")
    if meta.get("checksum") != checksum(arrays):
        raise CheckpointError(f"{path} failed its checksum")
    return arrays, meta


def _require(arrays: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    try:
        return arrays[name]
    except KeyError as exc:
        raise CheckpointError(f"Checkpoint lacks array '{name}'") from exc


def _conv(arrays: Mapping[str, np.ndarray], prefix: str) -> ConvLayer:
    return ConvLayer(
        weight=Tensor(_require(arrays, f"{prefix}.weight"), requires_grad=True),
        bias=Tensor(_require(arrays, f"{prefix}.bias"), requires_grad=True),
    )


def supernet_arrays(model: SupernetModel) -> dict[str, np.ndarray]:
    return {name: param.data for name, param in model.named_parameters()}


def supernet_meta(model: SupernetModel) -> dict[str, Any]:
    return {
        "scale": model.scale,
        "trunk_width": model.trunk_width,
        "widths": list(model.widths),
        "kernels": list(model.kernels),
        "thres": model.thres,
        "v0": model.v0,
        "blocks": len(model.blocks),
        "skip_kernel": model.skip.kernel,
    }


def supernet_from_arrays(arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> SupernetModel:
    try:
        blocks = []
        for n in range(meta["blocks"]):
            convs = []
            for idx in range(BLOCK_DEPTH):
                conv = _conv(arrays, f"blocks.{n}.convs.{idx}")
                mask = MaskLayer(
                    m=Tensor(_require(arrays, f"blocks.{n}.convs.{idx}.mask"), requires_grad=True),
                    thres=meta["thres"],
                )
                convs.append(MaskedConv(weight=conv.weight, bias=conv.bias, mask=mask))
            blocks.append(
                AdaptiveSRBlock(
                    block=MaskedSRBlock(convs=convs, trunk_width=meta["trunk_width"]),
                    alpha_s=Tensor(_require(arrays, f"blocks.{n}.alpha_s"), requires_grad=True, name="alpha_s"),
                    alpha_b=Tensor(_require(arrays, f"blocks.{n}.alpha_b"), requires_grad=True, name="alpha_b"),
                )
            )
        return SupernetModel(
            head=_conv(arrays, "head"),
            blocks=blocks,
            tail=_conv(arrays, "tail"),
            skip=_conv(arrays, "skip"),
            scale=meta["scale"],
            trunk_width=meta["trunk_width"],
            widths=meta["widths"],
            kernels=meta["kernels"],
            thres=meta["thres"],
            v0=meta["v0"],
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"Inconsistent supernet checkpoint: {exc!r}") from exc


def save_supernet(path: Path, model: SupernetModel, logger: logging.LoggerAdapter = _LOGGER) -> None:
    save_checkpoint(path, supernet_arrays(model), "supernet", supernet_meta(model))
    logger.debug(f"Saved supernet with {len(model.blocks)} blocks to {path}")


def load_supernet(path: Path) -> SupernetModel:
    arrays, meta = load_checkpoint(path, "supernet")
    return supernet_from_arrays(arrays, meta)


def compact_arrays(model: CompactModel) -> dict[str, np.ndarray]:
    arrays = {name: param.data for name, param in model.named_parameters()}
    for n, block in enumerate(model.blocks):
        arrays[f"blocks.{n}.index"] = block.index
    return arrays


def save_compact(path: Path, model: CompactModel, logger: logging.LoggerAdapter = _LOGGER) -> None:
    meta = {
        "scale": model.scale,
        "trunk_width": model.trunk_width,
        "blocks": len(model.blocks),
        "sources": [block.source for block in model.blocks],
    }
    save_checkpoint(path, compact_arrays(model), "compact", meta)
    logger.debug(f"Saved compact model with {len(model.blocks)} blocks to {path}")


def load_compact(path: Path) -> CompactModel:
    arrays, meta = load_checkpoint(path, "compact")
    try:
        blocks = [
            CompactBlock(
                convs=[_conv(arrays, f"blocks.{n}.convs.{idx}") for idx in range(BLOCK_DEPTH)],
                index=_require(arrays, f"blocks.{n}.index"),
                trunk_width=meta["trunk_width"],
                source=meta["sources"][n],
            )
            for n in range(meta["blocks"])
        ]
        return CompactModel(
            head=_conv(arrays, "head"),
            blocks=blocks,
            tail=_conv(arrays, "tail"),
            skip=_conv(arrays, "skip"),
            scale=meta["scale"],
            trunk_width=meta["trunk_width"],
        )
    except (KeyError, IndexError, ValueError) as exc:
        raise CheckpointError(f"Inconsistent compact checkpoint: {exc!r}") from exc
