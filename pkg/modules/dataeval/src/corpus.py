"""Image corpora and the PSNR/SSIM evaluation report."""

import csv
import logging
import math
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from attrs import define

from .image import ImageError, bicubic_resize, load_png
from .metrics import psnr, ssim
from .patches import crop_to_scale, downscale

REPORT_HEADER = ("image", "psnr_db", "ssim", "bicubic_psnr_db", "bicubic_ssim")
_LOGGER = logging.LoggerAdapter(logging.getLogger(__name__), {})

SRFunction = Callable[[np.ndarray], np.ndarray]


@define(frozen=True)
class EvalRow:
    image: str
    psnr_db: float
    ssim: float
    bicubic_psnr_db: float
    bicubic_ssim: float


def synthetic_corpus(n: int, size: tuple[int, int] = (96, 96), seed: int = 0) -> dict[str, np.ndarray]:
    """Procedural RGB images mixing gradients, sinusoidal texture and rectangles."""
    rng = np.random.default_rng(seed)
    height, width = size
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    corpus = {}
    for idx in range(n):
        channels = []
        for _ in range(3):
            slope = rng.uniform(-1, 1, size=2)
            freq = rng.uniform(2, 12, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            base = 0.5 + 0.25 * (slope[0] * yy + slope[1] * xx)
            texture = 0.2 * np.sin(2 * np.pi * (freq[0] * yy + freq[1] * xx) + phase)
            channels.append(base + texture)
        img = np.stack(channels, axis=-1)
        for _ in range(rng.integers(1, 5)):
            y0, x0 = rng.integers(0, height - 1), rng.integers(0, width - 1)
            y1, x1 = rng.integers(y0 + 1, height, endpoint=True), rng.integers(x0 + 1, width, endpoint=True)
            img[y0:y1, x0:x1] = rng.uniform(0, 1, size=3)
        corpus[f"synthetic_{idx:03d}"] = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    return corpus


def load_corpus(directory: Path, logger: logging.LoggerAdapter = _LOGGER) -> dict[str, np.ndarray]:
    """Every readable PNG in ``directory``, keyed by file stem in name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageError(f"Image directory {directory} does not exist")
    corpus = {}
    for path in sorted(directory.glob("*.png")):
        try:
            corpus[path.stem] = load_png(path)
        except ImageError as exc:
            logger.warning(f"Skipping {path.name}: {exc}")
    if not corpus:
        logger.error(f"No readable PNG files in {directory}")
        raise ImageError(f"No readable PNG files in {directory}")
    logger.debug(f"Loaded {len(corpus)} images from {directory}")
    return corpus


def evaluate(
    images: Mapping[str, np.ndarray],
    sr_fn: SRFunction,
    scale: int,
    shave: int | None = None,
    antialias: bool = True,
    logger: logging.LoggerAdapter = _LOGGER,
) -> list[EvalRow]:
    """
    Downscale every HR image, upscale it with ``sr_fn`` and with bicubic, and
    score both against the HR image on the Y channel. ``shave`` defaults to ``scale``.
    """
    shave = scale if shave is None else shave
    rows = []
    for name, hr in images.items():
        hr = crop_to_scale(hr, scale)
        lr = downscale(hr, scale, antialias)
        sr = sr_fn(lr)
        if sr.shape != hr.shape:
            raise ImageError(f"SR output {sr.shape} for {name} does not match HR {hr.shape}")
        bicubic = bicubic_resize(lr, hr.shape[0], hr.shape[1])
        row = EvalRow(
            image=name,
            psnr_db=psnr(sr, hr, shave),
            ssim=ssim(sr, hr, shave),
            bicubic_psnr_db=psnr(bicubic, hr, shave),
            bicubic_ssim=ssim(bicubic, hr, shave),
        )
        logger.debug(f"{name}: {row.psnr_db:.2f} dB / {row.ssim:.4f} (bicubic {row.bicubic_psnr_db:.2f} dB)")
        rows.append(row)
    return rows


def mean_row(rows: Sequence[EvalRow]) -> EvalRow:
    if not rows:
        raise ImageError("No rows to average")
    return EvalRow(
        image="mean",
        psnr_db=float(np.mean([row.psnr_db for row in rows])),
        ssim=float(np.mean([row.ssim for row in rows])),
        bicubic_psnr_db=float(np.mean([row.bicubic_psnr_db for row in rows])),
        bicubic_ssim=float(np.mean([row.bicubic_ssim for row in rows])),
    )


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def write_report(rows: Sequence[EvalRow], path: Path) -> None:
    """CSV with one line per image and a closing ``mean`` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for row in [*rows, mean_row(rows)]:
            writer.writerow(
                [row.image, _fmt(row.psnr_db), _fmt(row.ssim), _fmt(row.bicubic_psnr_db), _fmt(row.bicubic_ssim)]
            )
