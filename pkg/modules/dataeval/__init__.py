"""Image I/O, LR/HR patch pairs and Y-channel quality metrics"""

from .src.corpus import REPORT_HEADER, EvalRow, evaluate, load_corpus, mean_row, synthetic_corpus, write_report
from .src.image import (
    ImageError,
    bicubic_resize,
    catmull_rom,
    check_image,
    load_png,
    rgb_to_y,
    save_png,
    to_batch,
    to_image,
)
from .src.metrics import gaussian_window, psnr, psnr_y, ssim, ssim_y
from .src.patches import PatchPair, crop_to_scale, downscale, sample_patches

__all__ = [
    "REPORT_HEADER",
    "EvalRow",
    "ImageError",
    "PatchPair",
    "bicubic_resize",
    "catmull_rom",
    "check_image",
    "crop_to_scale",
    "downscale",
    "evaluate",
    "gaussian_window",
    "load_corpus",
    "load_png",
    "mean_row",
    "psnr",
    "psnr_y",
    "rgb_to_y",
    "sample_patches",
    "save_png",
    "ssim",
    "ssim_y",
    "synthetic_corpus",
    "to_batch",
    "to_image",
    "write_report",
]
