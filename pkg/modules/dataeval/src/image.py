"""8-bit RGB images: PNG I/O, bicubic resampling and the luminance channel."""

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageError(ValueError):
    """Unreadable image, mismatched sizes or an image too small for the request."""


def check_image(img: np.ndarray) -> np.ndarray:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3 or min(img.shape[:2]) < 1:
        raise ImageError(f"Expected an (H, W, 3) uint8 image, got {img.dtype} {img.shape}")
    return img


def load_png(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"Image {path} does not exist")
    try:
        with Image.open(path) as handle:
            return np.asarray(handle.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"Unable to read {path}: {exc!r}") from exc


def save_png(path: Path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(check_image(img)).save(path, format="PNG")


def catmull_rom(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    x = np.abs(x)
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _resample_matrix(n_in: int, n_out: int, antialias: bool) -> np.ndarray:
    """``(n_out, n_in)`` weights; taps outside the image are clamped to the edge."""
    ratio = n_out / n_in
    stretch = ratio if antialias and ratio < 1 else 1.0
    support = 2.0 / stretch
    centers = (np.arange(n_out) + 0.5) / ratio - 0.5
    matrix = np.zeros((n_out, n_in))
    for row, center in enumerate(centers):
        taps = np.arange(int(np.floor(center - support)) + 1, int(np.ceil(center + support)))
        weights = catmull_rom((taps - center) * stretch)
        np.add.at(matrix[row], np.clip(taps, 0, n_in - 1), weights)
    return matrix / matrix.sum(axis=1, keepdims=True)


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """
    Resize with separable Catmull-Rom interpolation.

    When shrinking with ``antialias`` the kernel is widened by the inverse
    scale. The result is rounded and clipped to ``0..255``.
    """
    check_image(img)
    if out_h < 1 or out_w < 1:
        raise ImageError(f"Cannot resize to {out_h}x{out_w}")
    rows = _resample_matrix(img.shape[0], out_h, antialias)
    cols = _resample_matrix(img.shape[1], out_w, antialias)
    out = np.einsum("oh,hwc->owc", rows, img.astype(np.float64))
    out = np.einsum("pw,owc->opc", cols, out)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """
    BT.601 luma in ``16..235``.

    Integer images are read as ``0..255``, float images as ``0..1``.
    """
    rgb = img.astype(np.float64) / 255.0 if np.issubdtype(img.dtype, np.integer) else img.astype(np.float64)
    return 16.0 + rgb @ np.array([65.481, 128.553, 24.966])


def to_batch(images: list[np.ndarray]) -> np.ndarray:
    """Stack equally sized uint8 images into a float ``(N, 3, H, W)`` array in ``0..1``."""
    return np.stack([check_image(img) for img in images]).transpose(0, 3, 1, 2).astype(np.float64) / 255.0


def to_image(array: np.ndarray) -> np.ndarray:
    """Inverse of ``to_batch`` for one ``(3, H, W)`` array, rounded and clipped."""
    return np.clip(np.rint(array.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
