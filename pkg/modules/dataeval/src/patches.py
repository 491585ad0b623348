"""Aligned low/high resolution training crops."""

import numpy as np
from attrs import define, field

from .image import ImageError, bicubic_resize, check_image


@define(frozen=True, eq=False)
class PatchPair:
    """An LR crop and the HR crop at ``scale`` times its origin and size."""

    lr: np.ndarray = field(converter=check_image)
    hr: np.ndarray = field(converter=check_image)
    scale: int
    origin: tuple[int, int] = (0, 0)

    def __attrs_post_init__(self) -> None:
        expected = (self.lr.shape[0] * self.scale, self.lr.shape[1] * self.scale, 3)
        if self.hr.shape != expected:
            raise ImageError(f"HR crop {self.hr.shape} is not {self.scale}x the LR crop {self.lr.shape}")


def crop_to_scale(hr: np.ndarray, scale: int) -> np.ndarray:
    """Trim the bottom/right edge so both sides are multiples of ``scale``."""
    height, width = (hr.shape[0] // scale) * scale, (hr.shape[1] // scale) * scale
    if height == 0 or width == 0:
        raise ImageError(f"Image {hr.shape} is smaller than the scale {scale}")
    return hr[:height, :width]


def downscale(hr: np.ndarray, scale: int, antialias: bool = True) -> np.ndarray:
    hr = crop_to_scale(hr, scale)
    return bicubic_resize(hr, hr.shape[0] // scale, hr.shape[1] // scale, antialias)


def sample_patches(
    hr: np.ndarray,
    scale: int,
    patch: int = 48,
    n: int = 16,
    seed: int = 0,
    antialias: bool = True,
) -> list[PatchPair]:
    """
    ``n`` aligned crops: ``patch x patch`` from the bicubic LR image and the
    matching ``scale * patch`` square of ``hr``, at uniform random LR origins.
    """
    if patch < 1 or n < 0:
        raise ValueError(f"Need a positive patch size and a nonnegative count, got {patch} and {n}")
    check_image(hr)
    if hr.shape[0] < scale * patch or hr.shape[1] < scale * patch:
        raise ImageError(f"Image {hr.shape[:2]} is smaller than a {scale * patch}px HR crop")
    if n == 0:
        return []
    hr = crop_to_scale(hr, scale)
    lr = downscale(hr, scale, antialias)
    rng = np.random.default_rng(seed)
    ys = rng.integers(0, lr.shape[0] - patch, size=n, endpoint=True)
    xs = rng.integers(0, lr.shape[1] - patch, size=n, endpoint=True)
    return [
        PatchPair(
            lr=lr[y : y + patch, x : x + patch].copy(),
            hr=hr[scale * y : scale * (y + patch), scale * x : scale * (x + patch)].copy(),
            scale=scale,
            origin=(int(y), int(x)),
        )
        for y, x in zip(ys, xs)
    ]
