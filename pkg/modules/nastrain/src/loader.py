"""Seeded batches of training patches."""

from typing import Iterator, Mapping, Sequence

import numpy as np
from attrs import define, field
from dataeval import PatchPair, sample_patches, to_batch

Batch = tuple[np.ndarray, np.ndarray]


def make_patches(
    images: Mapping[str, np.ndarray],
    scale: int,
    patch: int,
    count: int,
    seed: int = 0,
    antialias: bool = True,
) -> list[PatchPair]:
    """``count`` patch pairs spread as evenly as possible over ``images``."""
    if not images or count == 0:
        return []
    names = list(images)
    share, extra = divmod(count, len(names))
    pairs = []
    for idx, name in enumerate(names):
        n = share + (idx < extra)
        pairs.extend(sample_patches(images[name], scale, patch, n, seed=seed * 7919 + idx, antialias=antialias))
    return pairs


@define
class PatchLoader:
    """Batches ``(lr, hr)`` of ``(B, 3, h, w)`` floats in ``0..1``; the order depends on seed and epoch only."""

    pairs: Sequence[PatchPair]
    batch_size: int = field(default=8)
    seed: int = 0

    def __len__(self) -> int:
        return -(-len(self.pairs) // self.batch_size)

    def epoch(self, epoch: int, stream: int = 0) -> Iterator[Batch]:
        order = np.random.default_rng([self.seed, stream, epoch]).permutation(len(self.pairs))
        for lo in range(0, order.size, self.batch_size):
            chosen = [self.pairs[idx] for idx in order[lo : lo + self.batch_size]]
            yield to_batch([pair.lr for pair in chosen]), to_batch([pair.hr for pair in chosen])
