from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .noise import degrade

DEFAULT_PATCH = 64
DEFAULT_BATCH = 24


@dataclass
class PatchBatch:
    clean: np.ndarray     # (batch, 1, s, s)
    degraded: np.ndarray  # (batch, 1, s, s)
    levels: np.ndarray    # (batch,)
    sources: np.ndarray   # (batch,) corpus indices

    def __len__(self) -> int:
        return len(self.levels)


def make_patches(corpus: Sequence[np.ndarray], size: int = DEFAULT_PATCH, batch: int = DEFAULT_BATCH,
                 levels: Sequence[float] = (25, 35, 45, 55), kind: str = "gaussian", seed: int = 0,
                 dtype=np.float32) -> Iterator[PatchBatch]:
    """Infinite seeded stream of random crops, each degraded at a uniformly drawn level."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    for i, img in enumerate(corpus):
        if img.shape[0] < size or img.shape[1] < size:
            raise ValueError(f"corpus image {i} is {img.shape}, smaller than patch size {size}")
    if not levels:
        raise ValueError("no degradation levels given")
    levels = np.asarray(levels, dtype=np.float64)
    rng = np.random.default_rng(seed)
    while True:
        src = rng.integers(0, len(corpus), batch)
        lv = levels[rng.integers(0, len(levels), batch)]
        noise_seeds = rng.integers(0, 2 ** 63 - 1, batch)
        clean = np.empty((batch, 1, size, size), dtype=np.float64)
        deg = np.empty_like(clean)
        for b in range(batch):
            img = corpus[src[b]]
            r = rng.integers(0, img.shape[0] - size + 1)
            c = rng.integers(0, img.shape[1] - size + 1)
            patch = img[r:r + size, c:c + size]
            clean[b, 0] = patch
            deg[b, 0] = degrade(patch, kind, lv[b], int(noise_seeds[b]))
        yield PatchBatch(clean.astype(dtype), deg.astype(dtype), lv, src)
