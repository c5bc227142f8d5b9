from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jpeg import jpeg_blocking_sim


def add_gaussian_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. N(0, (sigma/255)^2) noise and clamp to [0, 1].

    ``sigma`` is on the 0..255 scale.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    rng = np.random.default_rng(seed)
    img = np.asarray(img, dtype=np.float64)
    return np.clip(img + rng.normal(0.0, sigma / 255.0, img.shape), 0.0, 1.0)


@dataclass(frozen=True)
class DegradationSpec:
    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.level > 0:
                raise ValueError(f"gaussian sigma must be positive, got {self.level}")
        elif self.kind == "jpeg":
            if not 1 <= self.level <= 100:
                raise ValueError(f"jpeg quality factor must lie in [1, 100], got {self.level}")
        else:
            raise ValueError(f"unknown degradation kind {self.kind!r}")

    def apply(self, img: np.ndarray) -> np.ndarray:
        return degrade(img, self.kind, self.level, self.seed)


def degrade(img: np.ndarray, kind: str, level: float, seed: int = 0) -> np.ndarray:
    if kind == "gaussian":
        return add_gaussian_noise(img, level, seed)
    if kind == "jpeg":
        return jpeg_blocking_sim(img, int(level))
    raise ValueError(f"unknown degradation kind {kind!r}")
