"""Seeded synthetic grayscale scenes and image-file I/O.

The synthetic scenes stand in for natural photographs when no image
directory is given: a smooth background gradient, overlapping ellipses and
rectangles with soft edges, and a few sinusoidal texture patches.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


def synthetic_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    a, b, c = rng.uniform(-0.4, 0.4, 3)
    img = 0.5 + a * (xx - 0.5) + b * (yy - 0.5) + c * (xx - 0.5) * (yy - 0.5)

    for _ in range(rng.integers(2, 6)):
        cx, cy = rng.uniform(0, 1, 2)
        rx, ry = rng.uniform(0.08, 0.35, 2)
        theta = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        d = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
        edge = rng.uniform(0.02, 0.15)
        mask = 1.0 / (1.0 + np.exp((d - 1.0) / edge))
        img = img * (1 - mask) + rng.uniform(0.05, 0.95) * mask

    for _ in range(rng.integers(1, 4)):
        x0, y0 = rng.uniform(0, 0.8, 2)
        w, h = rng.uniform(0.1, 0.5, 2)
        mask = ((xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)).astype(float)
        img = img * (1 - mask) + rng.uniform(0.05, 0.95) * mask

    for _ in range(rng.integers(0, 3)):
        freq = rng.uniform(4, 16)
        phi = rng.uniform(0, 2 * np.pi)
        theta = rng.uniform(0, np.pi)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phi)
        cx, cy = rng.uniform(0, 1, 2)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * rng.uniform(0.1, 0.3) ** 2))
        img = img + rng.uniform(0.03, 0.12) * wave * blob

    return np.clip(img, 0.0, 1.0)


def synthetic_corpus(n: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [synthetic_image(rng, size) for _ in range(n)]


# ---------------------------------------------------------------- PGM / image files

class ImageFormatError(ValueError):
    pass


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments."""
    vals, pos = [], 2
    while len(vals) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed PGM header")
        vals.append(int(buf[start:pos]))
    return vals, pos + 1  # exactly one whitespace byte before the raster


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Binary P5 with maxval 255 -> float array in [0, 1]."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (P5)")
    (w, h, maxval), pos = _pgm_tokens(buf, 3)
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    raster = buf[pos:pos + w * h]
    if len(raster) != w * h:
        raise ImageFormatError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a [0, 1] image as 8-bit P5 (values rounded and clamped)."""
    u8 = np.asarray(img) if np.asarray(img).dtype == np.uint8 else to_uint8(img)
    h, w = u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.tobytes())


def rgb_to_y(rgb: np.ndarray) -> np.ndarray:
    """8-bit RGB (H, W, 3) -> rounded 8-bit luma."""
    rgb = np.asarray(rgb, dtype=np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.round(y), 0, 255).astype(np.uint8)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """PGM natively; other formats through Pillow, reduced to luma."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    if arr.ndim == 3:
        arr = rgb_to_y(arr[..., :3])
    return arr.astype(np.float64) / 255.0


IMAGE_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def load_directory(path: str | os.PathLike) -> list[np.ndarray]:
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ImageFormatError(f"no images found in {path}")
    return [read_image(p) for p in files]
