"""Blocking artifacts by 8x8 DCT quantization of the luminance channel.

This is the lossy core of baseline JPEG (level shift, DCT-II, IJG-scaled
quantization, inverse) without entropy coding or chroma.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

BLOCK = 8

BASE_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)


def quality_scale(qf: int) -> int:
    _check_qf(qf)
    return 5000 // qf if qf < 50 else 200 - 2 * qf


def quant_table(qf: int) -> np.ndarray:
    """IJG-scaled luminance table as integers in [1, 255]."""
    scale = quality_scale(qf)
    return np.clip((BASE_LUMA_TABLE * scale + 50) // 100, 1, 255)


def _check_qf(qf) -> None:
    if int(qf) != qf or not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be an integer in [1, 100], got {qf}")


def to_blocks(img: np.ndarray) -> np.ndarray:
    """(H, W) with H, W multiples of 8 -> (H/8, W/8, 8, 8)."""
    h, w = img.shape
    return img.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).swapaxes(1, 2)


def from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(bh * BLOCK, bw * BLOCK)


def block_dct(blocks: np.ndarray) -> np.ndarray:
    return dctn(blocks, type=2, axes=(-2, -1), norm="ortho")


def block_idct(coefs: np.ndarray) -> np.ndarray:
    return idctn(coefs, type=2, axes=(-2, -1), norm="ortho")


def jpeg_blocking_sim(img: np.ndarray, qf: int) -> np.ndarray:
    """Compress/decompress ``img`` (values in [0, 1]) at quality ``qf``.

    The image is edge-padded to a multiple of 8, processed on the 0..255
    scale, rounded to 8-bit like a decoder would, and cropped back.
    """
    _check_qf(qf)
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    padded = np.pad(img, ((0, -h % BLOCK), (0, -w % BLOCK)), mode="edge")
    q = quant_table(qf).astype(np.float64)
    coefs = block_dct(to_blocks(padded * 255.0 - 128.0))
    coefs = np.round(coefs / q) * q
    pix = from_blocks(block_idct(coefs)) + 128.0
    pix = np.clip(np.round(pix), 0, 255)
    return pix[:h, :w] / 255.0
