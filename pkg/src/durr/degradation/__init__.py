from .corpus import (
    ImageFormatError,
    load_directory,
    read_image,
    read_pgm,
    rgb_to_y,
    synthetic_corpus,
    synthetic_image,
    write_pgm,
)
from .jpeg import BASE_LUMA_TABLE, jpeg_blocking_sim, quality_scale, quant_table
from .metrics import metric_psnr, metric_ssim, mse
from .noise import DegradationSpec, add_gaussian_noise, degrade
from .patches import PatchBatch, make_patches

__all__ = [
    "BASE_LUMA_TABLE", "DegradationSpec", "ImageFormatError", "PatchBatch", "add_gaussian_noise", "degrade",
    "jpeg_blocking_sim", "load_directory", "make_patches", "metric_psnr", "metric_ssim", "mse",
    "quality_scale", "quant_table", "read_image", "read_pgm", "rgb_to_y", "synthetic_corpus",
    "synthetic_image", "write_pgm",
]
