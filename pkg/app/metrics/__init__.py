"""Image quality measures: MSE, PSNR, SSIM and porosity."""

from app.metrics.quality import PORE_THRESHOLD, format_metric, mse, porosity, psnr
from app.metrics.ssim import SsimParams, WindowKind, mssim, ssim_map

__all__ = [
    "PORE_THRESHOLD",
    "format_metric",
    "mse",
    "porosity",
    "psnr",
    "SsimParams",
    "WindowKind",
    "mssim",
    "ssim_map",
]
