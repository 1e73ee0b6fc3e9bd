"""
Image quality metrics (PSNR, single-scale SSIM)

Both metrics accept ImageBuffers or (H, W, 3) arrays with values in [0, 1] and
work either on the RGB channels (averaged) or on BT.601 luma.
"""

import math
from dataclasses import dataclass
from typing import Union

import cv2
import numpy as np

from .errors import ShapeError
from .imageio import ImageBuffer

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
METRIC_MODES = ("rgb_mean", "luma")

ImageLike = Union[ImageBuffer, np.ndarray]


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    channel_mode: str = "rgb_mean"

    def to_text(self) -> str:
        return f"psnr {self.psnr_db:.4f} ssim {self.ssim:.4f}"


def _values(image: ImageLike) -> np.ndarray:
    values = image.values if isinstance(image, ImageBuffer) else image
    return np.asarray(values, dtype=np.float64)


def to_luma(values: np.ndarray) -> np.ndarray:
    """BT.601 Y in [16/255, 235/255] for [0, 1] RGB input"""
    r, g, b = values[..., 0], values[..., 1], values[..., 2]
    return (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0


def _prepare(a: ImageLike, b: ImageLike, mode: str):
    x, y = _values(a), _values(b)
    if x.shape != y.shape:
        raise ShapeError(f"Metric inputs differ in shape: {x.shape} vs {y.shape}")
    if mode not in METRIC_MODES:
        raise ValueError(f"Unknown metric mode '{mode}', expected one of {METRIC_MODES}")
    if mode == "luma":
        if x.ndim != 3 or x.shape[2] != 3:
            raise ShapeError(f"luma mode needs (H, W, 3) images, got {x.shape}")
        x, y = to_luma(x)[..., None], to_luma(y)[..., None]
    elif x.ndim == 2:
        x, y = x[..., None], y[..., None]
    return x, y


def psnr(a: ImageLike, b: ImageLike, peak: float = 1.0, mode: str = "rgb_mean") -> float:
    """
    Peak signal-to-noise ratio in dB

    Returns:
        10 * log10(peak^2 / MSE), or +inf for identical inputs
    """
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    x, y = _prepare(a, b, mode)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_channel(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    kernel = cv2.getGaussianKernel(SSIM_WINDOW, SSIM_SIGMA, ktype=cv2.CV_64F)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    pad = SSIM_WINDOW // 2

    def blur(img: np.ndarray) -> np.ndarray:
        full = cv2.sepFilter2D(img, cv2.CV_64F, kernel, kernel, borderType=cv2.BORDER_REFLECT)
        return full[pad:-pad, pad:-pad]

    mu1, mu2 = blur(x), blur(y)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    sigma1_sq = blur(x * x) - mu1_sq
    sigma2_sq = blur(y * y) - mu2_sq
    sigma12 = blur(x * y) - mu12

    numerator = (2.0 * mu12 + c1) * (2.0 * sigma12 + c2)
    denominator = (mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2)
    return float(np.mean(numerator / denominator))


def ssim(a: ImageLike, b: ImageLike, mode: str = "rgb_mean", data_range: float = 1.0) -> float:
    """
    Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03

    Averages the SSIM map over valid window positions, then over channels.

    Raises:
        ShapeError: for mismatched inputs or images smaller than the window
    """
    x, y = _prepare(a, b, mode)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ShapeError(
            f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, "
            f"got {x.shape[0]}x{x.shape[1]}"
        )
    scores = []
    for c in range(x.shape[2]):
        xc, yc = np.ascontiguousarray(x[..., c]), np.ascontiguousarray(y[..., c])
        scores.append(_ssim_channel(xc, yc, data_range))
    return float(np.mean(scores))


def evaluate_pair(a: ImageLike, b: ImageLike, mode: str = "rgb_mean") -> MetricReport:
    return MetricReport(psnr(a, b, 1.0, mode), ssim(a, b, mode), mode)
