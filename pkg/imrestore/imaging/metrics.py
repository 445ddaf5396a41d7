"""PSNR and single-scale SSIM for images in ``[0, 1]``."""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from pydantic import BaseModel
from scipy.signal import correlate

from imrestore.core.errors import ShapeError

Image = Union[np.ndarray, Sequence[np.ndarray]]

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DEFAULT_PSNR_CAP = 100.0


class MetricReport(BaseModel):
    psnr: float
    ssim: float


def _channels(image: Image) -> list[np.ndarray]:
    if isinstance(image, np.ndarray) and image.ndim == 2:
        return [image.astype(float)]
    return [np.asarray(c, dtype=float) for c in image]


def _pair(x: Image, ref: Image) -> tuple[list[np.ndarray], list[np.ndarray]]:
    xs, refs = _channels(x), _channels(ref)
    if len(xs) != len(refs) or any(a.shape != b.shape for a, b in zip(xs, refs)):
        raise ShapeError("images differ in shape or channel count.")
    return xs, refs


def psnr(x: Image, ref: Image, cap: float = DEFAULT_PSNR_CAP) -> float:
    """Peak 1; the mean squared error runs over every channel."""
    xs, refs = _pair(x, ref)
    mse = float(np.mean([(a - b) ** 2 for a, b in zip(xs, refs)]))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


@lru_cache(maxsize=None)
def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    grid = np.arange(size, dtype=float) - (size - 1) / 2.0
    profile = np.exp(-(grid**2) / (2.0 * sigma**2))
    window = np.outer(profile, profile)
    window /= window.sum()
    window.setflags(write=False)
    return window


def window_for(shape: tuple[int, int]) -> np.ndarray:
    """The standard window, shrunk to the largest odd size that fits a small image."""
    size = min(WINDOW_SIZE, *shape)
    if size % 2 == 0:
        size -= 1
    return gaussian_window(size, WINDOW_SIGMA * size / WINDOW_SIZE)


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    window = window_for(x.shape)

    def local(a: np.ndarray) -> np.ndarray:
        return correlate(a, window, mode="valid", method="direct")

    c1, c2 = K1**2, K2**2
    mu_x, mu_y = local(x), local(y)
    var_x = local(x * x) - mu_x**2
    var_y = local(y * y) - mu_y**2
    cov = local(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return float(np.mean(ssim_map))


def ssim(x: Image, ref: Image) -> float:
    """Gaussian-window SSIM with dynamic range 1; color images average their channels."""
    xs, refs = _pair(x, ref)
    return float(np.mean([_ssim_channel(a, b) for a, b in zip(xs, refs)]))


def measure(x: Image, ref: Image, psnr_cap: float = DEFAULT_PSNR_CAP) -> MetricReport:
    return MetricReport(psnr=psnr(x, ref, psnr_cap), ssim=ssim(x, ref))
