"""Synthetic degradations: blur, salt-and-pepper noise and missing-pixel masks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from imrestore.imaging.io import load_image
from imrestore.optim.linops import Kernel, MaskSet, conv, make_kernel

logger = logging.getLogger("imrestore.degrade")

Seed = Union[int, np.random.SeedSequence]


class DegradeSpec(BaseModel):
    """Everything needed to regenerate a degraded image bit for bit."""

    noise_level: float = Field(default=0.0, ge=0.0, lt=1.0)
    blur: Optional[Literal["average", "gaussian"]] = None
    kernel_size: int = 7
    sigma: Optional[float] = None
    mask: Optional[str] = None
    mask_missing: float = Field(default=0.1, ge=0.0, lt=1.0)
    block_size: int = Field(default=50, ge=1)
    block_positions: Optional[list[tuple[int, int]]] = None
    text_threshold: float = 0.5
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def validate_blur(self) -> "DegradeSpec":
        if self.blur is not None:
            self.kernel()
        return self

    def kernel(self) -> Optional[Kernel]:
        if self.blur is None:
            return None
        return make_kernel(self.blur, self.kernel_size, self.sigma)


@dataclass
class DegradeResult:
    channels: list[np.ndarray]
    mask: Optional[MaskSet]
    corrupted_pixels: int


def _count(level: float, m: int, n: int) -> int:
    return int(math.floor(level * m * n + 1e-9))


def add_salt_pepper(x: np.ndarray, level: float, seed: Seed) -> np.ndarray:
    """Set ``floor(level * m * n)`` distinct pixels to 0 or 1 with equal probability."""
    if not 0.0 <= level < 1.0:
        raise ValueError("noise level must lie in [0, 1).")
    out = np.array(x, dtype=float, copy=True)
    count = _count(level, *out.shape)
    if count == 0:
        return out
    rng = np.random.default_rng(seed)
    positions = rng.choice(out.size, size=count, replace=False)
    out.flat[positions] = rng.integers(0, 2, size=count).astype(float)
    return out


def default_block_positions(m: int, n: int, block: int) -> list[tuple[int, int]]:
    """Top-left corners of blocks centered at 1/4, 1/2 and 3/4 of the diagonal."""
    return [(int(m * f) - block // 2, int(n * f) - block // 2) for f in (0.25, 0.5, 0.75)]


def make_block_mask(
    m: int,
    n: int,
    block: int = 50,
    positions: Optional[Sequence[tuple[int, int]]] = None,
) -> MaskSet:
    observed = np.ones((m, n), dtype=bool)
    for top, left in positions if positions is not None else default_block_positions(m, n, block):
        if top < 0 or left < 0 or top + block > m or left + block > n:
            raise ValueError(f"block at ({top}, {left}) of size {block} does not fit a {m}x{n} image.")
        observed[top : top + block, left : left + block] = False
    return MaskSet(observed)


def load_text_mask(path: Path, threshold: float = 0.5) -> MaskSet:
    """Pixels of the bitmap darker than ``threshold`` are unobserved."""
    channels = load_image(path)
    bitmap = channels[0] if len(channels) == 1 else np.mean(channels, axis=0)
    return MaskSet(bitmap >= threshold)


def make_random_mask(m: int, n: int, missing: float, seed: Seed) -> MaskSet:
    if not 0.0 <= missing < 1.0:
        raise ValueError("missing fraction must lie in [0, 1).")
    observed = np.ones(m * n, dtype=bool)
    count = _count(missing, m, n)
    if count:
        observed[np.random.default_rng(seed).choice(m * n, size=count, replace=False)] = False
    return MaskSet(observed.reshape(m, n))


def mask_seed(seed: int) -> np.random.SeedSequence:
    """Seed stream of the mask, shared by degradation and restoration."""
    return np.random.SeedSequence(seed).spawn(1)[0]


def build_mask(spec: DegradeSpec, shape: tuple[int, int], seed: Seed) -> Optional[MaskSet]:
    if spec.mask is None:
        return None
    m, n = shape
    if spec.mask == "block":
        return make_block_mask(m, n, spec.block_size, spec.block_positions)
    if spec.mask == "random":
        return make_random_mask(m, n, spec.mask_missing, seed)
    mask = load_text_mask(Path(spec.mask), spec.text_threshold)
    if mask.shape != shape:
        raise ValueError(f"mask bitmap is {mask.shape}, image is {shape}.")
    return mask


def degrade(channels: Sequence[np.ndarray], spec: DegradeSpec) -> DegradeResult:
    """Blur, then impulse noise, then blank the unobserved pixels; one seed stream per channel."""
    mask_stream, *channel_seeds = np.random.SeedSequence(spec.seed).spawn(len(channels) + 1)
    shape = np.shape(channels[0])
    kernel = spec.kernel()
    mask = build_mask(spec, shape, mask_stream)

    out = []
    for channel, child in zip(channels, channel_seeds):
        image = np.asarray(channel, dtype=float)
        if kernel is not None:
            image = conv(kernel, image)
        image = add_salt_pepper(image, spec.noise_level, child)
        if mask is not None:
            image = mask.project(image)
        out.append(image)

    corrupted = _count(spec.noise_level, *shape)
    logger.info(
        "image_degraded",
        extra={
            "noise_level": spec.noise_level,
            "blur": spec.blur or "none",
            "mask": spec.mask or "none",
            "corrupted_pixels": corrupted,
            "seed": spec.seed,
        },
    )
    return DegradeResult(out, mask, corrupted)
