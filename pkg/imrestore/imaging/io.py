"""Binary PGM (P5) and PPM (P6) reading and writing at 8-bit depth.

Images travel through the toolkit as a list of ``m x n`` float channels in
``[0, 1]``: one channel for gray, three for color.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from imrestore.core.errors import ImageFormatError, ShapeError

logger = logging.getLogger("imrestore.io")

_CHANNELS = {b"P5": 1, b"P6": 3}
_MAXVAL = 255


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError("truncated header.")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def parse_image(data: bytes) -> list[np.ndarray]:
    tokens, offset = _header_tokens(data, 4)
    magic = tokens[0]
    if magic not in _CHANNELS:
        raise ImageFormatError(f"unsupported magic number {magic!r}; expected P5 or P6.")
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError("malformed header.") from exc
    if width < 1 or height < 1:
        raise ImageFormatError("image dimensions must be positive.")
    if maxval != _MAXVAL:
        raise ImageFormatError(f"unsupported max value {maxval}; only 8-bit images are supported.")
    channels = _CHANNELS[magic]
    size = width * height * channels
    raster = data[offset : offset + size]
    if len(raster) != size:
        raise ImageFormatError(f"expected {size} raster bytes, found {len(raster)}.")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels) / float(_MAXVAL)
    return [pixels[:, :, c].copy() for c in range(channels)]


def encode_image(channels: Sequence[np.ndarray]) -> bytes:
    if len(channels) not in (1, 3):
        raise ShapeError("an image has one (gray) or three (color) channels.")
    shape = np.shape(channels[0])
    if len(shape) != 2 or any(np.shape(c) != shape for c in channels):
        raise ShapeError("channels must be 2-D grids of equal shape.")
    stacked = np.stack([np.asarray(c, dtype=float) for c in channels], axis=-1)
    quantized = np.clip(np.rint(stacked * _MAXVAL), 0, _MAXVAL).astype(np.uint8)
    magic = b"P5" if len(channels) == 1 else b"P6"
    height, width = shape
    header = magic + f"\n{width} {height}\n{_MAXVAL}\n".encode("ascii")
    return header + quantized.tobytes()


def load_image(path: Path) -> list[np.ndarray]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    channels = parse_image(data)
    logger.debug("image_loaded", extra={"path": str(path), "channels": len(channels), "shape": channels[0].shape})
    return channels


def save_image(path: Path, channels: Sequence[np.ndarray]) -> None:
    if isinstance(channels, np.ndarray) and channels.ndim == 2:
        channels = [channels]
    payload = encode_image(channels)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise ImageFormatError(f"cannot write {path}: {exc}") from exc
    logger.info("image_written", extra={"path": str(path), "channels": len(channels)})
