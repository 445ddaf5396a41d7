import numpy as np


def smooth_image(m: int, n: int) -> np.ndarray:
    """Piecewise-smooth test image with values in [0.1, 0.9]."""
    rows = np.linspace(0.0, 1.0, m)[:, None]
    cols = np.linspace(0.0, 1.0, n)[None, :]
    image = 0.5 + 0.25 * np.sin(3.0 * rows) * np.cos(2.0 * cols)
    image[m // 4 : m // 2, n // 4 : n // 2] = 0.85
    return np.clip(image, 0.1, 0.9)


def quantize(image: np.ndarray) -> np.ndarray:
    return np.rint(image * 255.0) / 255.0


def inner(a, b) -> float:
    return float(np.vdot(np.asarray(a), np.asarray(b)))
