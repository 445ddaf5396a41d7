import os

import numpy as np
import pytest

from imrestore.core.config import get_settings
from imrestore.imaging.io import save_image
from tests.helpers import quantize, smooth_image


@pytest.fixture
def rng():
    return np.random.default_rng(20240614)


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Each test sees default settings regardless of the caller's IMRESTORE_* variables."""
    for key in list(os.environ):
        if key.startswith("IMRESTORE_"):
            monkeypatch.delenv(key, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def gray_image():
    return quantize(smooth_image(16, 16))


@pytest.fixture
def gray_file(tmp_path, gray_image):
    path = tmp_path / "clean.pgm"
    save_image(path, [gray_image])
    return path
