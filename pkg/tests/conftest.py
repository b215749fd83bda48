import numpy as np
import pytest

from uaclip.imaging import RasterImage


def ppm_bytes(width, height, samples):
    return f"P6\n{width} {height}\n255\n".encode() + bytes(samples)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def random_image(rng):
    def make(h=16, w=16):
        return RasterImage(rng.integers(0, 256, size=(h, w, 3)) / 255.0)

    return make
