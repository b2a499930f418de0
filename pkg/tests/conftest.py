import numpy as np
import pytest

from placevision.image import GrayImage, gaussian_blur


def blob_texture(seed: int = 42, size: int = 256, lo: float = 0.05, hi: float = 0.75) -> GrayImage:
    """Thresholded blob field: strong isolated structures at a stable scale,
    with headroom for brightness shifts (values stay within [lo, hi])."""
    rng = np.random.default_rng(seed)
    base = gaussian_blur(GrayImage(rng.random((size, size))), 3.0).intensities
    binary = (base > np.median(base)).astype(float)
    tex = gaussian_blur(GrayImage(binary), 1.0).intensities
    return GrayImage(lo + tex * (hi - lo))


@pytest.fixture(scope="session")
def texture() -> GrayImage:
    return blob_texture()


@pytest.fixture(scope="session")
def small_texture() -> GrayImage:
    return blob_texture(seed=7, size=128)
