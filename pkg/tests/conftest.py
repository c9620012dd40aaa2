import numpy as np
import pytest

from regrade import encoder as enc
from regrade.textenc import default_description_set, encode_text


@pytest.fixture(scope="session")
def text16():
    return encode_text(default_description_set(16))


@pytest.fixture(scope="session")
def text64():
    return encode_text(default_description_set(64))


@pytest.fixture(scope="session")
def tiny_params():
    # 32px image, 16px patches -> 4 patches; small dim keeps tests fast.
    return enc.init_params(patch_size=16, dim=16, n_layers=2, n_heads=2, image_size=32, seed=3)


@pytest.fixture()
def tiny_image():
    rng = np.random.default_rng(11)
    return rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
