import os

# tests never touch the network; the hub must stay out of the picture
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

import numpy as np
import pytest
from PIL import Image

from cgbc_encoder.backend import ClipBackend
from cgbc_encoder.tiny import write_tiny_checkpoint


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    return write_tiny_checkpoint(tmp_path_factory.mktemp("tiny-clip"), seed=0)


@pytest.fixture(scope="session")
def backend(tiny_model_dir):
    return ClipBackend(str(tiny_model_dir))


@pytest.fixture()
def image_files(tmp_path):
    rng = np.random.default_rng(7)
    paths = []
    for i in range(3):
        arr = rng.integers(0, 255, size=(40, 48, 3), dtype=np.uint8)
        path = tmp_path / f"img{i}.png"
        Image.fromarray(arr).save(path)
        paths.append(path)
    return paths
