import numpy as np
import pytest

from agid.data import load_manifest, split_dataset
from agid.toydata import generate_toy_corpus


def random_raster(rng, h=32, w=32):
    return rng.random((h, w, 3), dtype=np.float32)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    manifest_path = generate_toy_corpus(root, per_class=10, side=32, seed=0)
    return load_manifest(manifest_path)


@pytest.fixture(scope="session")
def toy_splits(toy_corpus):
    return split_dataset(toy_corpus, (0.6, 0.2, 0.2), seed=0, side=32)
