import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_nondegenerate_mask(rng, max_size=32):
    """Random blobby mask guaranteed to contain both regions."""
    while True:
        h = int(rng.integers(2, max_size + 1))
        w = int(rng.integers(2, max_size + 1))
        noise = rng.random((h, w))
        from scipy.ndimage import gaussian_filter
        smooth = gaussian_filter(noise, sigma=rng.uniform(0.5, 3.0))
        mask = (smooth > np.median(smooth)).astype(np.uint8)
        if mask.any() and not mask.all():
            return mask


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    """A tiny shared training run for trainer-level tests."""
    from levelseg.trainer import RunConfig, train

    out = tmp_path_factory.mktemp("smoke_run")
    config = RunConfig.from_dict({
        "dataset": {"synth": {"seed": 3, "n_train": 12, "n_val": 4,
                              "n_test": 6, "size": 64, "difficulty": "easy"}},
        "train_size": 12,
        "seed": 5,
        "epochs": 2,
        "image_size": 64,
        "out_dir": str(out),
    })
    result = train(config)
    return config, result
