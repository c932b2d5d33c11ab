"""Session-scoped corpora and the desk-scale trained model shared by the
acceptance suite."""

import time

import pytest

from vgc.network import CodecConfig
from vgc.trainer import Dataset, TrainConfig, Trainer

from helpers import synthetic_image

# Desk-scale recipe: width-32 model, 48 training images, 64x64 patches,
# rates {2,4,8}, 24 epochs (72 steps). Trains in a few minutes on one CPU.
ACCEPTANCE_CODEC = dict(alpha_c=8, hidden_width=32)
ACCEPTANCE_TRAIN = dict(
    rates=(2, 4, 8), epochs=24, batch_size=16, patch=64, seed=3,
    ms_scales=3, learning_rate=1e-3,
)


@pytest.fixture(scope="session")
def acceptance_model():
    """(trainer, wall-clock seconds) for the trained desk-scale codec."""
    images = [synthetic_image(1000 + i, 64, 64) for i in range(48)]
    dataset = Dataset(images, patch=64, seed=3)
    trainer = Trainer(CodecConfig(**ACCEPTANCE_CODEC),
                      TrainConfig(**ACCEPTANCE_TRAIN))
    start = time.time()
    trainer.fit(dataset)
    return trainer, time.time() - start


@pytest.fixture(scope="session")
def heldout_images():
    """Eight 192x192 images disjoint from the training corpus."""
    return [synthetic_image(9000 + i, 192, 192) for i in range(8)]
