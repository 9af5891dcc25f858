import pytest
import torch

from app.models import BrightVAEConfig, TrainConfig
from app.services.dataset import make_synth_dataset, write_split


@pytest.fixture
def tiny_config():
    """Small enough to train in seconds on a CPU."""
    return BrightVAEConfig(channels=8, codebook_size=16, heads=2, seed=0)


@pytest.fixture
def tiny_config64():
    return BrightVAEConfig(channels=8, codebook_size=16, heads=2, seed=0, dtype="float64")


@pytest.fixture
def tiny_train_config():
    return TrainConfig(
        epochs=2,
        batch_size=2,
        warmup_epochs=1,
        cycle_epochs=2,
        seed=0,
        checkpoint_every=1,
    )


@pytest.fixture
def train_split():
    return make_synth_dataset(4, 16, seed=1, name="train")


@pytest.fixture
def test_split():
    return make_synth_dataset(2, 16, seed=2, name="test")


@pytest.fixture
def dataset_root(tmp_path, train_split, test_split):
    root = tmp_path / "data"
    write_split(train_split, root)
    write_split(test_split, root)
    return root


@pytest.fixture
def image_batch():
    generator = torch.Generator().manual_seed(0)
    return torch.rand(2, 3, 16, 16, generator=generator)
