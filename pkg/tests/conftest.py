import numpy as np
import pytest
import torch

from hotspots.encoder import EncoderConfig
from hotspots.model import AffordanceModel
from hotspots.synth import SynthConfig, synth_generate


TINY_SYNTH = SynthConfig(
    image_size=64,
    clip_length=6,
    actions=("press", "rotate"),
    objects_per_action=2,
    clips_per_object=4,
    noise=2.0,
    seed=7,
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small rendered benchmark shared by the data/training/cli tests."""
    root = tmp_path_factory.mktemp("tiny_synth")
    return synth_generate(TINY_SYNTH, root)


@pytest.fixture()
def desk_model():
    torch.manual_seed(0)
    config = EncoderConfig(preset="desk", channels=32, input_size=64)
    return AffordanceModel(config, num_actions=3, hidden_size=32).eval()


def random_model(seed: int, num_actions: int = 3, input_size: int = 64) -> AffordanceModel:
    torch.manual_seed(seed)
    config = EncoderConfig(preset="desk", channels=32, input_size=input_size)
    return AffordanceModel(config, num_actions=num_actions, hidden_size=32).eval()


def random_feature(seed: int, channels: int = 32, grid: int = 8, floor: float = 0.1):
    """Random feature map with |entries| >= floor (away from pooling epsilon)."""
    rng = np.random.default_rng(seed)
    magnitude = rng.uniform(floor, 1.0, size=(channels, grid, grid))
    sign = rng.choice([-1.0, 1.0], size=magnitude.shape)
    return torch.from_numpy(magnitude * sign).float()
