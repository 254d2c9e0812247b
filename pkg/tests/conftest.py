import numpy as np
import pytest

from tridiff.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Smallest useful model: fast unit-test forward/backward."""
    return ModelConfig(image_size=8, channels=3, patch_size=2, hidden_dim=16,
                       depth=1, num_heads=2, num_classes=4)


@pytest.fixture
def small_cfg():
    """A step up from tiny: multi-block, still fast."""
    return ModelConfig(image_size=16, channels=3, patch_size=2, hidden_dim=32,
                       depth=2, num_heads=4, num_classes=8)
