import numpy as np
import pytest

from exitlab.model import ModelConfig, init_weights

# The desk-scale reference setup used across the suite.
TOY_CONFIG = ModelConfig(
    num_layers=8,
    shallow_depth=4,
    d_model=32,
    n_heads=4,
    d_ff=64,
    vocab_size=64,
    max_positions=128,
    seed=0,
)

EOS = 0


@pytest.fixture(scope="session")
def toy_config():
    return TOY_CONFIG


@pytest.fixture(scope="session")
def toy_weights():
    return init_weights(TOY_CONFIG)


def seeded_prompts(count, seed=1, low=1, high=None, min_len=3, max_len=8):
    """Deterministic prompts over non-EOS token ids."""
    high = TOY_CONFIG.vocab_size if high is None else high
    rng = np.random.default_rng(seed)
    return [
        rng.integers(low, high, size=int(rng.integers(min_len, max_len + 1))).tolist()
        for _ in range(count)
    ]
