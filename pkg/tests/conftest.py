import pytest
import torch

from oracles import make_flow, randomize_flow  # noqa: F401


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


@pytest.fixture(autouse=True)
def _seed_global_rng():
    # module initialisers draw from the global generator
    torch.manual_seed(0)
