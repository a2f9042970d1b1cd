import pytest
import torch


@pytest.fixture(autouse=True)
def _seed_global_rng():
    # tests draw inputs from the global generator; pin it so every test is reproducible
    torch.manual_seed(1234)
    yield
