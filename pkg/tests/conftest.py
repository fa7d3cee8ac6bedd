import numpy as np
import pytest
import torch

from monolf.lightfield import LightField


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_lightfield(rng, angular=(3, 3), size=(12, 12), dtype=torch.float32) -> LightField:
    views = rng.uniform(0.0, 1.0, size=(*angular, *size, 3))
    return LightField(torch.tensor(views, dtype=dtype))


def replicated_lightfield(img: torch.Tensor, angular=(3, 3)) -> LightField:
    views = img.expand(*angular, *img.shape).clone()
    return LightField(views)
