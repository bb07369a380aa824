import os

# Settings are read at import time; keep test runs off the log files.
os.environ.setdefault("ENVIRONMENT", "testing")
os.environ.setdefault("LOG_TO_FILE", "false")
os.environ.setdefault("LOG_EXCEPTION", "false")
os.environ.setdefault("LOG_LEVEL", "WARNING")

import pytest  # noqa: E402
import torch  # noqa: E402

from app.models.denoiser import DenoiserNet  # noqa: E402
from app.models.enums import SequenceKind  # noqa: E402
from app.schemas.priors import GaussianPrior  # noqa: E402
from app.schemas.sequences import SequenceConfig  # noqa: E402
from app.schemas.training import DenoiserConfig  # noqa: E402
from app.services.diffusion_service import make_schedule  # noqa: E402
from app.services.sequence_service import sequence_service  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def schedule():
    return make_schedule(0.1, 20.0, 1.0, 100)


@pytest.fixture
def gen():
    g = torch.Generator()
    g.manual_seed(1234)
    return g


def random_spd(d: int, generator: torch.Generator) -> torch.Tensor:
    a = torch.randn(d, d, generator=generator, dtype=torch.float64)
    return a @ a.T / d + 0.5 * torch.eye(d, dtype=torch.float64)


@pytest.fixture
def full_prior(gen):
    d = 8
    mean = torch.randn(d, generator=gen, dtype=torch.float64)
    return GaussianPrior(mean=mean, covariance=random_spd(d, gen))


@pytest.fixture
def tiny_denoiser():
    torch.manual_seed(0)
    return DenoiserNet(DenoiserConfig(channels=4, embedding_dim=8)).double()


@pytest.fixture
def blob_sequence():
    config = SequenceConfig(kind=SequenceKind.BLOBS, height=16, width=16, length=6, motion_level=1.0, num_blobs=2, seed=7)
    return sequence_service.generate(config)
