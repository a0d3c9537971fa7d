import numpy as np
import pytest
import torch

from jlm.skeleton import SkeletonTemplate, load_template

torch.set_default_dtype(torch.float64)


@pytest.fixture(scope="session")
def template() -> SkeletonTemplate:
    return load_template()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotations(rng, *shape) -> torch.Tensor:
    """Uniform-ish random rotation matrices via QR of Gaussian matrices."""
    a = torch.as_tensor(rng.standard_normal((*shape, 3, 3)))
    q, r = torch.linalg.qr(a)
    q = q * torch.sign(torch.diagonal(r, dim1=-2, dim2=-1)).unsqueeze(-2)
    det = torch.linalg.det(q)
    q[..., :, 2] *= det.unsqueeze(-1)
    return q


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
