import numpy as np
import pytest

from brepfit import synthetic as S
from brepfit.topology import reconstruct
from brepfit.types import validate_segmented_cloud


@pytest.fixture(scope="session")
def cube_model():
    pts, labels = S.cube_clusters(500, 0)
    return reconstruct(validate_segmented_cloud(pts, labels))


@pytest.fixture(scope="session")
def capped_cylinder_model():
    pts, labels = S.capped_cylinder_clusters(2000, 700, 0)
    return reconstruct(validate_segmented_cloud(pts, labels))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
