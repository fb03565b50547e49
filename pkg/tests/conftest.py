from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddfv.files import load_mesh
from ddfv.mesh import build_structured_2d, build_structured_3d

DATA = Path(__file__).parent / "data"

settings.register_profile(
    "ddfv", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("ddfv")


@pytest.fixture(scope="session")
def mesh8():
    return build_structured_2d(8, 8)


@pytest.fixture(scope="session")
def mesh4():
    return build_structured_2d(4, 4)


@pytest.fixture(scope="session")
def mesh3d():
    return build_structured_3d(2, 2, 2)


@pytest.fixture(scope="session")
def unstructured():
    return load_mesh(DATA / "unstructured_2d.mesh")


@pytest.fixture(scope="session", params=["mesh8", "unstructured", "mesh3d"])
def any_mesh(request):
    return request.getfixturevalue(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
