import time

import numpy as np
import pytest

from brinkman_mfem.assembly import ModelParams
from brinkman_mfem.harness import convergence_study
from brinkman_mfem.manufactured import DOMAIN, exact_case_2d
from brinkman_mfem.mesh import build_rect_mesh, refine_uniform
from brinkman_mfem.spaces import build_spaces


@pytest.fixture(scope="session")
def case():
    return exact_case_2d()


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def coarse_mesh():
    """4 x 2 squares of (0, 2) x (0, 1), each split along the lower-left diagonal."""
    return build_rect_mesh(4, 2, DOMAIN)


@pytest.fixture(scope="session")
def crossed_mesh():
    return build_rect_mesh(4, 2, DOMAIN, diagonal="crossed")


@pytest.fixture(scope="session", params=[0, 1], ids=["k0", "k1"])
def spaces(request, crossed_mesh):
    return build_spaces(crossed_mesh, request.param)


@pytest.fixture(scope="session")
def mesh_sequence():
    meshes = [build_rect_mesh(4, 2, DOMAIN, diagonal="crossed")]
    for _ in range(3):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _timed_study(k, levels):
    start = time.perf_counter()
    study = convergence_study(k, levels)
    study.seconds = time.perf_counter() - start
    return study


@pytest.fixture(scope="session")
def study_k0():
    return _timed_study(0, 6)


@pytest.fixture(scope="session")
def study_k1():
    return _timed_study(1, 5)
