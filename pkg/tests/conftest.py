import functools
import sys

import numpy as np
import pytest

from whitney_maxwell.derham import build_complex
from whitney_maxwell.mesh import TetMesh, generate_box_mesh

REFERENCE_TET = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
# bipyramid: two tets glued along face (1, 2, 3)
TWO_TETS = ([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], [[0, 1, 2, 3], [4, 1, 2, 3]])


@functools.lru_cache(maxsize=None)
def box_complex(n):
    return build_complex(generate_box_mesh(n))


@pytest.fixture
def single_tet():
    return TetMesh.from_cells(REFERENCE_TET, [[0, 1, 2, 3]])


@pytest.fixture
def two_tets():
    return TetMesh.from_cells(*TWO_TETS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    RESULTS = mod.RESULTS
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[k])
