import os
import sys
from fractions import Fraction

import pytest

from multicontinuum.geometry import build_mesh


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MULTICONTINUUM_EXTENDED", "").lower() in ("1", "true", "yes", "on"):
        return
    skip = pytest.mark.skip(reason="set MULTICONTINUUM_EXTENDED=1 to run")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def small_mesh():
    """Structure 1 on a 4x4 coarse grid with 20 fine cells per block."""
    return build_mesh(1, Fraction(1, 4), n_fine=20)


@pytest.fixture(scope="session")
def small_mesh2():
    return build_mesh(2, Fraction(1, 4), n_fine=20)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
