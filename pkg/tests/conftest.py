import functools

import numpy as np
import pytest
from hypothesis import settings

from symmcomp import mesh as M

settings.register_profile("suite", deadline=None, max_examples=30, derandomize=True, print_blob=True)
settings.load_profile("suite")


@functools.lru_cache(maxsize=None)
def cached_mesh(shape: str, **kw):
    return M.make(shape, **kw)


def disk(h=0.05, r=1.0, center=(0.0, 0.0)):
    return cached_mesh("disk", radius=r, h=h, center=center)


def square(h=0.05, a=1.0, center=(0.0, 0.0)):
    return cached_mesh("square", a=a, h=h, center=center)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
