import numpy as np
import pytest
from hypothesis import settings, strategies as st

from jsqlab.model import OccupancyState, from_queue_lengths

settings.register_profile("default", deadline=None, derandomize=True)
settings.load_profile("default")

# criterion-level property tests run at least this many randomized cases
MANY = 1000


@st.composite
def occupancy_states(draw, max_n=12, max_len=6):
    n = draw(st.integers(1, max_n))
    lengths = draw(st.lists(st.integers(0, max_len), min_size=n, max_size=n))
    return from_queue_lengths(lengths, n)


@st.composite
def raw_occupancy(draw, max_n=50, max_levels=8):
    """Monotone vector drawn directly, without going through queue lengths."""
    n = draw(st.integers(1, max_n))
    depth = draw(st.integers(0, max_levels))
    q, prev = [], n
    for _ in range(depth):
        v = draw(st.integers(0, prev))
        q.append(v)
        prev = v
    return OccupancyState(n, tuple(q))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
