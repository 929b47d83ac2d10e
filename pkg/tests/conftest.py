import numpy as np
import pytest

from overspread_otfs.channel import ChannelPath, ChannelRealization
from overspread_otfs.otfs_core import FrameGeometry

# Nine-path toy channel on an 8 x 6 grid with overspread delays up to 30.
TOY_PATHS = [(0, 0), (9, 4), (2, 1), (10, 3), (4, 2), (12, 2), (20, 5), (14, 1), (30, 1)]


def toy_channel(phase_seed: int = 6) -> ChannelRealization:
    g = FrameGeometry(8, 6)
    ph = np.exp(2j * np.pi * np.random.default_rng(phase_seed).random(len(TOY_PATHS)))
    paths = tuple(ChannelPath(complex(p / 3), l, k) for p, (l, k) in zip(ph, TOY_PATHS))
    return ChannelRealization(g, paths, 30)


@pytest.fixture
def toy():
    return toy_channel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


# One summary line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
