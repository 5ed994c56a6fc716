import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hlfusion.dataio import split_dataset  # noqa: E402
from hlfusion.detector import PipelineParams, train_detector  # noqa: E402
from hlfusion.synth import GenParams, generate_dataset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_frames():
    return generate_dataset(GenParams(frames=40, seed=3))


@pytest.fixture(scope="session")
def small_split(small_frames):
    return split_dataset(small_frames, 0.8, 3)


@pytest.fixture(scope="session")
def small_training(small_split):
    train, _ = small_split
    return train_detector(train, PipelineParams())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
