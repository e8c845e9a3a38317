import numpy as np
import pytest
import torch

from neuralct.projector import GantrySchedule, render_sinogram
from helpers import disk_movie

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def static_disk():
    movie = disk_movie(n=32, T=8, radius=0.4)
    sino = render_sinogram(movie, GantrySchedule.per_rotation(64))
    return movie, sino


ACCEPTANCE = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
