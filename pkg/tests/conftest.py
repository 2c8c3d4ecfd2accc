import pathlib

import numpy as np
import pytest

from urnlab.matrix_core import validate_model

MODELS = pathlib.Path(__file__).resolve().parent.parent / "models"


def make(R, theta=1.0, U0=None):
    R = np.asarray(R, dtype=float)
    k = R.shape[0]
    if U0 is None:
        U0 = np.full(k, 1.0 / k)
    return validate_model(k, theta, R, U0)


def star_matrix(alpha, central=0):
    """Star with central colour ``central`` and central row ``alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    k = len(alpha)
    R = np.zeros((k, k))
    R[:, central] = 1.0
    R[central] = alpha
    return R


CYCLIC3 = [[0, 1, 0], [0, 0, 1], [1, 0, 0]]
CRITICAL3 = [[0, 1, 0], [1, 0, 0], [0, 0, 1]]
TWO_COLOUR = [[0.25, 0.75], [0.5, 0.5]]
SWAP = [[0, 1], [1, 0]]


@pytest.fixture
def models_dir():
    return MODELS


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def record(criterion, what, value, threshold, ok):
    flag = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append(f"[{flag}] criterion {criterion}: {what} = {value:.6g} (need {threshold})")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
