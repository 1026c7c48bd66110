import numpy as np
import pytest

from ndcp.dataset import Dataset, make_two_gaussians


@pytest.fixture
def gauss200():
    return make_two_gaussians(200, seed=5, n_features=3, separation=2.5)


@pytest.fixture
def tiny():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0], [4.0, 0.5], [5.0, 3.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    return Dataset(X, y, ("a", "b"))


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(name: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" :: {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
