import numpy as np
import pytest

from avjca.autodiff import Graph


def const(values):
    """Constant node on a fresh graph, for forward-only checks."""
    return Graph().constant(np.asarray(values, dtype=np.float64))


def on_graph(*arrays):
    g = Graph()
    return g, [g.constant(np.asarray(a, dtype=np.float64)) for a in arrays]


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
