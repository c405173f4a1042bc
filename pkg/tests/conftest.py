import numpy as np
import pytest

from spintherm.rng import stream


@pytest.fixture
def rng():
    return stream(12345, 0)


def random_hermitian(dim, rng):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (a + a.conj().T) / 2


def random_state(dim, rng):
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("SPINTHERM_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


# One line per acceptance criterion, filled in by test_acceptance.py and
# echoed in the terminal summary.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
