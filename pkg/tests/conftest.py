import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    pytest.importorskip("mlxtend")
    from qresnet.data import export_bundled_mnist

    out = tmp_path_factory.mktemp("mnist")
    export_bundled_mnist(out)
    return out


def random_state(rng, n):
    v = rng.normal(size=2**n)
    return v / np.linalg.norm(v)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record a one-line acceptance verdict; lines are printed after the run."""

    def add(label, passed, detail=""):
        ACCEPTANCE_LINES.append(f"{label}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip())
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
