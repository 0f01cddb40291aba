import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spectramba import tensor as T  # noqa: E402

REPO = Path(__file__).resolve().parents[1]
BUNDLED_CSV = REPO / "data" / "synthetic.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def clean_tape():
    T.reset_tape()
    yield
    T.reset_tape()


def leaf(arr):
    return T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def jitter(module, rng, scale=0.3):
    """Move every parameter off its structured init so each path carries gradient signal.

    At init several gradients are ~1e-7 (near-zero SSM input/readout maps,
    small step sizes); central differences with h=1e-5 cannot resolve those
    to 1e-4 relative accuracy in 64-bit, so checks run at a random point.
    """
    for p in module.parameters():
        p.data = p.data + scale * rng.standard_normal(p.shape)
    return module


ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
