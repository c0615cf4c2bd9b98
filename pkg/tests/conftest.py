import os
from pathlib import Path

import numpy as np
import pytest

from ldl.data import MNIST_FILES, LabeledSet


def mnist_dir() -> Path | None:
    d = Path(os.environ.get("LDL_DATA_DIR", "/root/data/mnist"))
    names = [n for pair in MNIST_FILES.values() for n in pair]
    if all((d / n).exists() or (d / (n + ".gz")).exists() for n in names):
        return d
    return None


def synthetic_set(rng, n_classes=3, per_class=4, dim=6, noise=0.1) -> LabeledSet:
    """Noisy copies of random prototypes in [0, 1], labels in class-major order."""
    centers = rng.random((n_classes, dim))
    y = np.repeat(np.arange(n_classes), per_class)
    x = np.clip(centers[y].T + noise * rng.standard_normal((dim, len(y))), 0.0, 1.0)
    return LabeledSet(x, y, n_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_path():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not available (set LDL_DATA_DIR)")
    return d


# One line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").split(".")[0])):
            terminalreporter.write_line(line)
