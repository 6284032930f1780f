import os

import numpy as np
import pytest

from poisonbench.data import DATA_DIR_ENV, mnist_paths


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """Directory with the four MNIST IDX files.

    Uses ``$POISONBENCH_DATA_DIR`` when set, else exports the 5000-digit sample
    bundled with mlxtend (4000 train / 1000 test). Skips when neither exists.
    """
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        mnist_paths(env)
        return env
    pytest.importorskip("mlxtend")
    from poisonbench.data import export_mnist_subset

    out = tmp_path_factory.mktemp("mnist")
    export_mnist_subset(out)
    return str(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one pass/fail line per acceptance criterion, printed after the run
_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str = "") -> bool:
        _CRITERIA[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
