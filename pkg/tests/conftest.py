from pathlib import Path

import numpy as np
import pytest

from mcc.dataset import ModalitySchema, MultiModalDataset, make_synthetic

DATA = Path(__file__).parent / "data"


@pytest.fixture
def emotions_head():
    from mcc.dataset import load_dataset
    return load_dataset(DATA / "emotions_head.arff.gz", schema_spec={"dims": [32, 32, 8], "labels": 6})


@pytest.fixture
def toy3():
    """Small 3-modality, 3-label synthetic set."""
    return make_synthetic(60, [3, 2, 2], 3, signal=[0.9, 0.4, 0.0], seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_dataset(X, Y, dims, costs=None):
    return MultiModalDataset(np.asarray(X, float), np.asarray(Y), ModalitySchema(dims, costs))


# acceptance criteria report their verdicts here; printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
