from __future__ import annotations

import pytest

from evoprune.calibration import build_dataset
from evoprune.oracle import LocalToyOracle
from evoprune.toylm import init_model

from util import ACCEPTANCE_DATASET_CONFIG, CORPUS_PATH, FIXTURE_TOY_CONFIG


@pytest.fixture(scope="session")
def corpus_text() -> str:
    return CORPUS_PATH.read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def acceptance_dataset(corpus_text):
    return build_dataset(corpus_text, ACCEPTANCE_DATASET_CONFIG)


@pytest.fixture(scope="session")
def fixture_oracle():
    return LocalToyOracle(init_model(FIXTURE_TOY_CONFIG))
