import sys
from pathlib import Path

import pytest

# oracles.py / datagen.py live beside the tests, not in the package
sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def micro_dir() -> Path:
    return FIXTURES / "micro"
