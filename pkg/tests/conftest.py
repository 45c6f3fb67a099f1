from pathlib import Path

import numpy as np
import pytest

from aggstab import Graph

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def path3() -> Graph:
    return Graph(n=3, shift=np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float))


@pytest.fixture
def ratings_fixture_path() -> Path:
    return DATA_DIR / "ratings_fixture.data"
