import sys
from pathlib import Path

import numpy as np
import pytest

# helper modules (portable.py) live next to the tests
sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
