import os

# Tests run against the single-threaded numpy reference backend so pinned
# regression values are stable; the numba backend is exercised explicitly in
# test_kernels.py.
os.environ.setdefault("UNIMOS_NUMBA", "0")
os.environ.setdefault("UNIMOS_THREADS", "0")

import numpy as np
import pytest

from unimos.data import Rng


@pytest.fixture
def rng():
    return Rng(0)
