import zlib

import numpy as np
import pytest


@pytest.fixture
def rng(request):
    # a fixed, per-test stream so failures reproduce
    seed = zlib.crc32(request.node.nodeid.encode())
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
