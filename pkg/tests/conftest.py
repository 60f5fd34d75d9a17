# tests/conftest.py

import numpy as np
import pytest

from pipeline.phantom import PhantomSpec, generate
from pipeline.volgrid import BinaryMask, Spacing

UNIT = Spacing(1.0, 1.0, 1.0)


def mask_from_points(dims, points, spacing=UNIT) -> BinaryMask:
    arr = np.zeros(dims, dtype=np.uint8)
    for p in points:
        arr[tuple(p)] = 1
    return BinaryMask(arr, spacing)


def block_mask(dims, slices, spacing=UNIT) -> BinaryMask:
    arr = np.zeros(dims, dtype=np.uint8)
    arr[slices] = 1
    return BinaryMask(arr, spacing)


@pytest.fixture(scope="session")
def phantom():
    """Default 13-phase phantom (EF 55%, V_ED 500 mm^3, seed 42)."""
    return generate(PhantomSpec())


@pytest.fixture(scope="session")
def small_phantom():
    return generate(PhantomSpec(n_phases=11, v_ed_target=300.0, ef_target=50.0, seed=3))
