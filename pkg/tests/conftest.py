import numpy as np
import pytest

from crowdmask.core import RasterMask
from crowdmask.synth import SynthConfig, generate_scene


def mask_from_rows(rows):
    return RasterMask(np.array(rows, dtype=bool))


@pytest.fixture(scope="session")
def sparse_scene():
    return generate_scene(SynthConfig.for_regime("sparse", 12, seed=11))


@pytest.fixture(scope="session")
def dense_scene():
    return generate_scene(SynthConfig.for_regime("dense", 50, seed=5))
