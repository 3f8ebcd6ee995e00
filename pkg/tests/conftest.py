import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest

from dtvit.datapipe import AugmentConfig
from dtvit.morph import MorphParams, preprocess
from dtvit.phantom import generate
from dtvit.trainer import ImageSet

WINDOW = MorphParams(window=(40.0, 80.0))
TINY_AUG = AugmentConfig(image_size=32)


def phantom_set(per_class: int, seed: int = 0) -> ImageSet:
    images, presence, location = [], [], []
    for i in range(per_class):
        for kind in range(4):
            ph = generate(kind, seed=seed * 100_000 + i)
            images.append(preprocess(ph.scan, WINDOW))
            presence.append(ph.sample.presence)
            location.append(-1 if ph.sample.location is None else ph.sample.location)
    return ImageSet(images, presence, location)


@pytest.fixture(scope="session")
def small_sets():
    return phantom_set(4, seed=1), phantom_set(2, seed=2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
