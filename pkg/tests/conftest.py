import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy():
    from uvapm import synthetic
    return synthetic.toy_face()


@pytest.fixture(scope="session")
def small_models():
    """Coarse model (d=16, k=6) and detail basis (32, m=5) from 8 procedural albedos."""
    from uvapm import builder, synthetic
    from uvapm.uvcore import resize
    imgs = synthetic.procedural_albedos(8, 64, seed=3)
    model = builder.build_uvapm([resize(i, 16) for i in imgs], 6)
    detail = builder.build_detail_basis(builder.extract_residuals(imgs, model, 32), 5)
    return imgs, model, detail
