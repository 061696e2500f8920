import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from ebosal.alcycle import ALConfig  # noqa: E402
from ebosal.datagen import GeneratorSpec, make_task  # noqa: E402
from ebosal.model import ModelHyper  # noqa: E402


@pytest.fixture(scope="session")
def small_task():
    """6 classes, 3 known; small enough for whole-cycle tests."""
    spec = GeneratorSpec(n_classes=6, dim=4, n_train_per_class=30, n_test_per_class=10, box=4.0)
    return make_task(spec, 0.5, seed=3)


@pytest.fixture
def fast_config():
    """ALConfig with a handful of epochs so cycle tests finish in about a second."""
    return ALConfig(cycles=3, budget=6, init_fraction=0.2, model=ModelHyper(hidden=(16, 16), epochs=4, batch_size=8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(RESULTS, key=lambda n: (int("".join(c for c in n.split()[0] if c.isdigit()) or 0), n)):
        passed, detail = RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
