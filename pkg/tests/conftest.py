import random
import sys

import pytest
from hypothesis import settings

from dtcgame.core_model import GameConfig

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")



def pytest_terminal_summary(terminalreporter):
    """Repeat the one-line verdict of every acceptance criterion that ran."""
    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def base_cfg() -> GameConfig:
    return GameConfig(num_users=101)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240611)
