import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tvmdp.config import ExperimentConfig  # noqa: E402
from tvmdp.gridworld import GridWorld  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture
def grid10():
    return GridWorld(10, 10, goal=99)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


def load_config(name) -> ExperimentConfig:
    return ExperimentConfig.load(CONFIGS / name)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def report():
    def record(n, ok, detail):
        ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
