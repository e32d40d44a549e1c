import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meshparse.synth import export_dataset, generate_humanoid  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def humanoid():
    return generate_humanoid(0)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Coarse humanoid rendered at 256 px: quick enough for structural pipeline tests.

    At this vertex density an epsilon-ball holds a few dozen vertices, so
    min_samples is lowered to keep DBSCAN cores.
    """
    root = tmp_path_factory.mktemp("small")
    config = export_dataset(root, seed=0, tessellation=60, size=256)
    doc = json.loads(config.read_text())
    doc["fuse"] = {"min_samples": 10}
    config.write_text(json.dumps(doc, indent=2))
    return config


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
