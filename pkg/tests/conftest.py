import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vortexctl.cli import main

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
ACCEPTANCE_LINES: list[str] = []


class CliRuns:
    """Runs scenario files through the command line once per session and caches the result."""

    def __init__(self, root: Path):
        self.root = root
        self.cache: dict[tuple[str, str], tuple[int, Path, float]] = {}

    def run(self, name: str, tag: str = "a") -> tuple[int, Path, float]:
        key = (name, tag)
        if key not in self.cache:
            out = self.root / tag / name
            start = time.perf_counter()
            code = main(["run", str(SCENARIOS / f"{name}.json"), "--out", str(out)])
            self.cache[key] = (code, out, time.perf_counter() - start)
        return self.cache[key]


@pytest.fixture(scope="session")
def cli_runs(tmp_path_factory):
    return CliRuns(tmp_path_factory.mktemp("runs"))


@pytest.fixture(scope="session")
def acceptance_lines():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
