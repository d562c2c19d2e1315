import numpy as np
import pytest
from hypothesis import settings

from care.config import ScenarioConfig

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    """Half-hour, 8-person scenario on a small map; runs in well under a second."""
    return ScenarioConfig(duration_T=1800, gen_interval_G=30, n_people=8, poi_count=3,
                          disaster_region=(0.0, 0.0, 2000.0, 2000.0), gateway_position=(3000.0, 1000.0),
                          map_spacing=500.0, pr_disaster=0.5)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def report(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
