import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hetvecchia.data import RawCampaign, build_replicated_design

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_design(rng, n=12, d=1, a_max=5):
    """Replicated design with distinct sites in the unit cube."""
    X = rng.uniform(size=(n, d))
    a = rng.integers(1, a_max + 1, size=n)
    rows = np.repeat(np.arange(n), a)
    y = np.sin(3 * X[rows].sum(axis=1)) + 0.3 * rng.standard_normal(rows.size)
    return build_replicated_design(RawCampaign(X[rows], y))


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
