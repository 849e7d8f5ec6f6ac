import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240607)


def random_state(rng, L):
    v = rng.normal(size=1 << L) + 1j * rng.normal(size=1 << L)
    return v / np.linalg.norm(v)


def random_density_matrix(rng, L, rank=None):
    d = 1 << L
    rank = rank or d
    A = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = A @ A.conj().T
    return rho / np.trace(rho).real


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""

    def record(number: int, ok: bool, detail: str, runtime: float, budget: float | None = None):
        timing = f"{runtime:.1f}s" + (f" of {budget:.0f}s" if budget else "")
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} [{timing}]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
