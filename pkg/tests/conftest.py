import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from autolfd.gmm import extract_reference
from autolfd.letters import synth_letters

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def letter_a():
    return synth_letters("A", 5, seed=0)


@pytest.fixture(scope="session")
def letter_g():
    return synth_letters("G", 5, seed=0)


@pytest.fixture(scope="session")
def reference_g(letter_g):
    return extract_reference(letter_g, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
