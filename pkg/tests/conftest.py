import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hmmfdr.hmm_core import Gaussian, HmmParams, TransitionMatrix

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def gauss_model():
    """Gaussian(0,1) / Gaussian(2,1) with pi_0 = 0.4."""
    return HmmParams.from_transitions(TransitionMatrix([[0.7, 0.3], [0.2, 0.8]]),
                                      [Gaussian(0, 1), Gaussian(2, 1)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one ``ACn PASS|FAIL`` line."""
    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{label} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:s.index(" ")])):
            terminalreporter.write_line(line)
