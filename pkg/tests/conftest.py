import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gagcn import numkernel as nk

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE = []


@pytest.fixture
def report_criterion(capsys):
    """Print one ``criterion N: PASS|FAIL detail`` line inline and again in the summary."""

    def emit(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return nk.Rng(1234)


def param(values, name="p"):
    return nk.Parameter(np.asarray(values, dtype=np.float64), name, dtype=np.float64)
