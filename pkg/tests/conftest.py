import warnings

import pytest

from coinbias.mcmc import ConvergenceWarning

_RESULTS: list[tuple[str, str, str]] = []


@pytest.fixture
def acceptance():
    """Record one criterion outcome; lines are printed in the terminal summary."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        _RESULTS.append((criterion, "PASS" if passed else "FAIL", detail))
        return passed

    record.skip = lambda criterion, detail: _RESULTS.append((criterion, "SKIP", detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status, detail in _RESULTS:
        terminalreporter.write_line(f"criterion {crit:<4} {status:<4} {detail}")


@pytest.fixture(scope="session")
def reconstruction():
    from coinbias.tables import reconstruct_dataset

    return reconstruct_dataset()


@pytest.fixture(autouse=True)
def _quiet_convergence():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        yield
