import pytest

from ipfc_relay.grid import load_grid
from ipfc_relay.scenario import Scenario, run_scenario


@pytest.fixture(scope="session")
def grid():
    return load_grid()


class _RunCache:
    """Runs of the default scenario keyed by IPFC mode; each costs about a second."""

    def __init__(self, model):
        self.model = model
        self._runs = {}

    def __call__(self, mode: str):
        if mode not in self._runs:
            self._runs[mode] = run_scenario(Scenario(ipfc_mode=mode, name=mode), self.model)
        return self._runs[mode]


@pytest.fixture(scope="session")
def runs(grid):
    return _RunCache(grid)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
