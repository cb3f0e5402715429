import pytest

from tripeval.fixtures import manhattan_network

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line[1])


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion; returns ``ok`` for asserting."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        request.config.stash[ACCEPTANCE].append((number, line))
        return ok

    return record


@pytest.fixture(scope="session")
def grid_net():
    """The 20 x 20 block Manhattan network with 100 m blocks."""
    return manhattan_network(20, 100.0)
