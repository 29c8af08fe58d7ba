import pytest

from iterjulia.construction import ConstructionConfig, construct


@pytest.fixture(scope="session")
def small_state():
    """Two stages on a coarse grid, shared by the construction and line-field tests."""
    return construct(ConstructionConfig(resolution=96, mc_points=4000, max_stages=2, seed=3))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
