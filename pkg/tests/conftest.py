import pytest

from recollab.env import EnvConfig, builtin_layout


@pytest.fixture(scope="session")
def cramped():
    return builtin_layout("cramped_room")


@pytest.fixture
def cfg():
    return EnvConfig()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
