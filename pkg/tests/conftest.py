import pytest


@pytest.fixture
def scorecard(pytestconfig):
    """Collects acceptance lines; they are echoed after the run summary
    so they stay visible even under captured output."""
    lines = getattr(pytestconfig, "_scorecard_lines", None)
    if lines is None:
        lines = []
        pytestconfig._scorecard_lines = lines
    return lines.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_scorecard_lines", None)
    if lines:
        terminalreporter.section("acceptance scorecard")
        for line in lines:
            terminalreporter.write_line(line)
