import pytest

from dimerlab.acceptance import CRITERIA

_results = {}


@pytest.fixture(scope="session")
def acceptance_results():
    """Run each criterion once per session and keep its result for the summary."""

    def get(number):
        if number not in _results:
            _results[number] = CRITERIA[number]()
        return _results[number]

    return get


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        terminalreporter.write_line(_results[number].line())
