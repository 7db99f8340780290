import pytest

from afarq import ChannelStats

_ACCEPTANCE = []


@pytest.fixture
def stats():
    """Channel statistics used throughout the numerical evaluation."""
    return ChannelStats(sigma2_sd=2.0, sigma2_sr=1.0, sigma2_rd=1.0)


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        _ACCEPTANCE.append((number, passed, detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE, key=lambda r: str(r[0])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
