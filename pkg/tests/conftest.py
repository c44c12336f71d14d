import pytest

from bethe_iba import iba
from bethe_iba.partitions import Partition
from bethe_iba.special import alpha_context


@pytest.fixture(scope="session")
def ctx2():
    return alpha_context(2.0)


@pytest.fixture(scope="session")
def ground10(ctx2):
    return iba.solve(ctx2, 10.0, Partition(()))


@pytest.fixture(scope="session")
def excited10(ctx2):
    return iba.solve(ctx2, 10.0, Partition((1,)))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, report_line
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(report_line(n, *RESULTS[n]))
