import pytest

from arraylob import lobster
from arraylob.synthetic import write_day


@pytest.fixture(scope="session")
def day_files(tmp_path_factory):
    return write_day(tmp_path_factory.mktemp("day"), seed=11, n_messages=4000, mean_gap_ms=400)


@pytest.fixture(scope="session")
def day_windows(day_files):
    m, o = day_files
    return lobster.load_day(m, o, window_duration_s=600, n_messages=50, capacity=100)


# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS = {}


class _Criterion:
    def __init__(self, number):
        self.number = number
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        passed = exc_type is None
        detail = self.detail if passed else f"{exc_type.__name__}: {exc}".splitlines()[0]
        ACCEPTANCE_RESULTS[self.number] = (passed, detail)
        print(f"criterion {self.number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        return False


@pytest.fixture
def criterion():
    """``with criterion(n) as c:`` records PASS, or FAIL if the block raises."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
