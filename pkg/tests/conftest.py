from contextlib import contextmanager

import pytest

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``with acceptance(3, "title"):`` records one pass/fail line per criterion."""
    results = request.config.stash.setdefault(ACCEPTANCE, [])

    @contextmanager
    def check(number, title):
        try:
            yield
        except BaseException as exc:
            line = f"FAIL  criterion {number}: {title} ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
            results.append((number, line))
            print(line)
            raise
        line = f"PASS  criterion {number}: {title}"
        results.append((number, line))
        print(line)

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(results):
        terminalreporter.write_line(line)
