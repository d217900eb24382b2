import pytest

_VERDICTS = []


class Criterion:
    """Collects sub-check outcomes for one acceptance criterion; fails the test if any failed."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.checks = []

    def check(self, name, passed, detail=""):
        self.checks.append((name, bool(passed), detail))
        return passed

    def finish(self):
        ok = all(p for _, p, _ in self.checks)
        _VERDICTS.append((self.number, self.title, ok, list(self.checks)))
        failed = [f"{n}: {d}" for n, p, d in self.checks if not p]
        if failed:
            pytest.fail(f"criterion {self.number} failed: " + "; ".join(failed), pytrace=False)


@pytest.fixture
def criterion():
    made = []

    def make(number, title):
        c = Criterion(number, title)
        made.append(c)
        return c
    return make


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, title, ok, checks in sorted(_VERDICTS):
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
        for name, passed, detail in checks:
            tr.write_line(f"    [{'ok' if passed else 'FAIL'}] {name}  {detail}")
