import numpy as np
import pytest

from fairdyn.causal import ConditionalTables


class TableAudit:
    """Largest |TE - (NDE - NIE)| over every table whose point values were computed."""

    def __init__(self):
        self.count = 0
        self.worst = 0.0

    def record(self, point):
        te, nde, nie = point[:3]
        if np.isfinite([te, nde, nie]).all():
            self.count += 1
            self.worst = max(self.worst, abs(te - (nde - nie)))


AUDIT = TableAudit()
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session", autouse=True)
def audit_tables():
    original = ConditionalTables.point_values

    def point_values(self):
        out = original(self)
        AUDIT.record(out)
        return out

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(ConditionalTables, "point_values", point_values)
        yield AUDIT


@pytest.fixture
def acceptance_report():
    """Append one pass/fail line per criterion; printed in the terminal summary."""

    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_collection_modifyitems(items):
    # the table audit must run after every other test has fitted its tables
    last = [it for it in items if "audit" in it.name]
    items[:] = [it for it in items if it not in last] + last


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
