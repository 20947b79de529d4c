import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from spidernet.pathplan import CORE, EDGE, Topology  # noqa: E402


@pytest.fixture
def chain():
    """s-m-d primary with a parallel two-hop detour s-x-d around m."""
    return Topology({"s": EDGE, "d": EDGE, "m": CORE, "x": CORE},
                    [("s", "m", 250), ("m", "d", 250), ("s", "x", 250), ("x", "d", 250)])


@pytest.fixture
def pair():
    """Two edge switches, direct link plus a one-node detour."""
    return Topology({"A": EDGE, "B": EDGE, "C": CORE},
                    [("A", "B", 1), ("A", "C", 1), ("C", "B", 1)])


# acceptance criteria: clause results grouped into one summary line each
_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    def record(number, title, clause, ok, detail=""):
        entry = _CRITERIA.setdefault(number, {"title": title, "clauses": []})
        entry["clauses"].append((clause, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        ok = all(c[1] for c in entry["clauses"])
        parts = "; ".join(f"{name} {'PASS' if good else 'FAIL'}" + (f" ({detail})" if detail else "")
                          for name, good, detail in entry["clauses"])
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number}. {entry['title']}: {parts}")
