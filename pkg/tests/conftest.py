import pytest
from hypothesis import settings

from otdc.dist import CIConstraint, Schema

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

D1 = [(0, 0, 1), (1, 0, 1), (0, 1, 1), (0, 1, 0)]
D2 = [(1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 0)]
D2_HAT = [(1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1)]


@pytest.fixture
def xyz():
    return Schema.from_domains({"X": [0, 1], "Y": [0, 1], "Z": [0, 1]})


@pytest.fixture
def y_indep_z():
    return CIConstraint(("Y",), ("Z",))


# one summary line per acceptance criterion -------------------------------

_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _criteria[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[1][2:])):
        verdict = "PASS" if _criteria[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
