import pytest

from otlab.errors import OTLabError
from otlab.selftest import SUITES, Check, run_suites


def test_check_line():
    assert Check("tau-slope", True, "slope -2.000").line() == "PASS tau-slope: slope -2.000"
    assert Check("renyi-bound", False, "D = 9").line() == "FAIL renyi-bound: D = 9"


@pytest.mark.parametrize("suite", ["rigidity", "fold", "density"])
def test_quick_suites_pass(suite):
    checks = run_suites([suite], quick=True)
    assert checks
    assert all(c.passed for c in checks), [c.line() for c in checks if not c.passed]


def test_unknown_suite():
    with pytest.raises(OTLabError) as exc:
        run_suites(["everything"])
    assert exc.value.code == "bad-config"


def test_raising_suite_becomes_a_failed_check(monkeypatch):
    def broken(quick):
        raise OTLabError("solver-failed", "network simplex stalled")

    monkeypatch.setitem(SUITES, "broken", broken)
    checks = run_suites(["broken"], quick=True)
    assert checks == [Check("broken", False, "solver-failed: network simplex stalled")]
