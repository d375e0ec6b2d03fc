import json

import pytest
from hypothesis import given, strategies as st

from arratia_chaos.verify import (SUITES, BudgetError, Stat, TestSpec, default_specs, judge, rejudge,
                                  report_csv, report_json, run_all, run_suite)


def test_every_criterion_has_a_suite():
    assert sorted(c for c, _ in SUITES.values()) == list(range(1, 15))
    assert [s.target for s in default_specs()] == list(SUITES)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 5), st.floats(0.1, 5))
def test_z_and_violate_are_complements(v, r, s, t):
    assert Stat("x", v, r, s, t, "z").passed != Stat("x", v, r, s, t, "violate").passed


def test_stat_kinds():
    assert Stat("a", 1.0, 1.2, 0, 0.5, "abs").passed
    assert not Stat("a", float("nan"), 0, 1, 3, "z").passed
    assert Stat("r", 4.0, 3.5, 0, 4.5, "range").passed
    assert not Stat("l", 2.0, 2.0, 0, 0, "lt").passed
    assert Stat("i", float("nan"), kind="info").passed


def test_expected_failure_judging():
    ok = [Stat("a", 0.0, 0.0, 1.0, 3.0)]
    assert judge(ok, True) == (True, "expected-failure confirmed")
    assert judge([Stat("a", 9.0, 0.0, 1.0, 3.0)], False) == (False, "fail")


def test_zero_kernel_gives_zero_and_passes():
    v = run_suite(TestSpec("zero", "j-isometry", {"zero_kernel": True}, N=50, M=32))
    moments = [s for s in v.stats if s.kind == "z"]
    assert moments and all(s.value == 0.0 and s.reference == 0.0 for s in moments)
    assert v.passed


def test_low_power_warning():
    v = run_suite(TestSpec("small", "triangle", {"u": [0.0, 2.0], "t": 1.0}, N=10, M=32))
    assert any("insufficient power" in w for w in v.warnings)


def test_budget_enforced():
    with pytest.raises(BudgetError):
        run_suite(TestSpec("b", "triangle", {"u": [0.0, 2.0], "t": 1.0}, N=2000, M=64, budget=0.0))


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite(TestSpec("x", "nosuch"))


def test_report_roundtrip_and_rejudge():
    specs = [TestSpec("t", "triangle", {"u": [0.0, 2.0], "t": 1.0}, N=2000, M=64),
             TestSpec("p", "pde-order", {"h0": 0.2, "levels": 3}, N=1, M=1)]
    rep = json.loads(report_json(run_all(specs, threads=1, config={"seed": 2024})))
    assert rep["schema"].startswith("arratia-chaos/verify-report/") and rep["config"] == {"seed": 2024}
    assert rejudge(rep)
    # a tampered pass flag is caught
    rep["verdicts"][0]["passed"] = not rep["verdicts"][0]["passed"]
    assert not rejudge(rep)
    lines = report_csv(rep).split("\r\n")
    assert lines[0].startswith("suite,criterion,statistic")


def test_same_seed_same_statistics():
    mk = lambda: run_suite(TestSpec("k", "coalescence-ks", {"u": [0.0, 1.0], "T": 4.0}, N=500, M=64))
    a, b = mk(), mk()
    assert [s.to_dict() for s in a.stats] == [s.to_dict() for s in b.stats]
