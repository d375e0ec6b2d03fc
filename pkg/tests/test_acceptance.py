"""Exit criteria 1-14 at the preregistered sizes.

Runs every verification suite once (about 15 minutes on one core) and
prints one pass/fail line per criterion.  ARRATIA_ACCEPTANCE_SCALE scales
the path counts, ARRATIA_ACCEPTANCE_SEED changes the master seed.  Run
directly with ``python tests/test_acceptance.py`` for the lines alone.
"""
import os
import sys

import pytest

from arratia_chaos.verify import SUITES, default_specs, rejudge, run_all

SEED = int(os.environ.get("ARRATIA_ACCEPTANCE_SEED", "2024"))
SCALE = float(os.environ.get("ARRATIA_ACCEPTANCE_SCALE", "1.0"))
THREADS = int(os.environ.get("ARRATIA_ACCEPTANCE_THREADS", str(os.cpu_count() or 1)))

LINES: list = []   # read by the terminal summary hook in conftest


def line(v: dict) -> str:
    bad = [s for s in v["stats"] if not s["passed"]]
    worst = bad[0] if bad else next((s for s in v["stats"] if s["kind"] != "info"), v["stats"][0])
    mark = "PASS" if v["passed"] else "FAIL"
    return (f"criterion {v['criterion']:2d} {mark}  {v['name']:<16} {v['status']:<28} "
            f"{worst['name']}: {worst['value']:.6g} ({worst['kind']} ref {worst['reference']:.6g}, "
            f"se {worst['stderr']:.3g}, thr {worst['threshold']:.3g})  {v['runtime']:.0f}s")


@pytest.fixture(scope="module")
def report():
    rep = run_all(default_specs(SEED, SCALE), THREADS, {"seed": SEED, "scale": SCALE})
    by_crit = {v["criterion"]: v for v in rep["verdicts"]}
    for c in sorted(by_crit):
        LINES.append(line(by_crit[c]))
    return rep, by_crit


pytestmark = pytest.mark.acceptance


def test_report_is_self_consistent(report):
    assert rejudge(report[0])


@pytest.mark.parametrize("criterion", sorted(c for c, _ in SUITES.values()))
def test_criterion(report, criterion):
    v = report[1][criterion]
    print(line(v))
    assert v["passed"], line(v)


if __name__ == "__main__":
    rep = run_all(default_specs(SEED, SCALE), THREADS)
    for v in sorted(rep["verdicts"], key=lambda v: v["criterion"]):
        print(line(v))
    sys.exit(0 if rep["passed"] else 1)
