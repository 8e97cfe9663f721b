"""Acceptance criteria 1 to 12, one test each.

The full suite runs once per session (a few minutes on one core).  Each test
records a pass/fail line; conftest prints them in the terminal summary, and
running this file as a script prints them directly.
"""

import pytest

from fbilab import lab

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from another directory
    ACCEPTANCE_LINES = {}


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    reports, log = {}, []
    table = lab.run_suite(out, seed=0, reports=reports, log=log.append)
    return table, reports, out, log


def _detail(rep, k):
    return "; ".join(f"{c.label} = {c.value:.4g} [{'ok' if c.passed else 'FAIL'}]"
                     for c in rep.checks if c.criterion == k)


def _check(suite, k):
    table, reports, _, _ = suite
    name = lab.CRITERIA[k]
    rep, err = reports[name]
    ok = table[k]
    detail = err if rep is None else _detail(rep, k)
    line = f"criterion {k:2d} ({name}): {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    assert ok, line


@pytest.mark.slow
@pytest.mark.parametrize("k", range(1, 12))
def test_criterion(suite, k):
    _check(suite, k)


@pytest.mark.slow
def test_criterion_12_harness(suite):
    table, _, out, log = suite
    rows = (out / "suite.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "criterion,experiment,pass"
    assert [int(r.split(",")[0]) for r in rows[1:]] == list(range(1, 13))
    assert sum(line.startswith("criterion ") for line in log) == 12
    same, msg = lab.harness_check(seed=0)
    ok = table[12] and same
    line = f"criterion 12 (harness): {'PASS' if ok else 'FAIL'}: CSV {msg}, suite table with 12 rows"
    ACCEPTANCE_LINES[12] = line
    print(line)
    assert ok, line


if __name__ == "__main__":
    import sys

    sys.exit(0 if all(lab.run_suite().values()) else 1)
