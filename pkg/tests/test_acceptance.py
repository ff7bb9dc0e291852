"""The twelve acceptance criteria at their stated sizes and tolerances.

The battery runs once (full profile, seed 0); each criterion is then its own
test and prints a single PASS/FAIL line with its headline metrics.
"""

import json
import sys
import time

import pytest

from brwtraps.experiments import ExperimentSpec
from brwtraps.verify import CRITERIA, PROFILES, check_golden

from conftest import ACCEPTANCE_LINES

TITLES = {
    1: "many-to-one identity",
    2: "MRCA pair law",
    3: "confined-walk spectral consistency",
    4: "continuum eigenvalue trend",
    5: "model constants",
    6: "accounting identity",
    7: "two-colored equivalence",
    8: "variance machinery",
    9: "survival positivity",
    10: "clearing scaling",
    11: "LLN diagnostic trend",
    12: "determinism",
}


@pytest.fixture(scope="module")
def battery():
    cfg = PROFILES["full"]
    seed = ExperimentSpec(profile="full").seed
    out = {}
    for c in sorted(CRITERIA):
        t0 = time.perf_counter()
        try:
            out[c] = (CRITERIA[c](cfg, seed), time.perf_counter() - t0)
        except Exception as exc:  # reported as a failure of that criterion only
            out[c] = (exc, time.perf_counter() - t0)
    return out


def _summary(metrics: dict) -> str:
    text = json.dumps(metrics, default=str)
    return text if len(text) <= 160 else text[:157] + "..."


@pytest.mark.slow
@pytest.mark.parametrize("criterion", sorted(TITLES))
def test_criterion(battery, criterion, capsys):
    res, secs = battery[criterion]
    if isinstance(res, Exception):
        line = f"ACCEPTANCE {criterion:>2} FAIL  {TITLES[criterion]} ({secs:.1f}s): {type(res).__name__}: {res}"
        passed, detail = False, line
    else:
        passed = res.passed
        line = f"ACCEPTANCE {criterion:>2} {'PASS' if passed else 'FAIL'}  {TITLES[criterion]} ({secs:.1f}s) {_summary(res.metrics)}"
        detail = f"{res.detail}\n{json.dumps(res.metrics, indent=1, default=str)}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        sys.stdout.write("\n" + line + "\n")
    assert passed, detail


def test_golden_files():
    res = check_golden()
    assert res.passed, res.metrics["problems"]
