"""Acceptance criteria 1-14, one test each, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also echoed to the terminal summary.
"""
from __future__ import annotations

import filecmp
import json
import time

import pytest

from xilookdown import cli
from xilookdown.rng import as_seed
from xilookdown.verify import (
    SUITE_DEFAULTS,
    _check_cocycle,
    _check_commutation,
    _check_dust_table,
    _check_marked_plain,
    closed_form_test,
    equilibrium_test,
    negative_control_power,
    pair_event_rate_test,
    run_suite,
)
from xilookdown.xi_model import XiMeasure

LINES: list[str] = []


def record(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter.write_line("")
        reporter.write_line("acceptance summary")
        for line in sorted(LINES):
            reporter.write_line(line)


def stats(reports) -> str:
    return ", ".join(f"{r.name}/{c.name}={c.statistic:.3g}" for r in reports for c in r.criteria)


def test_criterion_01_commutation():
    t0 = time.perf_counter()
    rep = _check_commutation({"instances": 1000, "max_n": 10}, as_seed(1).child(1))
    dt = time.perf_counter() - t0
    err = rep.criteria[0].statistic
    record(1, rep.passed and err <= 1e-12 and dt < 1.0, f"max relative error {err:.2e} on 1000 instances, {dt:.2f} s")


def test_criterion_02_cocycle():
    cfg = dict(SUITE_DEFAULTS["algebra"]["cocycle"], n=50, triples=1000)
    t0 = time.perf_counter()
    rep = _check_cocycle(cfg, as_seed(1).child(2))
    dt = time.perf_counter() - t0
    bad = sum(c.statistic for c in rep.criteria)
    record(2, rep.passed and dt < 5.0, f"{bad:.0f} mismatches over 1000 Kingman and 1000 star triples, {dt:.2f} s")


def test_criterion_03_marked_plain():
    rep = _check_marked_plain({"n": 20, "horizon": 10.0, "runs": 5}, as_seed(1).child(3))
    err = rep.criteria[0].statistic
    record(3, rep.passed and err <= 1e-9, f"max |compose(R_t) - rho_t| = {err:.2e}")


def test_criterion_04_pair_event_rate():
    king = pair_event_rate_test(XiMeasure.kingman(), 100.0, 100, as_seed(4).child(1))
    other = XiMeasure.from_atoms([(0.5, [0.5])], kingman=1.0)
    assert other.total_mass == 1.5
    mixed = pair_event_rate_test(other, 100.0, 100, as_seed(4).child(2))
    assert "[70, 130]" in king.criteria[0].rule
    record(4, king.passed and mixed.passed,
           f"in-band fraction {king.criteria[0].statistic:.2f} (mass 1) and {mixed.criteria[0].statistic:.2f} (mass 1.5)")


def test_criterion_05_closed_form_law():
    t0 = time.perf_counter()
    rep = closed_form_test([0.1, 0.5, 1.0, 2.0], 10_000, as_seed(5))
    dt = time.perf_counter() - t0
    control = negative_control_power(20, 10_000, as_seed(5).child(1))
    power = control.criteria[0].statistic
    record(5, rep.passed and dt < 10.0 and control.passed,
           f"{stats([rep])}; {dt:.2f} s; control power {power:.2f}")


def test_criterion_06_martingale_residual():
    reps = run_suite("martingale", {}, 6)
    z = max(abs(c.statistic) / c.se for r in reps for c in r.criteria)
    record(6, all(r.passed for r in reps) and len(reps) == 4, f"max |residual|/SE = {z:.2f} over 4 test functions")


def test_criterion_07_duality():
    reps = run_suite("duality", {}, 7)
    z = max(abs(c.statistic) / c.se for r in reps for c in r.criteria)
    record(7, all(r.passed for r in reps) and len(reps) == 4, f"max |forward - dual|/SE = {z:.2f} over 4 cases")


def test_criterion_08_equilibrium():
    rep = equilibrium_test(10_000, as_seed(8))
    record(8, rep.passed, stats([rep]))


@pytest.fixture(scope="module")
def distance_reports():
    return {r.name: r for r in run_suite("distances", {}, 9)}


def test_criterion_09_solver_oracles(distance_reports):
    reps = [distance_reports["prohorov_oracle"], distance_reports["relation_oracle"]]
    record(9, all(r.passed for r in reps), stats(reps))


def test_criterion_10_lipschitz(distance_reports):
    rep = distance_reports["lipschitz"]
    record(10, rep.passed, f"max excess over the bound {rep.criteria[0].statistic:.2e} on 200 pairs")


def test_criterion_11_jump_classification():
    reps = run_suite("jumps", {}, 11)
    bad = sum(c.statistic for r in reps for c in r.criteria)
    record(11, all(r.passed for r in reps), f"{bad:.0f} violated set relations over 2 x 100 runs")


def test_criterion_12_dust_branches():
    reps = run_suite("dust-branches", {}, 12)
    crit = {c.name: c for c in reps[0].criteria}
    medians = crit["strict_fraction_median"].detail.get("medians")
    record(12, reps[0].passed,
           f"{crit['inequality_violations'].statistic:.0f} violations; strict-fraction medians {medians}")


def test_criterion_13_dust_table():
    rep = _check_dust_table()
    record(13, rep.passed, f"{rep.criteria[0].statistic:.0f} misclassified of {rep.criteria[0].detail['cases']}")


def _run_cli(argv):
    code = cli.main(argv)
    assert code == 0, argv
    return code


def test_criterion_14_determinism(tmp_path):
    sim = tmp_path / "sim.json"
    sim.write_text(json.dumps({"model": {"atoms": [{"w": 1.0, "x": [0.5]}]}, "n": 5,
                               "horizon": 2.0, "replicates": 16, "times": [0.5, 1.0, 2.0],
                               "representation": "marked", "scope": "touches_level", "record_path": True}))
    ver = tmp_path / "ver.json"
    ver.write_text(json.dumps({"runs": 20, "replicates": 2000, "control_runs": 0}))
    dirs = {}
    for threads in (1, 4):
        for run in (0, 1):
            out = tmp_path / f"t{threads}_r{run}"
            _run_cli(["simulate", "--config", str(sim), "--seed", "7", "--threads", str(threads),
                      "--out", str(out / "sim")])
            _run_cli(["verify", "kingman-law", "--config", str(ver), "--seed", "3", "--threads", str(threads),
                      "--out", str(out / "ver")])
            dirs[threads, run] = out
    ref = dirs[1, 0]
    files = sorted(p.relative_to(ref) for p in ref.rglob("*") if p.is_file())
    same = True
    for key, d in dirs.items():
        other = sorted(p.relative_to(d) for p in d.rglob("*") if p.is_file())
        _, mismatch, errors = filecmp.cmpfiles(ref, d, [str(f) for f in files], shallow=False)
        same &= other == files and not mismatch and not errors
    record(14, same and len(files) > 50, f"{len(files)} files identical across 2 runs x threads {{1, 4}}")
