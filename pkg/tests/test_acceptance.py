"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Every criterion runs the matching subcommand at its default (reference)
configuration and checks the verdicts it records. Runtime bounds are checked
against the wall time of the subcommand run. A subcommand that serves several
criteria is held to the largest of their bounds, except where a criterion's
own work is timed separately.
"""
import functools
import os
import time

import numpy as np
import pytest

from wienerou import basis
from wienerou.config import COMMANDS, build_config
from wienerou.experiments import run
from wienerou.records import write_record

# criterion -> (subcommand, metric-name prefixes, runtime bound in seconds)
CRITERIA = {
    1: ("simulate-paths", ("basis.",), 30),
    2: ("simulate-paths", ("ou_law.",), 30),
    3: ("qv-partition", ("qv.",), 300),
    4: ("qv-regularized", ("reg.",), 300),
    5: ("tensor-qv", ("tensor.",), 600),
    6: ("qv-partition", ("za.",), 300),
    7: ("mehler-check", ("mehler.",), 120),
    8: ("generator-check", ("generator.",), 60),
    9: ("approx-check", ("findim.",), 60),
    10: ("ito-check", ("ito.",), 180),
    11: ("moment-scan", ("slope",), 300),
    12: ("evt-norming", ("norming.", "lambda_bound."), 60),
    13: ("evt-gumbel", ("gumbel.",), 300),
    14: ("evt-moments", ("max_moment.", "gauss_max."), 300),
}


def _basis_seconds():
    # criterion 1 has its own 1 s bound; time the basis work of simulate-paths alone
    grid = basis.DyadicGrid(8)
    start = time.perf_counter()
    gram = basis.haar_gram(128)
    assert np.abs(gram - np.eye(128)).max() <= 1e-12
    coeffs = np.random.default_rng(0).standard_normal(128)
    vals = basis.synthesize(coeffs[None, :], grid, 1)[0]
    assert np.abs(basis.pair_all(vals, grid, 128, 1) - coeffs).max() <= 1e-12
    return time.perf_counter() - start


# criteria whose runtime bound is tighter than that of the subcommand serving them
OWN_TIMERS = {1: (_basis_seconds, 1.0)}


@functools.lru_cache(maxsize=None)
def _run(command, workers):
    cfg = build_config({"experiment": command}, {"workers": workers})
    start = time.perf_counter()
    rec = run(cfg)
    return rec, time.perf_counter() - start


def _report(capsys, num, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.mark.parametrize("num", sorted(CRITERIA))
def test_criterion(num, capsys):
    command, prefixes, bound = CRITERIA[num]
    rec, elapsed = _run(command, 1)
    if num in OWN_TIMERS:
        timer, bound = OWN_TIMERS[num]
        elapsed = timer()
    checks = [m for m in rec.metrics if m.verdict != "info" and m.name.startswith(prefixes)]
    failed = [m for m in checks if m.verdict != "pass"]
    ok = bool(checks) and not failed and elapsed < bound
    detail = f"{command}: {len(checks) - len(failed)}/{len(checks)} checks, {elapsed:.1f}s"
    if failed:
        detail += "; failed " + ", ".join(f"{m.name}={m.value:.6g}" for m in failed)
    _report(capsys, num, ok, detail)
    assert checks, f"no checks recorded for criterion {num}"
    assert not failed, detail
    assert elapsed < bound, detail


def _csv_bytes(rec, out):
    path = write_record(rec, out)
    return {f: open(os.path.join(path, f), "rb").read()
            for f in sorted(os.listdir(path)) if f.endswith(".csv")}


def test_criterion_15_worker_invariance(tmp_path, capsys):
    differ = []
    for command in COMMANDS:
        one = _csv_bytes(_run(command, 1)[0], tmp_path / "w1" / command)
        eight = _csv_bytes(_run(command, 8)[0], tmp_path / "w8" / command)
        if one != eight:
            differ.append(command)
    ok = not differ
    detail = f"{len(COMMANDS) - len(differ)}/{len(COMMANDS)} subcommands bit-identical"
    if differ:
        detail += "; differ: " + ", ".join(differ)
    _report(capsys, 15, ok, detail)
    assert ok, detail
