"""Acceptance gate: one PASS/FAIL line per criterion with measured values.

Tolerances are fixed by the acceptance criteria and must not be relaxed.
The figure-trend sweeps take tens of minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from helpers import random_subproblem
from robust_urllc.fbl import fbl_curve, q_function, q_inverse
from robust_urllc.harness import (SweepSpec, desk_probe_config, emit, run_convergence_probe, run_sweep,
                                  sweep_csv_text)
from robust_urllc.model import check_feasible, total_power
from robust_urllc.oracle import exhaustive_solve
from robust_urllc.sca import run
from robust_urllc.scenario import generate_instance, uniform_config
from robust_urllc.subproblem import perspective_rate, solve, taylor_sqrt_bound


def report(n, ok, text):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def bisect_q_inverse(eps):
    """Independent oracle: bisection on the Gaussian tail."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(mid / math.sqrt(2)) > eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_1_q_inverse():
    t0 = time.perf_counter()
    errs = [abs(q_function(q_inverse(e)) - e) / e for e in (1e-9, 1e-6, 1e-3, 0.1, 0.4)]
    x = q_inverse(1e-6)
    dt = time.perf_counter() - t0
    ok = max(errs) <= 1e-9 and abs(x - 4.753424) <= 1e-6 and abs(x - bisect_q_inverse(1e-6)) <= 1e-9 and dt < 1
    assert report(1, ok, f"max rel err {max(errs):.2e}, q_inverse(1e-6)={x:.7f}, {dt:.3f}s")


def test_criterion_2_fbl_curve():
    t0 = time.perf_counter()
    snr_db = np.linspace(0.0, 20.0, 81)
    exact, approx = fbl_curve(snr_db, 120, 1e-6)
    gap = (exact - approx) / exact
    dt = time.perf_counter() - t0
    above = snr_db >= 3.0
    ok = (np.all(exact >= approx) and np.all(gap[above] < gap[0]) and np.all(np.diff(gap[above]) < 0)
          and dt < 1)
    assert report(2, ok, f"rel gap {gap[0]:.4f} at 0 dB, {gap[snr_db == 3.0][0]:.4f} at 3 dB, "
                         f"{gap[-1]:.2e} at 20 dB, {dt:.3f}s")


def test_criterion_3_oracle():
    t0 = time.perf_counter()
    feasible = close = dominated = 0
    misses = []
    for seed in range(50):
        inst = generate_instance(uniform_config(2, 2, [2, 2], payload_bits=10.0, error_prob=1e-3,
                                                distance_m=100.0, p_max_dbm=23.0, rng_seed=seed))
        orc = exhaustive_solve(inst)
        out = run(inst)
        if orc.best_p_tot > out.p_tot + 1e-8:
            dominated += 1
        if orc.feasible_found:
            feasible += 1
            if out.status == "converged" and out.p_tot <= 1.05 * orc.best_p_tot:
                close += 1
            else:
                misses.append((seed, out.status, out.p_tot / orc.best_p_tot))
    dt = time.perf_counter() - t0
    share = close / feasible if feasible else 0.0
    ok = dominated == 0 and feasible > 0 and share >= 0.9 and dt < 120
    assert report(3, ok, f"{feasible}/50 feasible, {close} within 5% ({share:.1%}), "
                         f"{dominated} oracle violations, misses {misses}, {dt:.1f}s")


# -- figure-trend sweeps (shared with criterion 4) --------------------------

TRIALS = 20


def _fig2(B, delta):
    return uniform_config(8, 6, [3, 4, 4, 6], payload_bits=B, error_prob=1e-6, error_bound=delta,
                          p_max_dbm=23.0)


TREND_SWEEPS = {
    # label: (spec, direction)
    "B at delta=0.01": (SweepSpec(_fig2(10.0, 0.01), "payload_B", [10, 20, 30], TRIALS), +1),
    "B at delta=0.05": (SweepSpec(_fig2(10.0, 0.05), "payload_B", [10, 20, 30], TRIALS), +1),
    "B at delta=0.1": (SweepSpec(_fig2(10.0, 0.1), "payload_B", [10, 20, 30], TRIALS), +1),
    "K at B=20": (SweepSpec(uniform_config(8, 4, [2, 4], payload_bits=20.0, error_prob=1e-6, error_bound=0.01,
                                           p_max_dbm=38.0), "num_users_K", [2, 3, 4, 5, 6], TRIALS), +1),
    "D1 at B=10": (SweepSpec(uniform_config(8, 6, [1, 4, 4, 6], payload_bits=10.0, error_prob=1e-6,
                                            error_bound=0.01, p_max_dbm=23.0), "deadline_D1",
                             [1, 2, 3, 4, 5, 6], TRIALS), -1),
    "eps at B=20": (SweepSpec(uniform_config(8, 6, [3, 4, 4, 6], payload_bits=20.0, error_prob=1e-6,
                                             error_bound=0.01, p_max_dbm=32.0), "error_prob_eps",
                              [1e-7, 1e-6, 1e-5, 1e-4], TRIALS), -1),
}


@pytest.fixture(scope="module")
def trend_results():
    out = {}
    for label, (spec, _) in TREND_SWEEPS.items():
        t0 = time.perf_counter()
        res = run_sweep(spec)
        out[label] = (res, time.perf_counter() - t0)
    return out


def test_criterion_4_algorithm_contract(trend_results):
    t0 = time.perf_counter()
    broken = []
    slowest = 0.0
    for seed in range(10):
        for cfg in (_fig2(30.0, 0.01), uniform_config(8, 4, [2, 4, 4, 4, 4, 4], payload_bits=20.0, error_prob=1e-6,
                                                     error_bound=0.01, p_max_dbm=38.0)):
            inst = generate_instance(cfg.with_seed(seed))
            s0 = time.perf_counter()
            out = run(inst)
            slowest = max(slowest, time.perf_counter() - s0)
            if out.status != "converged":
                continue
            if not (out.trace[-1]["delta"] < 1e-6 and check_feasible(inst, out.schedule).feasible
                    and abs(total_power(out.schedule) - out.p_tot) <= 1e-6 * max(out.p_tot, 1e-300)):
                broken.append(seed)
    probe = run_convergence_probe(desk_probe_config(0))
    # convergence share over every desk-scale trial of the trend sweeps; a
    # trial counts as a run only when its instance admitted a start
    trials = [t for res, _ in trend_results.values() for t in res.trials]
    runs = [t for t in trials if t.status != "infeasible" or t.iterations > 0]
    conv = sum(t.status == "converged" and t.iterations <= 200 for t in runs)
    slowest = max([slowest] + [t.seconds for t in trials])
    share = conv / len(runs)
    ok = (not broken and probe.status == "converged" and len(probe.rows) <= 200 and share >= 0.95
          and slowest < 30)
    assert report(4, ok, f"contract broken on {broken}, probe {probe.status} in {len(probe.rows)} iterations, "
                         f"{conv}/{len(runs)} desk runs converged within 200 ({share:.1%}), "
                         f"slowest solve {slowest:.1f}s, {time.perf_counter() - t0:.0f}s")


def test_criterion_5_figure_trends(trend_results):
    lines = []
    ok = True
    for label, (spec, direction) in TREND_SWEEPS.items():
        res, dt = trend_results[label]
        m = res.means()
        steps = np.diff(m) * direction
        good = bool(np.all(np.isfinite(m)) and np.all(steps >= 0) and dt < 600)
        ok &= good
        cells = ", ".join(f"{r.value}:{r.mean_p_tot:.4g}W/{r.infeasible}inf" for r in res.rows)
        lines.append(f"{label} {'ok' if good else 'BROKEN'} [{cells}] {dt:.0f}s")
    # the delta direction at each payload, read across the three B sweeps
    d = np.array([trend_results[f"B at delta={x}"][0].means() for x in ("0.01", "0.05", "0.1")])
    delta_ok = bool(np.all(np.isfinite(d)) and np.all(np.diff(d, axis=0) >= 0))
    ok &= delta_ok
    lines.append(f"delta at each B {'ok' if delta_ok else 'BROKEN'} {np.round(d, 4).tolist()}")
    assert report(5, ok, "; ".join(lines))


def test_criterion_6_subproblem():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    n_opt = 0
    for _ in range(100):
        sol = solve(random_subproblem(rng))
        if sol.status == "optimal":
            n_opt += 1
            worst = max(worst, sol.kkt_residual)
    n = 10_000
    I1, I2 = rng.uniform(1e-6, 1, n), rng.uniform(1e-6, 1, n)
    p1, p2 = rng.uniform(0, 5, n) * I1, rng.uniform(0, 5, n) * I2
    c = 10 ** rng.uniform(-2, 4, n)
    mid = perspective_rate((I1 + I2) / 2, (p1 + p2) / 2, c)
    avg = (perspective_rate(I1, p1, c) + perspective_rate(I2, p2, c)) / 2
    concave = int(np.sum(mid >= avg - 1e-12 * (1 + np.abs(avg))))
    x = np.linspace(0, 100, 1000)
    dominated = all(np.all(np.sqrt(x) <= taylor_sqrt_bound(x, x0) + 1e-15) for x0 in (0.1, 1.0, 7.0, 50.0))
    dt = time.perf_counter() - t0
    ok = n_opt > 0 and worst <= 1e-8 and concave == n and dominated and dt < 60
    assert report(6, ok, f"{n_opt}/100 optimal, max KKT {worst:.1e}, concavity {concave}/{n}, "
                         f"Taylor dominance {dominated}, {dt:.1f}s")


def test_criterion_7_determinism(tmp_path):
    spec = SweepSpec(uniform_config(4, 3, [2, 3, 3], payload_bits=10.0, error_prob=1e-5, distance_m=150.0,
                                    p_max_dbm=30.0, rng_seed=11), "payload_B", [5.0, 10.0], 3)
    emit(run_sweep(spec), tmp_path / "a", png=False)
    emit(run_sweep(spec), tmp_path / "b", png=False)
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    b = (tmp_path / "b" / "sweep.csv").read_bytes()
    assert report(7, a == b and len(a.splitlines()) == 3, f"{len(a)} bytes, identical={a == b}")
