"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Thresholds are applied exactly as stated; a failing criterion fails its test.
"""

import math
import time

import numpy as np
import pytest

from offsite_ucr.baselines import average_allocation, comm_only, freq_only, grid_oracle
from offsite_ucr.config_io import default_config
from offsite_ucr.cost_model import (RETENTION_LEVELS, constraint_violations, evaluate,
                                    retention_upper_bound, secrecy_rate, select_retention)
from offsite_ucr.harness import SweepSpec, run_sweep
from offsite_ucr.scenario import UserConfig
from offsite_ucr.solver import (certificate, dinkelbach_solve, fp_transformed_energy,
                                secrecy_rate_partials, update_fp_aux)

from conftest import (fd_secrecy_partials, make_scenario, published_system,
                      random_allocation, reference_metrics, rel)

CONVERGENCE_SEEDS = 100
ORACLE_SEEDS = 50
LADDER_SEEDS = 30
TREND_SEEDS = 20

_cache = {}


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def _convergence_runs():
    """Joint solves on 100 scenarios, N cycling through 2, 5, 10 (shared by 1, 3, 7)."""
    if "conv" not in _cache:
        t0 = time.perf_counter()
        runs = [dinkelbach_solve(make_scenario((2, 5, 10)[i % 3], seed=i))
                for i in range(CONVERGENCE_SEEDS)]
        _cache["conv"] = (runs, time.perf_counter() - t0)
    return _cache["conv"]


def _ladder_runs():
    if "ladder" not in _cache:
        rows = []
        for i in range(LADDER_SEEDS):
            sc = make_scenario((2, 5, 10)[i % 3], seed=500 + i)
            rows.append((dinkelbach_solve(sc), comm_only(sc), freq_only(sc),
                         evaluate(sc, average_allocation(sc)).ucr))
        _cache["ladder"] = rows
    return _cache["ladder"]


def _oracle_runs():
    if "oracle" not in _cache:
        t0 = time.perf_counter()
        rows = []
        for seed in range(ORACLE_SEEDS):
            sc = make_scenario(2, seed=seed)
            _, best = grid_oracle(sc, 8)
            rows.append((dinkelbach_solve(sc), best))
        _cache["oracle"] = (rows, time.perf_counter() - t0)
    return _cache["oracle"]


# ---------------------------------------------------------------- 1

def test_criterion_1_monotone_convergence(capsys):
    runs, elapsed = _convergence_runs()
    monotone = all(np.all(np.diff(r.trace.y) >= -1e-9) for r in runs)

    def settled(r):
        y = r.trace.y
        steps = np.abs(np.diff(y)) < 1e-6 * np.abs(y[1:])
        return bool(np.any(steps[:50]))

    frac = np.mean([settled(r) for r in runs])
    ok = monotone and frac >= 0.95 and elapsed <= 60.0
    report(capsys, 1, ok, f"monotone={monotone} converged={frac:.2%} time={elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2

def test_criterion_2_oracle_near_optimality(capsys):
    rows, elapsed = _oracle_runs()
    ratios = np.array([r.ucr / best for r, best in rows])
    frac = np.mean(ratios >= 0.95)
    ok = frac >= 0.95 and elapsed <= 600.0
    report(capsys, 2, ok, f"ratio>=0.95 on {frac:.2%} min={ratios.min():.4f} "
                          f"time={elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_3_kkt_certificate(capsys):
    results = list(_convergence_runs()[0])
    results += [r for row in _ladder_runs() for r in row[:3]]
    results += [r for r, _ in _oracle_runs()[0]]
    worst = {}
    bad = 0
    for r in results:
        c = certificate(r)
        fail = (c["violations"] or c["min_multiplier"] < 0 or c["rho_sum_gap"] > 1e-8
                or any(c[k] > 1e-6 for k in ("alpha_slack", "beta_slack", "delta_slack",
                                             "zeta_slack", "rho_slack", "delay_excess")))
        bad += bool(fail)
        for k, v in c.items():
            if k != "violations":
                worst[k] = max(worst.get(k, -math.inf), -v if k == "min_multiplier" else v)
    ok = bad == 0
    summary = " ".join(f"{k}={v:.2g}" for k, v in worst.items())
    report(capsys, 3, ok, f"{len(results)} solutions, {bad} failing; worst {summary}")
    assert ok


# ---------------------------------------------------------------- 4

def test_criterion_4_dominance_ladder(capsys):
    broken = []
    for i, (joint, co, fo, avg) in enumerate(_ladder_runs()):
        j, c, f = joint.ucr, co.ucr, fo.ucr
        if not (j >= c - 1e-9 and c >= avg - 1e-9 and j >= f - 1e-9 and f >= avg - 1e-9):
            broken.append(i)
    ok = not broken
    report(capsys, 4, ok, f"{LADDER_SEEDS} seeds, broken at {broken}")
    assert ok


# ---------------------------------------------------------------- 5

def _trend_line(name, means, direction):
    d = np.diff(means)
    ok = bool(np.all(d <= 0) if direction == "down" else np.all(d >= 0))
    worst = float(d.max() if direction == "down" else -d.min()) / float(np.abs(means).max())
    return ok, (f"{name} {'ok' if ok else 'BROKEN'} {np.array2string(means, precision=5)} "
                f"worst step against trend {max(worst, 0.0):.2e} relative")


TRENDS = {
    "N": ("user_count", (5, 10, 15, 20), "ucr", "down"),
    "p_max": ("power_max", (0.5, 1, 2, 3, 4, 5), "ucr", "up"),
    "f_user_max": ("user_freq_max", (2e9, 4e9, 6e9, 8e9), "ucr", "up"),
    "f_server_max": ("server_freq_max", (40e9, 80e9, 120e9, 160e9), "ucr", "up"),
    "c_e energy": ("cost_weights", (0.1, 0.3, 0.5, 0.7, 0.9), "total_energy", "down"),
    "c_e time": ("cost_weights", (0.1, 0.3, 0.5, 0.7, 0.9), "system_delay", "up"),
}


def _trend_results():
    if "trend" not in _cache:
        out = {}
        sweeps = {}
        for name, (var, values, column, direction) in TRENDS.items():
            key = (var, values)
            if key not in sweeps:
                spec = SweepSpec(var, list(values), seeds_per_point=TREND_SEEDS)
                sweeps[key] = run_sweep(None, spec, None, master_seed=0,
                                        config=default_config())
            recs = sweeps[key]
            means = np.array([np.mean([getattr(r, column) for r in recs
                                       if r.value == v and r.status == "ok"])
                              for v in values])
            out[name] = _trend_line(name, means, direction)
        _cache["trend"] = out
    return _cache["trend"]


@pytest.mark.parametrize("name", list(TRENDS))
def test_criterion_5_trend(name, capsys):
    ok, line = _trend_results()[name]
    report(capsys, f"5 [{name}]", ok, line)
    assert ok


# ---------------------------------------------------------------- 6

def test_criterion_6_micro_oracles(capsys):
    rng = np.random.default_rng(6)
    worst_sca, worst_fp, points = 0.0, 0.0, 0
    seed = 0
    while points < 1000:
        sc = make_scenario(5, seed=seed)
        seed += 1
        s = sc.system
        a = random_allocation(sc, rng)
        d_b, d_p = secrecy_rate_partials(a.bandwidth, a.power, sc.gain, sc.gain_eve,
                                         s.noise_psd_server, s.noise_psd_eve)
        for n in range(sc.n):
            fd_b, fd_p = fd_secrecy_partials(a.bandwidth[n], a.power[n], sc.gain[n],
                                             sc.gain_eve[n], s.noise_psd_server,
                                             s.noise_psd_eve)
            worst_sca = max(worst_sca, rel(d_b[n], fd_b), rel(d_p[n], fd_p))
        r = secrecy_rate(a.bandwidth, a.power, sc.gain, sc.gain_eve, s.noise_psd_server,
                         s.noise_psd_eve)
        bits = a.phi * s.payload_bits_per_unit_phi
        x = update_fp_aux(sc, a)
        e_com = a.power * bits / r
        worst_fp = max(worst_fp, float(np.max(np.abs(fp_transformed_energy(a.power, bits, r, x)
                                                      - e_com) / e_com)))
        points += sc.n

    g = 10 ** rng.uniform(-14, -8, 1000)
    sym = secrecy_rate(10 ** rng.uniform(3, 8, 1000), 10 ** rng.uniform(-6, 1, 1000), g, g,
                       4e-21, 4e-21)
    sym_zero = bool(np.all(sym == 0.0))

    worst_eval = 0.0
    for i in range(100):
        sc = make_scenario(1 + i % 6, seed=2000 + i)
        a = random_allocation(sc, rng)
        bd = evaluate(sc, a, check=False)
        ref = reference_metrics(sc, a.bandwidth, a.power, a.phi, a.freq_user, a.freq_server)
        worst_eval = max(worst_eval, rel(bd.ucr, ref["ucr"]), rel(bd.total_energy, ref["energy"]),
                         rel(bd.system_delay, ref["delay"]),
                         rel(bd.system_utility, ref["utility"]))

    ok = worst_sca <= 1e-5 and worst_fp <= 1e-12 and sym_zero and worst_eval <= 1e-12
    report(capsys, 6, ok, f"sca={worst_sca:.2e} on {points} points, fp={worst_fp:.2e}, "
                          f"symmetric_zero={sym_zero}, evaluate={worst_eval:.2e}")
    assert ok


# ---------------------------------------------------------------- 7

def test_criterion_7_retention(capsys):
    system = published_system()
    on_ladder = True
    for phi in np.linspace(0.01, 1.0, 100):
        for e_min in (0.1, 0.3, 0.5, math.log(2), 1.0, 2.0):
            for loss in (0.05, 0.2, 0.5, 1.0):
                try:
                    c = select_retention(float(phi), UserConfig(efficiency_min=e_min,
                                                                loss_max=loss), system)
                except ValueError:
                    continue
                on_ladder &= c.retention_rate in RETENTION_LEVELS
    exact = all(retention_upper_bound(float(phi), math.log(2)) == float(phi)
                for phi in np.linspace(0.01, 1.0, 100))

    solves = [r for r in _convergence_runs()[0] if r.converged]
    holds = True
    for r in solves:
        for phi, ch, u in zip(r.allocation.phi, r.retention, r.scenario.users):
            holds &= math.log1p(phi / ch.retention_rate) >= u.efficiency_min * (1 - 1e-12)
        holds &= not constraint_violations(r.scenario, r.allocation, r.retention)
    ok = on_ladder and exact and holds
    report(capsys, 7, ok, f"ladder={on_ladder} upper_bound_exact={exact} "
                          f"efficiency_holds={holds} on {len(solves)} solves")
    assert ok
