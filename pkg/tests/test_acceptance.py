"""Acceptance suite: one test per headline criterion, each reporting a PASS/FAIL line."""

from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from iamkit import choice
from iamkit.emissions import electrification_share, power_intensity_series
from iamkit.feasibility import capacity_multiple, land_requirement, mac_integral, seoul_multiple
from iamkit.io import SCENARIO_DIR, SHIPPED_SCENARIOS, DATA_DIR, run_many
from iamkit.markets import initial_state, solve_period

NET_ZERO = ("nz2050", "nz2050_nuc", "nz2050_limccs")
SECTORS = ("industry", "buildings", "transport")


def report(n, ok, detail):
    ACCEPTANCE.append((n, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def test_criterion_1_cap_tracking(shipped_runs):
    worst, final = 0.0, []
    for name in NET_ZERO:
        run = shipped_runs[name]
        for y, binding in run.cap.binding.items():
            if binding:
                worst = max(worst, abs(run.ledger[y].net - run.cap[y]))
        final.append(run.ledger[2050].net)
    ok = worst <= 0.5 and all(-0.5 <= v <= 0.5 for v in final)
    report(1, ok, f"max |net - cap| {worst:.3f} Mt; 2050 net {[round(v, 3) for v in final]} Mt")


def test_criterion_2_policy_cost(shipped_runs):
    cost = {n: shipped_runs[n].feasibility.policy_cost[2050] for n in NET_ZERO}
    target = {"nz2050": 2.4, "nz2050_nuc": 1.7, "nz2050_limccs": 2.7}
    ok = (cost["nz2050_limccs"] > cost["nz2050"] > cost["nz2050_nuc"]
          and all(0.5 <= v <= 6.0 for v in cost.values())
          and all(abs(cost[n] - target[n]) <= 1.5 for n in NET_ZERO))
    report(2, ok, "2050 %GDP " + ", ".join(f"{n} {v:.2f}" for n, v in cost.items()))


def test_criterion_3_storage(shipped_runs):
    gt = {n: shipped_runs[n].feasibility.storage.cumulative_gt[2050] for n in NET_ZERO}
    ok = (gt["nz2050"] > gt["nz2050_nuc"] > gt["nz2050_limccs"]
          and 1.0 <= gt["nz2050"] <= 2.5 and gt["nz2050_limccs"] < 1.0)
    report(3, ok, "cumulative GtCO2 " + ", ".join(f"{n} {v:.2f}" for n, v in gt.items()))


def coal_output(sol):
    return sum(v for t, v in sol.tech_output.items() if t.startswith("coal"))


def test_criterion_4_coal_exit(shipped_runs):
    late = {n: max(coal_output(shipped_runs[n].solutions[y]) for y in (2040, 2045, 2050))
            for n in NET_ZERO}
    cur = shipped_runs["curpol"].solutions
    share35 = coal_output(cur[2035]) / cur[2035].generation
    ok = all(v == 0 for v in late.values()) and coal_output(cur[2050]) == 0 and share35 <= 0.20
    report(4, ok, f"net-zero coal 2040+ {late}; CurPol 2050 {coal_output(cur[2050]):.3g} EJ; "
                  f"CurPol 2035 share {share35:.3f}")


def test_criterion_5_power_intensity(shipped_runs):
    ci = {n: power_intensity_series(r.solutions.values(), r.ledger) for n, r in shipped_runs.items()}
    nz = {n: ci[n][2050] for n in NET_ZERO}
    decline = 1 - ci["curpol"][2050] / ci["curpol"][2020]
    ok = all(v <= 0 for v in nz.values()) and decline >= 0.5
    report(5, ok, "2050 gCO2/kWh " + ", ".join(f"{n} {v:.1f}" for n, v in nz.items())
           + f"; CurPol 2020-2050 decline {decline:.1%}")


def test_criterion_6_electrification(shipped_runs):
    share = {n: {s: electrification_share(shipped_runs[n].solutions[2050], s) for s in SECTORS}
             for n in shipped_runs}
    ok = True
    for s in SECTORS:
        nz = [share[n][s] for n in NET_ZERO]
        ok &= all(v > share["curpol"][s] for v in nz) and max(nz) - min(nz) <= 0.10
    detail = "; ".join(f"{s} CurPol {share['curpol'][s]:.2f} vs "
                       + "/".join(f"{share[n][s]:.2f}" for n in NET_ZERO) for s in SECTORS)
    report(6, ok, detail)


def test_criterion_7_expansion(shipped_runs):
    def mult(name, techs):
        cap = {y: sum(s.capacity.get(t, 0.0) for t in techs)
               for y, s in shipped_runs[name].solutions.items()}
        return capacity_multiple(cap, 2020, 2050)

    solar = {n: mult(n, ("solar",)) for n in NET_ZERO}
    wind = {n: mult(n, ("wind-on", "wind-off")) for n in NET_ZERO}
    ok = (solar["nz2050_limccs"] > solar["nz2050"] > solar["nz2050_nuc"]
          and all(v >= 5 for v in solar.values())
          and wind["nz2050_limccs"] > wind["nz2050"] > wind["nz2050_nuc"])
    report(7, ok, "solar x " + "/".join(f"{v:.1f}" for v in solar.values())
           + ", wind x " + "/".join(f"{v:.1f}" for v in wind.values()))


def test_criterion_8_potentials(shipped_runs):
    limits = {"solar": 973.0, "wind-on": 352.0, "wind-off": 387.0}
    peak = {t: max(s.capacity.get(t, 0.0) for r in shipped_runs.values() for s in r.solutions.values())
            for t in limits}
    ok = all(peak[t] <= limits[t] + 1e-9 for t in limits)
    report(8, ok, "peak GW " + ", ".join(f"{t} {peak[t]:.1f}/{limits[t]:g}" for t in limits))


def test_criterion_9_unit_oracles(shipped_runs, toy_instance):
    rng = np.random.default_rng(2024)
    worst_h = worst_m = worst_rt = 0.0
    for _ in range(10_000):
        n = int(rng.integers(2, 8))
        c = rng.uniform(0.01, 1000.0, n)
        w = rng.uniform(0.0, 5.0, n)
        w[0] = max(w[0], 0.1)
        g = rng.uniform(-10.0, -0.1)
        s = choice.logit_shares(c, w, g)
        worst_h = max(worst_h, np.abs(choice.logit_shares(c * rng.uniform(1e-3, 1e3), w, g) - s).max())
        i = int(rng.integers(0, n))
        up = c.copy()
        up[i] *= rng.uniform(1.01, 3.0)
        worst_m = max(worst_m, choice.logit_shares(up, w, g)[i] - s[i])
        obs = rng.dirichlet(np.ones(n))
        b = choice.calibrate_share_weights(obs, c, g)
        worst_rt = max(worst_rt, np.abs(choice.logit_shares(c, b, g) - obs).max())
    residual = max(s.residual for r in shipped_runs.values() for s in r.solutions.values())
    fuel = solve_period(toy_instance, initial_state(toy_instance), tolerance=1e-6).prices["fuel"]
    analytic = (19 * (0.75 / 1.2) ** -2 - 15) / 2
    k, tau_star = 2.0, 60.0
    triangle = mac_integral(lambda t: 100.0 - t / k, tau_star)
    closed = 0.5 * k * (tau_star / k) ** 2
    seoul = seoul_multiple(land_requirement(400, "solar"))
    checks = {
        "homogeneity": worst_h <= 1e-9,
        "monotonicity": worst_m <= 1e-9,
        "round-trip": worst_rt <= 1e-9,
        "residual": residual <= 1e-4,
        "two-market": abs(fuel - analytic) <= 1e-3,
        "triangle MAC": abs(triangle - closed) <= 0.02 * closed,
        "land": abs(seoul - 4.36) <= 0.01,
    }
    report(9, all(checks.values()),
           f"homogeneity {worst_h:.1e}, monotonicity {worst_m:.1e}, round-trip {worst_rt:.1e}, "
           f"max residual {residual:.1e}, fuel {fuel:.4f} vs {analytic:.4f}, "
           f"MAC {triangle:.2f} vs {closed:.2f}, Seoul x{seoul:.3f}"
           + "".join(f"; {k} failed" for k, v in checks.items() if not v))


def test_criterion_10_runtime_and_determinism(tmp_path):
    paths = [SCENARIO_DIR / f"{n}.cfg" for n in SHIPPED_SCENARIOS]
    start = time.perf_counter()
    first = run_many(DATA_DIR, paths, tmp_path / "a", jobs=1)
    elapsed = time.perf_counter() - start
    second = run_many(DATA_DIR, paths, tmp_path / "b", jobs=4)
    differ = [f"{a.name}/{f.name}" for a, b in zip(first, second) for f in sorted(a.iterdir())
              if f.read_bytes() != (b / f.name).read_bytes()]
    ok = elapsed < 60 and not differ and len(first) == 4
    report(10, ok, f"serial 4-scenario run with policy-cost sampling {elapsed:.1f} s; "
                   f"serial vs parallel rerun differing files: {differ or 'none'}")
