from __future__ import annotations

import dataclasses

import pytest

from iamkit.core import TimeGrid
from iamkit.errors import BadYears, CapInfeasible, UnknownScenarioKey
from iamkit.io import shipped_scenario
from iamkit.markets import initial_state
from iamkit.emissions import net_emissions
from iamkit.policy import apply_scenario, cap_path, npsp_bounds, solve_carbon_price


def test_cap_midpoint():
    assert cap_path(700, 2020, 2050)[2035] == pytest.approx(350)


def test_cap_reaches_zero_and_is_undefined_before_anchor():
    cap = cap_path(700, 2020, 2050)
    assert cap[2050] == 0.0
    assert cap[2015] is None


def test_cap_2030_ratio():
    assert cap_path(709, 2020, 2050)[2030] / 709 == pytest.approx(2 / 3, abs=1e-3)


def test_cap_bad_years():
    with pytest.raises(BadYears):
        cap_path(700, 2050, 2050)


def test_cap_on_custom_grid():
    cap = cap_path(100, 2020, 2040, TimeGrid(2010, 2020, 10, 2060))
    assert dict(cap.values) == {2020: 100, 2030: 50, 2040: 0, 2050: 0, 2060: 0}


# ---------------------------------------------------------------- scenarios

def test_nuc_scenario_leaves_nuclear_available(korea):
    model = apply_scenario(korea, shipped_scenario("nz2050_nuc"))
    assert all(model.share_weight("nuclear", y) > 0 for y in range(2025, 2051, 5))


def test_nuclear_ban_after_2024(korea):
    model = apply_scenario(korea, shipped_scenario("nz2050"))
    assert model.share_weight("nuclear", 2020) > 0
    assert model.share_weight("nuclear", 2025) == 0


def test_limccs_storage_cost(korea):
    model = apply_scenario(korea, shipped_scenario("nz2050_limccs"))
    assert model.storage_cost() == 3000
    ref = korea.dataset.resources["co2-storage"].grades[0][1]
    assert model.instance.dataset.resources["co2-storage"].grades[0][1] == pytest.approx(3 * ref)


def test_apply_scenario_does_not_touch_input(korea):
    before = korea.dataset.resources["co2-storage"].grades
    apply_scenario(korea, shipped_scenario("nz2050_limccs"))
    assert korea.dataset.resources["co2-storage"].grades == before


def test_curpol_uncapped(korea):
    model = apply_scenario(korea, shipped_scenario("curpol"))
    assert not model.scenario.capped
    assert model.bounds == tuple(model.bounds) and len(npsp_bounds(korea)) > 0


def test_unknown_trajectory_profile(korea):
    cfg = dataclasses.replace(shipped_scenario("curpol"), exogenous_trajectories="fantasy")
    with pytest.raises(UnknownScenarioKey):
        apply_scenario(korea, cfg)


# ---------------------------------------------------------------- carbon price

def test_slack_cap_gives_zero_price(toy_instance):
    tau, _ = solve_carbon_price(toy_instance, initial_state(toy_instance), 1e6)
    assert tau == 0.0


def test_tighter_cap_needs_higher_price(toy_instance):
    state = initial_state(toy_instance)
    loose, s1 = solve_carbon_price(toy_instance, state, 60.0)
    tight, s2 = solve_carbon_price(toy_instance, state, 40.0)
    assert 0 < loose < tight
    assert net_emissions(s1, toy_instance) == pytest.approx(60.0, abs=0.5)
    assert net_emissions(s2, toy_instance) == pytest.approx(40.0, abs=0.5)


def test_unreachable_cap(toy_instance):
    with pytest.raises(CapInfeasible):
        solve_carbon_price(toy_instance, initial_state(toy_instance), 0.0)


def test_curpol_has_no_carbon_price(shipped_runs):
    assert all(t == 0 for t in shipped_runs["curpol"].carbon_price.values())
    assert shipped_runs["curpol"].cap is None


def test_nz2050_price_rises(shipped_runs):
    tau = shipped_runs["nz2050"].carbon_price
    path = [tau[y] for y in range(2025, 2051, 5)]
    assert all(t > 0 for t in path)
    assert all(b >= a for a, b in zip(path, path[1:]))


def test_nz2050_hits_zero(shipped_runs):
    assert abs(shipped_runs["nz2050"].ledger[2050].net) <= 0.5


def test_runs_cover_horizon(shipped_runs):
    for run in shipped_runs.values():
        assert run.years == (2015, 2020, 2025, 2030, 2035, 2040, 2045, 2050)
        assert set(run.provenance) == {"scenario", "dataset_checksum", "config_checksum", "tool_version"}
