from __future__ import annotations

import numpy as np
import pytest

from conftest import TOY_TABLES, write_dataset
from iamkit.core import EJ_PER_GW_YEAR, GradedResource, build_model
from iamkit.errors import InfeasibleConstraintSet
from iamkit.io import load_dataset
from iamkit.markets import (
    Bound,
    VintageStock,
    dispatch_power,
    initial_state,
    merit_order,
    resource_price,
    service_demand,
    shutdown_utilization,
    solve_period,
    stock_from_history,
)
from iamkit.policy import apply_scenario
from iamkit.io import shipped_scenario

TWO_PLANTS = TOY_TABLES["technologies.csv"] + \
    "plant2,power,electricity,fuel:2,10,0,0.1,0,0,0,30,1,0,,\n"


# ---------------------------------------------------------------- demand

def test_service_demand_identity():
    assert service_demand(3.0, 1, 1, 1, 0.7, -0.4) == 3.0


def test_service_demand_unit_income_elasticity():
    assert service_demand(3.0, 2, 1, 1, 1.0, -0.4) == pytest.approx(6.0)


def test_service_demand_all_terms():
    expected = 3.0 * 1.5 ** 0.8 * 1.2 ** -0.3 * 1.1
    assert service_demand(3.0, 1.5, 1.2, 1.1, 0.8, -0.3) == pytest.approx(expected, rel=1e-14)


# ---------------------------------------------------------------- resources

GRADES = GradedResource("fuel", "primary-resource", "EJ", ((10.0, 2.0), (10.0, 5.0)), False)
DEPLETABLE = GradedResource("fuel", "primary-resource", "EJ", ((10.0, 2.0), (10.0, 5.0)), True)


def test_resource_price_zero_demand_is_cheapest_grade():
    assert resource_price(GRADES, 0.0) == 2.0


def test_resource_price_second_grade():
    assert resource_price(GRADES, 12.0) == 5.0


def test_resource_price_after_depletion():
    assert resource_price(DEPLETABLE, 1.0, cumulative_extracted=10.0) == 5.0


def test_resource_price_scarcity_backstop():
    assert resource_price(GRADES, 25.0) == 50.0


def test_resource_price_rejects_negative_demand():
    with pytest.raises(ValueError):
        resource_price(GRADES, -1.0)


# ---------------------------------------------------------------- stock

def test_vintages_retire_at_lifetime():
    s = VintageStock({"a": ((2000, 5.0), (2010, 3.0))})
    assert s.surviving({"a": 20}, 2019).capacity("a") == 8.0
    assert s.surviving({"a": 20}, 2020).capacity("a") == 3.0


def test_stock_from_history_books_increments():
    s = stock_from_history({"a": {2000: 5.0, 2010: 8.0}}, {"a": 40}, 2010)
    assert s.vintages["a"] == ((2000, 5.0), (2010, 3.0))


def test_stock_from_history_shortfall_retires_oldest():
    s = stock_from_history({"a": {2000: 5.0, 2005: 8.0, 2010: 6.0}}, {"a": 40}, 2010)
    assert s.vintages["a"] == ((2000, 3.0), (2005, 3.0))


# ---------------------------------------------------------------- dispatch helpers

def test_shutdown_utilization_pieces():
    assert shutdown_utilization(0.5, 1.0) == 1.0
    assert shutdown_utilization(1.0, 1.0) == pytest.approx(0.5)
    assert shutdown_utilization(1.3, 1.0) == 0.0


def test_merit_order_meets_demand_cheapest_first():
    out = merit_order([1.0, 5.0, 9.0], [1.0, 1.0, 1.0], 1.5, width=0.01)
    assert out.sum() == pytest.approx(1.5)
    assert out[0] == pytest.approx(1.0, abs=1e-6) and out[2] < 1e-6


def test_merit_order_runs_everything_when_short():
    np.testing.assert_array_equal(merit_order([3.0, 1.0], [1.0, 2.0], 5.0, 0.1), [1.0, 2.0])


def test_merit_order_continuous_in_cost():
    a = merit_order([1.0, 1.0], [1.0, 1.0], 1.0, 0.1)
    b = merit_order([1.0, 1.0 + 1e-6], [1.0, 1.0], 1.0, 0.1)
    assert np.abs(a - b).max() < 1e-4


# ---------------------------------------------------------------- dispatch

def test_dispatch_half_capacity_factor(tmp_path):
    techs = TOY_TABLES["technologies.csv"].replace("0.1,0,0,0,30,1,0", "0.1,0,0,0,30,0.5,0")
    inst = build_model(load_dataset(write_dataset(tmp_path, technologies=techs)))
    d = dispatch_power(inst, 2015, 1.0, VintageStock(), {"fuel": 2.0})
    assert d.new_capacity["plant"] == pytest.approx(1.0 / (0.5 * 8760 * 3600 * 1e-9), rel=1e-9)
    assert d.new_capacity["plant"] == pytest.approx(63.4, abs=0.05)


def test_dispatch_symmetric_split(tmp_path):
    inst = build_model(load_dataset(write_dataset(tmp_path, technologies=TWO_PLANTS)))
    d = dispatch_power(inst, 2015, 2.0, VintageStock(), {"fuel": 2.0})
    assert d.tech_output["plant"] == pytest.approx(1.0)
    assert d.tech_output["plant2"] == pytest.approx(1.0)


def test_dispatch_existing_stock_covers_demand(toy_instance):
    gw = 1.0 / EJ_PER_GW_YEAR
    stock = VintageStock({"plant": ((2010, gw),)})
    d = dispatch_power(toy_instance, 2015, 1.0, stock, {"fuel": 2.0})
    assert all(v == 0 for v in d.new_capacity.values())
    assert d.tech_output["plant"] == pytest.approx(1.0)


def test_dispatch_respects_potential(tmp_path):
    inst = build_model(load_dataset(write_dataset(tmp_path, technologies=TWO_PLANTS)))
    room = 10.0
    d = dispatch_power(inst, 2015, 2.0, VintageStock(), {"fuel": 2.0}, potentials={"plant": room})
    assert d.capacity["plant"] <= room + 1e-9
    assert sum(d.tech_output.values()) == pytest.approx(2.0)


def test_dispatch_forced_bound_beyond_potential(tmp_path):
    inst = build_model(load_dataset(write_dataset(tmp_path, technologies=TWO_PLANTS)))
    bound = Bound(("plant",), 2015, "min", 50.0)
    with pytest.raises(InfeasibleConstraintSet):
        dispatch_power(inst, 2015, 2.0, VintageStock(), {"fuel": 2.0}, bounds=(bound,),
                       potentials={"plant": 10.0})


# ---------------------------------------------------------------- period solve

def test_flat_supply_clears_at_its_cost(tmp_path):
    res = "commodity,kind,unit,grade,quantity,cost,depletable\nfuel,primary-resource,EJ,1,1000000,5,0\n"
    inst = build_model(load_dataset(write_dataset(tmp_path, resources=res)))
    sol = solve_period(inst, initial_state(inst))
    assert sol.prices["fuel"] == pytest.approx(5.0)
    assert sol.residual < 1e-4


def analytic_fuel_price():
    # Service demand D = 1.2 * (p_svc / 19)**-0.5 with p_svc = 5 + (10 + 2 p), and the plant
    # burns 2 EJ of fuel per EJ.  Both grades together hold 1.5 EJ, and at the $8 grade cost
    # demand still exceeds that, so the price rises along the vertical segment until
    # 2 * D = 1.5.  Solving 1.2 * ((15 + 2p) / 19)**-0.5 = 0.75 for p:
    return (19 * (0.75 / 1.2) ** -2 - 15) / 2


def test_two_market_chain_matches_algebra(toy_instance):
    sol = solve_period(toy_instance, initial_state(toy_instance), tolerance=1e-6)
    assert sol.prices["fuel"] == pytest.approx(analytic_fuel_price(), abs=1e-3)
    assert sol.quantities["fuel"] == pytest.approx(1.5, abs=1e-4)


def test_solve_rejects_negative_carbon_price(toy_instance):
    with pytest.raises(ValueError):
        solve_period(toy_instance, initial_state(toy_instance), -1.0)


def test_shipped_curpol_every_period_clears(shipped_runs):
    for y, sol in shipped_runs["curpol"].solutions.items():
        assert sol.residual <= 1e-4, y
        assert sol.iterations <= 500, y


def test_storage_market_matches_ledger(shipped_runs):
    run = shipped_runs["nz2050"]
    for y, sol in run.solutions.items():
        assert sol.quantities.get("co2-storage", 0.0) == pytest.approx(run.ledger[y].stored, rel=1e-3, abs=1e-3)


def test_scenario_model_matches_instance_for_reference(korea):
    model = apply_scenario(korea, shipped_scenario("nz2050"))
    sol = solve_period(model, initial_state(model), bounds=model.bounds)
    assert sol.year == 2015 and sol.residual < 1e-4
