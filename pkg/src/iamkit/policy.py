"""Emission caps, carbon-price search and scenario constraints."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping

from . import __version__
from .core import ModelInstance, TimeGrid, interp_path
from .emissions import EmissionsLedger, account_emissions, net_emissions
from .errors import BadYears, CapInfeasible, IAMError, UnknownScenarioKey
from .markets import Bound, PeriodSolution, PeriodState, initial_state, solve_period
from .scenario import PROFILES, ScenarioConfig

log = logging.getLogger(__name__)

CARBON_PRICE_MAX = 5000.0
CAP_TOLERANCE = 0.5
BISECTION_ITERATIONS = 60

#: National power supply plan targets for 2034.  ``relative`` targets are a
#: fraction of the technology's 2020 capacity (half of the coal units close).
NPSP_YEAR = 2034
NPSP_START = 2020
NPSP_PROFILE = (
    (("coal",), "max", "relative", 0.5),
    (("nuclear",), "max", "absolute", 19.4),
    (("gas",), "min", "absolute", 58.1),
    (("solar", "wind-on", "wind-off", "hydro", "biopower"), "min", "absolute", 77.8),
)


@dataclass(frozen=True)
class CapPath:
    """Net-emission cap per period (``None`` = unconstrained)."""

    values: Mapping[int, float | None]
    binding: Mapping[int, bool] = field(default_factory=dict)

    def __getitem__(self, year):
        return self.values[year]


def cap_path(anchor_emissions: float, anchor_year: int, netzero_year: int = 2050,
             grid: TimeGrid | None = None) -> CapPath:
    """Straight line from ``(anchor_year, anchor_emissions)`` to zero at ``netzero_year``."""
    if not anchor_year < netzero_year:
        raise BadYears(f"anchor year {anchor_year} must precede net-zero year {netzero_year}")
    if not anchor_emissions > 0:
        raise BadYears("anchor emissions must be positive")
    grid = grid or TimeGrid()
    values: dict[int, float | None] = {}
    for y in grid.years:
        if y < anchor_year:
            values[y] = None
        else:
            values[y] = interp_path(((anchor_year, anchor_emissions), (netzero_year, 0.0)), y)
    return CapPath(values)


@dataclass(frozen=True)
class TechConstraintSet:
    bans: tuple[tuple[str, int], ...] = ()  # (technology, first banned year)
    trajectories: tuple[Bound, ...] = ()
    cost_overrides: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class ScenarioModel:
    """A base instance with one scenario's levers and constraints applied."""

    instance: ModelInstance
    scenario: ScenarioConfig
    constraints: TechConstraintSet

    def banned(self, tech: str, year: int) -> bool:
        return any(t == tech and year >= y for t, y in self.constraints.bans)

    def share_weight(self, child: str, year: int) -> float:
        if self.banned(child, year):
            return 0.0
        return self.instance.share_weight(child, year)

    @property
    def bounds(self) -> tuple[Bound, ...]:
        return self.constraints.trajectories

    def storage_cost(self) -> float:
        return dict(self.constraints.cost_overrides)["storage_cost_usd_per_t"]


def _history_bounds(inst: ModelInstance) -> list[Bound]:
    ds = inst.dataset
    until = int(ds.parameter("history_pin_until", ds.timegrid.base_year))
    power = set(inst.techs_under(inst.power_root))
    out = []
    for tech in sorted(ds.history):
        if tech not in power:
            continue
        for y, gw in sorted(ds.history[tech].items()):
            if ds.timegrid.base_year < y <= until and y in ds.timegrid.years:
                out.append(Bound((tech,), y, "min", gw))
    return out


def npsp_bounds(inst: ModelInstance) -> list[Bound]:
    """Capacity bounds tracking the power supply plan for 2020-2034."""
    ds = inst.dataset
    out = []
    for techs, kind, mode, target in NPSP_PROFILE:
        for t in techs:
            if t not in inst.technologies:
                raise UnknownScenarioKey(f"power supply plan names unknown technology '{t}'")
        start = sum(ds.history.get(t, {}).get(NPSP_START, 0.0) for t in techs)
        end = target * start if mode == "relative" else target
        for y in ds.timegrid.years:
            if NPSP_START < y <= NPSP_YEAR + ds.timegrid.step - 1:
                gw = interp_path(((NPSP_START, start), (NPSP_YEAR, end)), min(y, NPSP_YEAR))
                out.append(Bound(techs, y, kind, gw))
    return out


def apply_scenario(instance: ModelInstance, scenario: ScenarioConfig) -> ScenarioModel:
    """Return a constrained copy of ``instance``; the input is never modified."""
    if scenario.exogenous_trajectories not in PROFILES:
        raise UnknownScenarioKey(f"unknown trajectory profile '{scenario.exogenous_trajectories}'")
    ds = instance.dataset
    ref = ds.parameter("storage_cost_reference", scenario.storage_cost_usd_per_t)
    scale = scenario.storage_cost_usd_per_t / ref
    resources = {}
    for rid, res in ds.resources.items():
        if res.kind == "storage-resource":
            res = replace(res, grades=tuple((q, c * scale) for q, c in res.grades))
        resources[rid] = res
    techs = dict(ds.technologies)
    for root in instance.roots_with_role("removal"):
        for t in instance.techs_under(root):
            techs[t] = replace(techs[t], non_energy_cost=scenario.dac_cost_usd_per_t)
    new_ds = replace(ds, resources=resources, technologies=techs)
    inst = replace(instance, dataset=new_ds)

    bans = ()
    if scenario.nuclear_banned_after is not None:
        if "nuclear" not in instance.technologies:
            raise UnknownScenarioKey("dataset has no 'nuclear' technology to ban")
        bans = (("nuclear", scenario.nuclear_banned_after + 1),)
    bounds = _history_bounds(instance)
    if scenario.exogenous_trajectories == "npsp":
        bounds += npsp_bounds(instance)
    constraints = TechConstraintSet(
        bans=bans,
        trajectories=tuple(bounds),
        cost_overrides=(("storage_cost_usd_per_t", scenario.storage_cost_usd_per_t),
                        ("dac_cost_usd_per_t", scenario.dac_cost_usd_per_t)),
    )
    return ScenarioModel(inst, scenario, constraints)


def _as_model(model):
    if isinstance(model, ScenarioModel):
        return model, model.bounds
    return model, ()


def solve_carbon_price(model, state: PeriodState, cap: float, *, guess: float | None = None,
                       tolerance: float = CAP_TOLERANCE, tau_max: float = CARBON_PRICE_MAX,
                       max_iterations: int = BISECTION_ITERATIONS) -> tuple[float, PeriodSolution]:
    """Carbon price at which net emissions meet ``cap``.

    Bisection on ``[0, tau_max]``.  ``guess`` (typically last period's price)
    only shortens the search by testing a tighter upper end first.
    """
    if cap < 0:
        raise ValueError("cap must be non-negative")
    model, bounds = _as_model(model)
    inst = model.instance if isinstance(model, ScenarioModel) else model

    def run(tau, start):
        s = solve_period(model, state, tau, bounds=bounds, start_prices=start)
        return s, net_emissions(s, inst)

    sol0, e0 = run(0.0, None)
    if e0 <= cap:
        return 0.0, sol0
    if abs(e0 - cap) <= tolerance:
        return 0.0, sol0
    lo, hi = 0.0, None
    last = sol0
    if guess:
        h = min(max(1.5 * guess, 20.0), tau_max)
        while h < tau_max:
            s, e = run(h, last.next_state.prices)
            last = s
            if abs(e - cap) <= tolerance:
                return h, s
            if e < cap:
                hi = h
                break
            lo = h
            h = min(2 * h, tau_max)
    if hi is None:
        s, e = run(tau_max, last.next_state.prices)
        if e > cap + tolerance:
            raise CapInfeasible(state.year + inst.timegrid.step, cap, e)
        if abs(e - cap) <= tolerance:
            return tau_max, s
        hi = tau_max
        last = s
    mid, s = hi, last
    for _ in range(max_iterations):
        mid = 0.5 * (lo + hi)
        s, e = run(mid, last.next_state.prices)
        last = s
        if abs(e - cap) <= tolerance:
            break
        if e > cap:
            lo = mid
        else:
            hi = mid
    return mid, s


@dataclass
class RunResult:
    scenario: ScenarioConfig
    model: ScenarioModel
    solutions: dict[int, PeriodSolution]
    ledger: EmissionsLedger
    carbon_price: dict[int, float]
    start_states: dict[int, PeriodState]
    cap: CapPath | None
    provenance: dict[str, str]
    feasibility: object = None

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(self.solutions)

    @property
    def instance(self) -> ModelInstance:
        return self.model.instance


def _provenance(model: ScenarioModel) -> dict[str, str]:
    from .core import checksum
    return {
        "scenario": model.scenario.name,
        "dataset_checksum": checksum(model.instance.dataset),
        "config_checksum": hashlib.sha256(model.scenario.to_text().encode()).hexdigest(),
        "tool_version": __version__,
    }


def run_horizon(model: ScenarioModel) -> RunResult:
    """Solve every period in order, carrying stock, depletion and prices forward."""
    inst = model.instance
    ds = inst.dataset
    scen = model.scenario
    anchor_year = int(ds.parameter("cap_anchor_year", 2020))
    state = initial_state(model)
    solutions, taus, starts = {}, {}, {}
    ledger = EmissionsLedger()
    cap = None
    binding = {}
    tau_prev = None
    for year in ds.timegrid.years:
        starts[year] = state
        try:
            if cap is not None and cap.values.get(year) is not None and year > anchor_year:
                tau, sol = solve_carbon_price(model, state, cap.values[year], guess=tau_prev)
                binding[year] = tau > 0
                tau_prev = tau or tau_prev
            else:
                sol = solve_period(model, state, 0.0, bounds=model.bounds)
                tau = 0.0
        except IAMError as exc:
            exc.args = (f"{scen.name} {year}: {exc.args[0] if exc.args else exc}",)
            raise
        log.info("%s %d: tau=%.2f residual=%.2e iterations=%d", scen.name, year, tau,
                 sol.residual, sol.iterations)
        solutions[year] = sol
        taus[year] = tau
        ledger[year] = account_emissions(sol, inst)
        if scen.capped and year == anchor_year:
            cap = cap_path(ledger[year].net, anchor_year, scen.cap_netzero_year, ds.timegrid)
        state = sol.next_state
    if cap is not None:
        cap = CapPath(cap.values, {y: binding.get(y, False) for y in cap.values})
    return RunResult(scen, model, solutions, ledger, taus, starts, cap, _provenance(model))
