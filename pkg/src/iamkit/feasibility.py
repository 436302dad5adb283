"""Feasibility dashboard: policy cost, land, CO2 storage, expansion rates, potentials."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .emissions import TWH_PER_EJ, net_emissions
from .errors import MisalignedSeries, NoBindingCap, UnknownPotential, UnknownTechClass
from .markets import solve_period

#: km² per GW of installed capacity
LAND_KM2_PER_GW = {"solar": 6.6, "nuclear": 0.745}
SEOUL_KM2 = 605.2
STORAGE_BUDGETS_GT = (1.0, 2.0)
TECHNICAL_POTENTIAL_GW = {"solar": 973.0, "wind-on": 352.0, "wind-off": 387.0}
GWH_PER_EJ = TWH_PER_EJ * 1000


# --------------------------------------------------------------------------
# policy cost
# --------------------------------------------------------------------------


def mac_integral(net_at: Callable[[float], float], tau_star: float, n_samples: int = 8) -> float:
    """Area under the marginal abatement cost curve up to ``tau_star``.

    ``net_at(tau)`` returns net emissions (Mt).  Abatement is measured against
    ``net_at(0)`` and ``∫ tau dA`` is integrated by the trapezoid rule over
    ``n_samples`` evenly spaced prices.  Returns million USD.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    if tau_star <= 0:
        return 0.0
    taus = np.linspace(0.0, tau_star, n_samples)
    e = np.array([net_at(float(t)) for t in taus])
    abated = e[0] - e
    return float(np.sum(0.5 * (taus[1:] + taus[:-1]) * np.diff(abated)))


def policy_cost(run, n_samples: int = 8) -> dict[int, float]:
    """Policy cost per period as percent of GDP.

    Each binding period is re-solved from its own starting state at
    ``n_samples`` carbon prices between 0 and the solved price.
    """
    if run.cap is None or not any(t > 0 for t in run.carbon_price.values()):
        raise NoBindingCap(f"scenario {run.scenario.name} has no binding cap")
    model = run.model
    inst = model.instance
    out = {}
    for year, tau in run.carbon_price.items():
        if tau <= 0:
            out[year] = 0.0
            continue
        state = run.start_states[year]
        start = run.solutions[year].next_state.prices

        def net_at(t, state=state, start=start):
            s = solve_period(model, state, t, bounds=model.bounds, start_prices=start)
            return net_emissions(s, inst)

        musd = mac_integral(net_at, tau, n_samples)
        out[year] = 100.0 * musd * 1e6 / inst.dataset.macro.gdp(year)
    return out


# --------------------------------------------------------------------------
# land
# --------------------------------------------------------------------------


def land_requirement(capacity_gw: float, tech_class: str) -> float:
    """Land claimed by ``capacity_gw`` of ``tech_class`` (km²)."""
    if tech_class not in LAND_KM2_PER_GW:
        raise UnknownTechClass(f"no land intensity for '{tech_class}'")
    if capacity_gw < 0:
        raise ValueError("capacity must be non-negative")
    return LAND_KM2_PER_GW[tech_class] * capacity_gw


def seoul_multiple(km2: float) -> float:
    return km2 / SEOUL_KM2


# --------------------------------------------------------------------------
# expansion rates
# --------------------------------------------------------------------------


def expansion_rate(capacity: Mapping[int, float], system_size: Mapping[int, float]) -> dict[int, float]:
    """Annual capacity change over total system size.

    ``rate(t) = (cap(t) - cap(t-1)) / size(t) / (t - (t-1))`` for every period
    after the first; capacity in GW, system size in GWh.
    """
    if sorted(capacity) != sorted(system_size):
        raise MisalignedSeries("capacity and system-size series cover different periods")
    years = sorted(capacity)
    out = {}
    for prev, y in zip(years, years[1:]):
        size = system_size[y]
        if not size > 0:
            raise MisalignedSeries(f"system size must be positive in {y}")
        out[y] = (capacity[y] - capacity[prev]) / size / (y - prev)
    return out


def capacity_multiple(capacity: Mapping[int, float], start: int, end: int) -> float:
    base = capacity.get(start, 0.0)
    if base <= 0:
        return float("inf") if capacity.get(end, 0.0) > 0 else float("nan")
    return capacity.get(end, 0.0) / base


# --------------------------------------------------------------------------
# CO2 storage
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StorageDrawdown:
    cumulative_gt: Mapping[int, float]
    crossings: Mapping[float, int | None]

    @property
    def final(self) -> float:
        return list(self.cumulative_gt.values())[-1] if self.cumulative_gt else 0.0


def cumulative_storage(flows_mt: Mapping[int, float],
                       budgets: Sequence[float] = STORAGE_BUDGETS_GT) -> StorageDrawdown:
    """Cumulative injection (Gt) at each period start.

    Each period's annual flow is held until the next period, so the value
    reported for year ``t`` covers injections strictly before ``t``; this is
    the same rule the storage resource uses for depletion.
    """
    years = sorted(flows_mt)
    cum, total = {}, 0.0
    for i, y in enumerate(years):
        cum[y] = total
        if i + 1 < len(years):
            total += flows_mt[y] * (years[i + 1] - y) / 1000.0
    crossings = {}
    for b in budgets:
        crossings[b] = next((y for y in years if cum[y] >= b - 1e-12), None)
    return StorageDrawdown(cum, crossings)


def storage_drawdown(run) -> StorageDrawdown:
    return cumulative_storage({y: row.stored for y, row in run.ledger.items()})


# --------------------------------------------------------------------------
# technical potential
# --------------------------------------------------------------------------


def potential_check(capacity_gw: float, tech: str,
                    potentials: Mapping[str, float] | None = None) -> float:
    """Headroom ``potential - capacity`` (GW); negative means a violation."""
    pots = TECHNICAL_POTENTIAL_GW if potentials is None else potentials
    if tech not in pots:
        raise UnknownPotential(f"no technical potential configured for '{tech}'")
    return pots[tech] - capacity_gw


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


@dataclass
class FeasibilityReport:
    policy_cost: dict[int, float]
    land: dict[int, dict[str, float]]
    storage: StorageDrawdown
    expansion_rates: dict[str, dict[int, float]]
    potential_headroom: dict[str, dict[int, float]]
    violations: list[str] = field(default_factory=list)

    def rows(self):
        """``(year, metric, value, unit)`` tuples in a fixed order."""
        out = []
        for y, v in self.policy_cost.items():
            out.append((y, "policy_cost", v, "%GDP"))
        for y, claims in self.land.items():
            for cls, km2 in claims.items():
                out.append((y, f"land_{cls}", km2, "km2"))
                out.append((y, f"land_{cls}_seoul_multiple", seoul_multiple(km2), "x Seoul"))
        for y, gt in self.storage.cumulative_gt.items():
            out.append((y, "storage_cumulative", gt, "GtCO2"))
        for b, y in self.storage.crossings.items():
            if y is not None:
                out.append((y, f"storage_crosses_{b:g}Gt", 1.0, "flag"))
        for tech, series in self.expansion_rates.items():
            for y, v in series.items():
                out.append((y, f"expansion_rate_{tech}", v, "GW/GWh/yr"))
        for tech, series in self.potential_headroom.items():
            for y, v in series.items():
                out.append((y, f"headroom_{tech}", v, "GW"))
        return sorted(out, key=lambda r: (r[0], r[1]))


def assess(run, n_samples: int = 8) -> FeasibilityReport:
    inst = run.instance
    years = list(run.solutions)
    try:
        cost = policy_cost(run, n_samples)
    except NoBindingCap:
        cost = {}
    land = {}
    for y, sol in run.solutions.items():
        land[y] = {cls: land_requirement(sol.capacity.get(cls, 0.0), cls) for cls in LAND_KM2_PER_GW
                   if cls in sol.capacity}
    size = {y: run.solutions[y].generation * GWH_PER_EJ for y in years}
    expansion = {}
    for tech in sorted(run.solutions[years[0]].capacity):
        cap = {y: run.solutions[y].capacity.get(tech, 0.0) for y in years}
        expansion[tech] = expansion_rate(cap, size)
    pots = inst.dataset.parameter_group("potential_gw") or TECHNICAL_POTENTIAL_GW
    headroom, violations = {}, []
    for tech in sorted(pots):
        if tech not in inst.technologies:
            continue
        headroom[tech] = {}
        for y in years:
            h = potential_check(run.solutions[y].capacity.get(tech, 0.0), tech, pots)
            headroom[tech][y] = h
            if h < -1e-6:
                violations.append(f"{y}: {tech} exceeds its potential by {-h:.3g} GW")
    return FeasibilityReport(cost, land, storage_drawdown(run), expansion, headroom, violations)
