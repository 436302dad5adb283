"""Per-period market clearing.

Each period the solver searches for resource prices at which every graded
resource market clears.  Prices of produced carriers (electricity, hydrogen)
and of end-use services are the logit-composite cost of the technologies that
make them, so they follow directly from resource prices and the carbon price;
the only iterated unknowns are the resource prices.

Power is the only vintaged sector.  Surviving plants run in merit order of
variable cost (with an economic shutdown rule) and new capacity covers the
remaining demand, split by nested logit over levelized costs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import choice
from .core import EJ_PER_GW_YEAR, GradedResource, ModelInstance, interp_path
from .errors import InfeasibleConstraintSet, NoConvergence

log = logging.getLogger(__name__)

DAMPING = 0.25
TOLERANCE = 1e-4
MAX_ITERATIONS = 500
#: Width of the merit-order edge as a fraction of the new-build composite cost.
MERIT_WIDTH = 0.05
#: Price multiplier applied to the last grade when demand exhausts a resource.
SCARCITY_MULTIPLIER = 10.0


# --------------------------------------------------------------------------
# demand and supply curves
# --------------------------------------------------------------------------


def service_demand(base, gdppc_ratio, price_ratio, pop_ratio, alpha, beta):
    """Service demand ``D0 * gdppc_ratio**alpha * price_ratio**beta * pop_ratio``."""
    return base * gdppc_ratio ** alpha * price_ratio ** beta * pop_ratio


def _grade_table(resource: GradedResource, cumulative: float, years: float):
    """Remaining annual availability and cost per grade, plus the scarcity backstop."""
    avail, costs = [], []
    lower = 0.0
    for (q, c) in resource.grades:
        upper = lower + q
        if resource.depletable:
            left = max(0.0, upper - max(lower, cumulative))
            avail.append(left / years)
        else:
            avail.append(q)
        costs.append(c)
        lower = upper
    avail.append(math.inf)
    costs.append(resource.grades[-1][1] * SCARCITY_MULTIPLIER)
    return avail, costs


def resource_quote(resource: GradedResource, annual_demand: float,
                   cumulative_extracted: float = 0.0, years: float = 1.0):
    """``(price, scarce)`` of the marginal grade that meets ``annual_demand``.

    For depletable resources the grades already drawn down by
    ``cumulative_extracted`` are skipped and the period extracts
    ``years * annual_demand``.  Demand beyond the final grade is priced at the
    final grade's cost times :data:`SCARCITY_MULTIPLIER` and flagged scarce.
    """
    if annual_demand < 0:
        raise ValueError("demand must be non-negative")
    cum = cumulative_extracted if resource.depletable else 0.0
    yrs = years if resource.depletable else 1.0
    need = cum + annual_demand * yrs
    upper = 0.0
    for q, c in resource.grades:
        upper += q
        if upper > cum and upper >= need:
            return c, False
    return resource.grades[-1][1] * SCARCITY_MULTIPLIER, True


def resource_price(resource: GradedResource, annual_demand: float,
                   cumulative_extracted: float = 0.0, years: float = 1.0) -> float:
    """Marginal-grade price; see :func:`resource_quote` for the scarcity flag."""
    return resource_quote(resource, annual_demand, cumulative_extracted, years)[0]


def supply_range(resource: GradedResource, price: float, cumulative: float = 0.0,
                 years: float = 1.0) -> tuple[float, float]:
    """Annual quantity producers will sell at ``price``.

    Returns ``(low, high)``: the two differ only when ``price`` equals a grade
    cost exactly, where any quantity within that grade is on the curve.
    """
    avail, costs = _grade_table(resource, cumulative, years)
    lo = sum(a for a, c in zip(avail, costs) if c < price)
    hi = sum(a for a, c in zip(avail, costs) if c <= price)
    return lo, hi


# --------------------------------------------------------------------------
# vintaged power stock
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VintageStock:
    """Installed capacity by technology and installation year (GW).

    A vintage survives in full while younger than its technology's lifetime
    and is gone afterwards.
    """

    vintages: Mapping[str, tuple[tuple[int, float], ...]] = field(default_factory=dict)

    def surviving(self, lifetimes: Mapping[str, int], year: int) -> "VintageStock":
        out = {}
        for tech, vs in self.vintages.items():
            keep = tuple((v, gw) for v, gw in vs if year - v < lifetimes[tech] and gw > 0)
            if keep:
                out[tech] = keep
        return VintageStock(out)

    def capacity(self, tech: str) -> float:
        return sum(gw for _, gw in self.vintages.get(tech, ()))

    def total(self) -> dict[str, float]:
        return {t: self.capacity(t) for t in self.vintages}

    def add(self, tech: str, year: int, gw: float) -> "VintageStock":
        if gw <= 0:
            return self
        out = dict(self.vintages)
        out[tech] = out.get(tech, ()) + ((year, gw),)
        return VintageStock(out)

    def retire_oldest(self, techs, amount: float) -> "VintageStock":
        """Remove ``amount`` GW from the oldest vintages across ``techs``."""
        blocks = sorted((v, t, i) for t in techs for i, (v, _) in enumerate(self.vintages.get(t, ())))
        out = {t: list(vs) for t, vs in self.vintages.items()}
        for v, t, i in blocks:
            if amount <= 1e-12:
                break
            gw = out[t][i][1]
            cut = min(gw, amount)
            out[t][i] = (v, gw - cut)
            amount -= cut
        return VintageStock({t: tuple((v, g) for v, g in vs if g > 1e-12) for t, vs in out.items()
                             if any(g > 1e-12 for _, g in vs)})


def stock_from_history(history: Mapping[str, Mapping[int, float]], lifetimes: Mapping[str, int],
                       until: int) -> VintageStock:
    """Reconstruct vintages from a capacity series up to and including ``until``.

    At each observation the capacity not explained by surviving vintages is
    booked as a new vintage; a shortfall retires the oldest vintages early.
    """
    merged = {}
    for tech in sorted(history):
        if tech not in lifetimes:
            continue
        stock = VintageStock()
        for year, gw in sorted((y, g) for y, g in history[tech].items() if y <= until):
            stock = stock.surviving(lifetimes, year)
            have = stock.capacity(tech)
            if gw > have:
                stock = stock.add(tech, year, gw - have)
            elif gw < have:
                stock = stock.retire_oldest([tech], have - gw)
        merged.update(stock.surviving(lifetimes, until).vintages)
    return VintageStock(merged)


# --------------------------------------------------------------------------
# period state and solution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodState:
    """Everything carried from one period into the next."""

    year: int
    stock: VintageStock
    cumulative: Mapping[str, float]
    prices: Mapping[str, float]
    vre_share: float = 0.0


@dataclass(frozen=True)
class Bound:
    """Capacity bound on a technology group in one year (GW)."""

    techs: tuple[str, ...]
    year: int
    kind: str  # max | min | fixed
    gw: float


@dataclass(frozen=True)
class PeriodSolution:
    year: int
    carbon_price: float
    prices: Mapping[str, float]
    quantities: Mapping[str, float]
    tech_output: Mapping[str, float]
    new_capacity: Mapping[str, float]
    capacity: Mapping[str, float]
    service_demand: Mapping[str, float]
    residual: float
    iterations: int
    final_energy: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    scarce: tuple[str, ...] = ()
    next_state: PeriodState | None = None

    @property
    def generation(self) -> float:
        """Total electricity generation (EJ)."""
        return self.quantities.get("electricity", 0.0)


def _unwrap(model):
    """Accept a bare instance or a scenario-constrained model."""
    if isinstance(model, ModelInstance):
        return model, None
    return model.instance, model


def _weight(model, inst, child, year):
    if model is not None:
        return model.share_weight(child, year)
    return inst.share_weight(child, year)


def initial_state(model) -> PeriodState:
    inst, _ = _unwrap(model)
    ds = inst.dataset
    tg = ds.timegrid
    lifetimes = {t: inst.technologies[t].lifetime for t in inst.techs_under(inst.power_root)}
    stock = stock_from_history(ds.history, lifetimes, tg.base_year)
    cumulative = {r: 0.0 for r, res in ds.resources.items() if res.depletable}
    vre = ds.parameter("initial_vre_share", 0.0)
    return PeriodState(year=tg.base_year, stock=stock, cumulative=cumulative,
                       prices=dict(inst.base_prices), vre_share=vre)


# --------------------------------------------------------------------------
# power dispatch
# --------------------------------------------------------------------------


def integration_adder(inst: ModelInstance, vre_share: float) -> float:
    """System integration cost ($/GJ) charged to variable renewables."""
    pts = sorted((float(k), v) for k, v in inst.dataset.parameter_group("vre_integration_cost").items())
    if not pts:
        return 0.0
    return interp_path(pts, vre_share, default=0.0)


def shutdown_utilization(variable_cost: float, reference_cost: float,
                         full: float = 0.8, zero: float = 1.2) -> float:
    """Fraction of an existing plant's output that stays economic.

    Piecewise linear in ``variable_cost / reference_cost``: 1 up to ``full``,
    0 from ``zero``.
    """
    if reference_cost <= 0:
        return 0.0
    r = variable_cost / reference_cost
    if r <= full:
        return 1.0
    if r >= zero:
        return 0.0
    return (zero - r) / (zero - full)


def merit_order(variable_costs, energy, demand: float, width: float) -> np.ndarray:
    """Output of each existing block when they jointly meet ``demand``.

    Blocks run in order of variable cost.  When they could supply more than
    ``demand``, each runs at ``energy * sigmoid((lam - cost) / width)`` with
    ``lam`` set by bisection so that the total equals demand.  The logistic
    edge keeps output continuous in prices; it tends to a strict merit order
    as ``width`` goes to zero.
    """
    v = np.asarray(variable_costs, dtype=float)
    g = np.asarray(energy, dtype=float)
    if g.sum() <= demand:
        return g.copy()
    if demand <= 0:
        return np.zeros_like(g)

    def total(lam):
        return float(np.sum(g / (1.0 + np.exp(np.clip((v - lam) / width, -700, 700)))))

    lo, hi = v.min() - 50 * width, v.max() + 50 * width
    while total(hi) < demand:
        hi += 50 * width
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if total(mid) < demand:
            lo = mid
        else:
            hi = mid
    out = g / (1.0 + np.exp(np.clip((v - hi) / width, -700, 700)))
    return out * (demand / out.sum())


@dataclass
class Dispatch:
    tech_output: dict[str, float]
    new_capacity: dict[str, float]
    capacity: dict[str, float]
    stock: VintageStock
    composite_cost: float
    vre_share: float


def _power_costs(inst, model, year, prices, carbon_price, vre_share):
    adder = integration_adder(inst, vre_share)
    lev, var = {}, {}
    for tid in inst.techs_under(inst.power_root):
        t = inst.technologies[tid]
        a = adder if t.vre else 0.0
        c = choice.levelized_cost(t, prices, carbon_price, year=year, adder=a)
        lev[tid] = c
        var[tid] = c - t.non_energy_cost_at(year) - a + t.variable_om
    return lev, var


def _banned(model, tech, year):
    return model is not None and model.banned(tech, year)


def _fill(total, techs, costs, weights, room, gamma):
    """Split ``total`` by logit shares, saturating members at ``room``."""
    out = {t: 0.0 for t in techs}
    live = [i for i, r in enumerate(room) if r > 1e-12]
    left = total
    while left > 1e-12 and live:
        shares = choice.logit_shares([costs[i] for i in live], [weights[i] for i in live], gamma)
        full = [i for i, sh in zip(live, shares) if left * sh >= room[i] - out[techs[i]]]
        if not full:
            for i, sh in zip(live, shares):
                out[techs[i]] += left * float(sh)
            left = 0.0
            break
        for i in full:
            left -= room[i] - out[techs[i]]
            out[techs[i]] = room[i]
        live = [i for i in live if i not in full]
    return out


def dispatch_power(model, year: int, demand: float, stock: VintageStock,
                   prices: Mapping[str, float], carbon_price: float = 0.0,
                   bounds: tuple[Bound, ...] = (), vre_share: float = 0.0,
                   potentials: Mapping[str, float] | None = None) -> Dispatch:
    """Meet electricity ``demand`` (EJ/yr) from surviving stock plus new builds.

    ``stock`` is the stock at the start of the period (retirements by age are
    applied here).  ``bounds`` override the economics: ``max``/``fixed``
    retire the oldest vintages above the bound, ``min``/``fixed`` force new
    builds up to it, and ``max`` also caps endogenous builds.
    """
    if demand < 0:
        raise ValueError("electricity demand must be non-negative")
    inst, model = _unwrap(model)
    techs = inst.techs_under(inst.power_root)
    T = inst.technologies
    lifetimes = {t: T[t].lifetime for t in techs}
    potentials = potentials if potentials is not None else inst.dataset.parameter_group("potential_gw")
    lev, var = _power_costs(inst, model, year, prices, carbon_price, vre_share)

    weights = {c: _weight(model, inst, c, year) for c in inst.tree if inst.root_of.get(c) == inst.power_root}
    for t in techs:
        weights[t] = 0.0 if _banned(model, t, year) else _weight(model, inst, t, year)
    available = {t: lev[t] for t in techs if weights[t] > 0}
    composite, _ = choice.evaluate_tree(inst.tree, inst.power_root, available, weights)

    stock = stock.surviving(lifetimes, year)
    forced: dict[str, float] = {}
    upper: dict[str, float] = {}  # cap on total GW after new builds
    for b in bounds:
        if b.year != year:
            continue
        have = sum(stock.capacity(t) for t in b.techs) + sum(forced.get(t, 0.0) for t in b.techs)
        if b.kind in ("max", "fixed") and have > b.gw + 1e-9:
            stock = stock.retire_oldest(b.techs, have - b.gw)
            have = b.gw
        if b.kind in ("min", "fixed") and have < b.gw - 1e-9:
            group = [t for t in b.techs if T[t].first_available_year <= year]
            if not group:
                raise InfeasibleConstraintSet(f"{year}: bound on {b.techs} has no available technology")
            gw = [lev[t] for t in group]
            w = [max(inst.share_weight(t, year), 0.0) for t in group]
            if not any(x > 0 for x in w):
                w = [1.0] * len(group)
            room = [potentials.get(t, math.inf) - stock.capacity(t) - forced.get(t, 0.0) for t in group]
            gamma = inst.sectors[inst.power_root].logit_exponent
            adds = _fill(b.gw - have, group, gw, w, room, gamma)
            if sum(adds.values()) < b.gw - have - 1e-9:
                raise InfeasibleConstraintSet(f"{year}: minimum bound on {b.techs} exceeds their potentials")
            for t, gw_add in adds.items():
                forced[t] = forced.get(t, 0.0) + gw_add
        if b.kind in ("max", "fixed"):
            # the bound covers the group; share the headroom by current capacity
            for t in b.techs:
                upper[t] = min(upper.get(t, math.inf), b.gw)
    for t, gw in forced.items():
        stock = stock.add(t, year, gw)

    for t, pot in potentials.items():
        if t in lifetimes and stock.capacity(t) > pot + 1e-9:
            raise InfeasibleConstraintSet(f"{year}: forced capacity of {t} exceeds its potential {pot} GW")

    # existing blocks in merit order
    blocks = []
    for t in sorted(stock.vintages):
        u = shutdown_utilization(var[t], composite) if math.isfinite(composite) else 1.0
        for v, gw in stock.vintages[t]:
            blocks.append((var[t], t, v, gw * T[t].capacity_factor * EJ_PER_GW_YEAR * u))
    output = {t: 0.0 for t in techs}
    scale = composite if math.isfinite(composite) and composite > 0 else 1.0
    taken = merit_order([b[0] for b in blocks], [b[3] for b in blocks], demand, MERIT_WIDTH * scale)
    for (_, t, _, _), g in zip(blocks, taken):
        output[t] += float(g)
    left = max(demand - float(np.sum(taken)), 0.0)

    new_gen = {t: 0.0 for t in techs}
    if left > 1e-15:
        limit = {}
        for t in techs:
            cap_left = math.inf
            if t in potentials:
                cap_left = potentials[t] - stock.capacity(t)
            if t in upper:
                group_cap = min(upper[t], cap_left + stock.capacity(t))
                cap_left = min(cap_left, group_cap - stock.capacity(t))
            limit[t] = max(cap_left, 0.0) * T[t].capacity_factor * EJ_PER_GW_YEAR
        _, shares = choice.evaluate_tree(inst.tree, inst.power_root, available, weights)
        if not shares:
            raise InfeasibleConstraintSet(f"{year}: no power technology available for new builds")
        # capped technologies take their room; the rest share the remainder in
        # proportion to their unconstrained shares, so output stays continuous
        room = {t: max(limit[t], 0.0) for t in shares}
        capped: set[str] = set()
        while True:
            free = {t: s for t, s in shares.items() if t not in capped and s > 0}
            rest = left - sum(room[t] for t in capped)
            total = sum(free.values())
            if not free or total <= 0:
                raise InfeasibleConstraintSet(
                    f"{year}: {rest:.4g} EJ of electricity demand cannot be met within bounds")
            over = {t for t, s in free.items() if rest * s / total > room[t]}
            if not over:
                break
            capped |= over
        for t in capped:
            new_gen[t] = room[t]
        for t, s in free.items():
            new_gen[t] = rest * s / total

    new_capacity = {}
    for t in techs:
        gw = new_gen[t] / (T[t].capacity_factor * EJ_PER_GW_YEAR)
        new_capacity[t] = gw + forced.get(t, 0.0)
        output[t] += new_gen[t]
        if gw > 0:
            stock = stock.add(t, year, gw)
    capacity = {t: stock.capacity(t) for t in techs}
    total = sum(output.values())
    vre = sum(g for t, g in output.items() if T[t].vre) / total if total > 0 else 0.0
    return Dispatch(output, new_capacity, capacity, stock, composite, vre)


# --------------------------------------------------------------------------
# period solver
# --------------------------------------------------------------------------


def _node_weights(inst, model, root, year):
    w = {}
    for c in inst.tree:
        if inst.root_of.get(c) == root and c != root:
            w[c] = 1.0 * inst.calibrated_weights.get(c, 1.0)
    for t in inst.techs_under(root):
        w[t] = 0.0 if _banned(model, t, year) else _weight(model, inst, t, year)
    return w


class _Evaluator:
    """Maps resource prices to demands for one period; reused across iterations."""

    def __init__(self, model, state: PeriodState, carbon_price: float, bounds):
        inst, m = _unwrap(model)
        self.inst, self.model = inst, m
        self.state, self.tau, self.bounds = state, carbon_price, bounds
        ds = inst.dataset
        tg = ds.timegrid
        self.year = year = state.year + tg.step
        self.weights = {r: _node_weights(inst, m, r, year) for r in inst.roots}
        base = tg.base_year
        self.gdppc_ratio = ds.macro.gdp_per_capita[year] / ds.macro.gdp_per_capita[base]
        self.pop_ratio = ds.macro.population[year] / ds.macro.population[base]
        self.delivery = ds.parameter_group("delivery_cost")
        self.potentials = ds.parameter_group("potential_gw")
        self.removal_cap = ds.exogenous.get("dac_potential_mt", {}).get(year, 0.0)

    def evaluate(self, resource_prices):
        inst, year, tau = self.inst, self.year, self.tau
        T = inst.technologies
        prices = dict(resource_prices)
        leaf_costs: dict[str, dict[str, float]] = {}
        root_price: dict[str, float] = {}
        power = inst.power_root
        lev, _ = _power_costs(inst, self.model, year, prices, tau, self.state.vre_share)
        for commodity in inst.produced_order:
            root = inst.producers[commodity]
            w = self.weights[root]
            if root == power:
                costs = {t: c for t, c in lev.items() if w.get(t, 0) > 0}
            else:
                costs = {t: choice.levelized_cost(T[t], prices, tau, year=year)
                         for t in inst.techs_under(root) if w.get(t, 0) > 0}
            leaf_costs[root] = costs
            p, _ = choice.evaluate_tree(inst.tree, root, costs, w)
            if not math.isfinite(p) and inst.sectors[root].role == "removal":
                root_price[root] = math.inf  # no removal technology available yet
                continue
            if not math.isfinite(p):
                raise InfeasibleConstraintSet(f"{year}: nothing can produce {commodity}")
            root_price[root] = p
            prices[commodity] = p + self.delivery.get(commodity, 0.0)

        demand = {c: 0.0 for c in prices}
        output: dict[str, float] = {}
        services: dict[str, float] = {}

        def consume(tid, qty):
            output[tid] = output.get(tid, 0.0) + qty
            for c, f in inst.input_factors[tid]:
                demand[c] = demand.get(c, 0.0) + qty * f

        dispatch = None
        for commodity in reversed(inst.produced_order):
            root = inst.producers[commodity]
            node = inst.sectors[root]
            if node.role == "end-use":
                ratio = root_price[root] / inst.base_service_price[root]
                q = service_demand(inst.base_service[root], self.gdppc_ratio, ratio, self.pop_ratio,
                                   node.income_elasticity, node.price_elasticity)
                services[root] = q
            elif node.role == "removal":
                c = root_price[root]
                if not math.isfinite(c):
                    for t in inst.techs_under(root):
                        output.setdefault(t, 0.0)
                    continue
                s = choice.logit_shares([c, max(tau, choice.COST_FLOOR)], [1.0, 1.0],
                                        node.logit_exponent)[0]
                q = self.removal_cap * float(s)
            else:
                q = demand.get(commodity, 0.0)
            demand[commodity] = q
            if root == power:
                dispatch = dispatch_power(self.model or inst, year, q, self.state.stock, prices, tau,
                                          self.bounds, self.state.vre_share, self.potentials)
                for t, g in dispatch.tech_output.items():
                    consume(t, g)
                continue
            if q <= 0:
                for t in inst.techs_under(root):
                    output.setdefault(t, 0.0)
                continue
            _, shares = choice.evaluate_tree(inst.tree, root, leaf_costs[root], self.weights[root])
            for t in inst.techs_under(root):
                consume(t, q * shares.get(t, 0.0))
        return prices, demand, output, services, dispatch


def _market_step(resource, price, demand, cumulative, years):
    lo, hi = supply_range(resource, price, cumulative, years)
    supplied = min(max(demand, lo), hi)
    imbalance = abs(demand - supplied) / max(supplied, 1e-12)
    if imbalance == 0 or (demand <= 1e-15 and supplied <= 1e-15):
        return 0.0, supplied, 1.0
    ratio = demand / supplied if supplied > 0 else 16.0
    return imbalance, supplied, min(max(ratio, 1 / 16), 16.0)


def _snap(resource, old, new, cumulative, years):
    """Stop a price move at the first grade cost it crosses."""
    _, costs = _grade_table(resource, cumulative, years)
    if new > old:
        crossed = [c for c in costs if old < c < new]
        return min(crossed) if crossed else new
    crossed = [c for c in costs if new < c < old]
    return max(crossed) if crossed else new


def solve_period(model, state: PeriodState, carbon_price: float = 0.0, *,
                 bounds: tuple[Bound, ...] = (), tolerance: float = TOLERANCE,
                 max_iterations: int = MAX_ITERATIONS, damping: float = DAMPING,
                 start_prices: Mapping[str, float] | None = None) -> PeriodSolution:
    """Clear all markets in the period following ``state``.

    Damped tatonnement on resource prices, ``P <- P * (D/S)**eta``, starting
    from the previous period's prices.  A market whose adjustment changes
    direction has its own step halved, which settles prices that sit on a
    vertical segment of a stepped supply curve.  Prices stop at grade costs
    they would otherwise jump over.

    Raises :class:`NoConvergence` (carrying the best iterate) when the maximum
    relative imbalance is still above ``tolerance`` after ``max_iterations``.
    """
    if carbon_price < 0:
        raise ValueError("carbon price must be non-negative")
    inst, m = _unwrap(model)
    ds = inst.dataset
    step = ds.timegrid.step
    ev = _Evaluator(model, state, carbon_price, bounds)
    resources = ds.resources
    src = start_prices if start_prices is not None else state.prices
    P = {r: float(src.get(r, inst.base_prices.get(r, resources[r].grades[0][1]))) for r in resources}
    for r in P:
        if not P[r] > 0:
            P[r] = resources[r].grades[0][1]
    eta = {r: damping for r in resources}
    last_dir = {r: 0 for r in resources}
    years = {r: (step if resources[r].depletable else 1.0) for r in resources}
    cum = {r: state.cumulative.get(r, 0.0) for r in resources}

    best = None
    for it in range(1, max_iterations + 1):
        prices, demand, output, services, dispatch = ev.evaluate(P)
        worst = 0.0
        moves = {}
        for r in sorted(resources):
            imb, _, ratio = _market_step(resources[r], P[r], demand.get(r, 0.0), cum[r], years[r])
            worst = max(worst, imb)
            moves[r] = ratio
        if log.isEnabledFor(logging.DEBUG):
            log.debug("%d it %d worst %.3g %s", ev.year, it, worst,
                      " ".join(f"{r}={P[r]:.4g}/{demand.get(r, 0.0):.4g}" for r in sorted(resources)))
        if best is None or worst < best[0]:
            best = (worst, it, dict(P), prices, demand, output, services, dispatch)
        if worst < tolerance:
            break
        for r, ratio in moves.items():
            if ratio == 1.0:
                continue
            d = 1 if ratio > 1 else -1
            if last_dir[r] and d != last_dir[r]:
                eta[r] *= 0.5
            last_dir[r] = d
            new = P[r] * ratio ** eta[r]
            P[r] = _snap(resources[r], P[r], new, cum[r], years[r])
    else:
        worst, it, P, prices, demand, output, services, dispatch = best
        sol = _solution(inst, ev, carbon_price, P, prices, demand, output, services, dispatch,
                        worst, it, cum, years)
        raise NoConvergence(
            f"{ev.year}: markets did not clear in {max_iterations} iterations "
            f"(residual {worst:.3g})", solution=sol, residual=worst)
    return _solution(inst, ev, carbon_price, P, prices, demand, output, services, dispatch,
                     worst, it, cum, years)


def _solution(inst, ev, tau, P, prices, demand, output, services, dispatch, residual, it, cum, years):
    ds = inst.dataset
    scarce = []
    next_cum = dict(ev.state.cumulative)
    for r, res in ds.resources.items():
        _, flag = resource_quote(res, demand.get(r, 0.0), cum[r], years[r])
        if flag:
            scarce.append(r)
        if res.depletable:
            next_cum[r] = cum[r] + ds.timegrid.step * demand.get(r, 0.0)
    all_prices = dict(prices)
    all_prices.update(P)
    quantities = {c: q for c, q in demand.items()}
    final_energy: dict[str, dict[str, float]] = {}
    for root in inst.roots_with_role("end-use"):
        sector = inst.sectors[root].ledger_sector or root
        fe = final_energy.setdefault(sector, {})
        for t in inst.techs_under(root):
            for c, f in inst.input_factors[t]:
                if ds.commodities[c].unit == "EJ":
                    fe[c] = fe.get(c, 0.0) + output.get(t, 0.0) * f
    nxt = PeriodState(year=ev.year, stock=dispatch.stock, cumulative=next_cum,
                      prices=dict(P), vre_share=dispatch.vre_share)
    return PeriodSolution(
        year=ev.year,
        carbon_price=tau,
        prices=all_prices,
        quantities=quantities,
        tech_output=output,
        new_capacity=dispatch.new_capacity,
        capacity=dispatch.capacity,
        service_demand=services,
        final_energy=final_energy,
        residual=residual,
        iterations=it,
        scarce=tuple(sorted(scarce)),
        next_state=nxt,
    )
