"""Domain types and dataset validation.

A :class:`ModelDataset` is the raw, parsed description of the economy; it is
turned into an immutable :class:`ModelInstance` by :func:`build_model`, which
checks every type invariant, resolves cross references and calibrates logit
share weights to the base-year observations.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import choice
from .errors import (
    BadSharesSum,
    DanglingCommodity,
    InvalidEntity,
    MissingPrice,
    NonPositiveIntensity,
)

COMMODITY_KINDS = (
    "primary-resource",
    "secondary-carrier",
    "end-use-service",
    "storage-resource",
    "emissions-permit",
)

#: Base units per quantity unit.  Intensities are stated in base units of
#: input per base unit of output (GJ/GJ, t/GJ, GJ/pkm, ...) so that
#: ``price [$/base unit] * intensity`` is a cost per base unit of output.
UNIT_SCALE = {"EJ": 1e9, "Mt": 1e6, "bpkm": 1e9, "btkm": 1e9}

#: EJ produced by 1 GW running for one year.
EJ_PER_GW_YEAR = 8760 * 3600 / 1e9

ROOT_ROLES = ("power", "end-use", "supply", "removal")
LEDGER_SECTORS = ("power", "industry", "buildings", "transport", "other")


def interp_path(path, year, default=1.0):
    """Piecewise-linear interpolation over ``((year, value), ...)``, flat outside."""
    if not path:
        return default
    years = [p[0] for p in path]
    values = [p[1] for p in path]
    return float(np.interp(year, years, values))


@dataclass(frozen=True)
class TimeGrid:
    base_year: int = 2010
    first_model_year: int = 2015
    step: int = 5
    end_year: int = 2050

    def __post_init__(self):
        if not self.base_year < self.first_model_year:
            raise InvalidEntity("timegrid", "base_year must precede first_model_year")
        if self.step <= 0 or (self.end_year - self.first_model_year) % self.step:
            raise InvalidEntity("timegrid", "step must divide end_year - first_model_year")
        if (self.first_model_year - self.base_year) % self.step:
            raise InvalidEntity("timegrid", "base year must sit on the step lattice")
        if self.end_year > 2100 or self.end_year < self.first_model_year:
            raise InvalidEntity("timegrid", f"end_year {self.end_year} outside [{self.first_model_year}, 2100]")

    @property
    def years(self) -> tuple[int, ...]:
        """Model periods, excluding the base year."""
        return tuple(range(self.first_model_year, self.end_year + 1, self.step))

    @property
    def all_years(self) -> tuple[int, ...]:
        return (self.base_year,) + self.years

    def index(self, year: int) -> int:
        if year not in self.all_years:
            raise KeyError(year)
        return (year - self.base_year) // self.step

    def year(self, index: int) -> int:
        y = self.base_year + index * self.step
        if y not in self.all_years:
            raise KeyError(index)
        return y


@dataclass(frozen=True)
class Commodity:
    id: str
    kind: str
    unit: str

    @property
    def scale(self) -> float:
        return UNIT_SCALE[self.unit]


@dataclass(frozen=True)
class Technology:
    id: str
    nest: str
    output: str
    inputs: tuple[tuple[str, float], ...]
    non_energy_cost: float
    variable_om: float = 0.0
    emission_factor: float = 0.0
    capture_fraction: float = 0.0
    biogenic: bool = False
    vre: bool = False
    lifetime: int = 5
    capacity_factor: float = 1.0
    first_available_year: int = 0
    share_weight_path: tuple[tuple[int, float], ...] = ()
    cost_path: tuple[tuple[int, float], ...] = ()

    def non_energy_cost_at(self, year: int) -> float:
        return self.non_energy_cost * interp_path(self.cost_path, year)

    def share_multiplier(self, year: int) -> float:
        if year < self.first_available_year:
            return 0.0
        return interp_path(self.share_weight_path, year)

    def intensity(self, commodity: str) -> float:
        for c, v in self.inputs:
            if c == commodity:
                return v
        return 0.0


@dataclass(frozen=True)
class SectorNode:
    id: str
    parent: str = ""
    role: str = "nest"
    logit_exponent: float = -3.0
    output: str = ""
    unit: str = ""
    ledger_sector: str = ""
    income_elasticity: float = 0.0
    price_elasticity: float = 0.0

    @property
    def is_root(self) -> bool:
        return not self.parent


@dataclass(frozen=True)
class GradedResource:
    commodity: str
    kind: str
    unit: str
    grades: tuple[tuple[float, float], ...]
    depletable: bool = False

    @property
    def bounds(self) -> np.ndarray:
        """Cumulative quantity at the upper end of each grade."""
        return np.cumsum([q for q, _ in self.grades])

    @property
    def costs(self) -> tuple[float, ...]:
        return tuple(c for _, c in self.grades)


@dataclass(frozen=True)
class MacroDrivers:
    population: Mapping[int, float]
    gdp_per_capita: Mapping[int, float]

    def gdp(self, year: int) -> float:
        """GDP in 2020USD."""
        return self.population[year] * self.gdp_per_capita[year]


@dataclass(frozen=True)
class Observation:
    kind: str  # share | service | price
    entity: str
    value: float
    unit: str = ""


@dataclass(frozen=True)
class ModelDataset:
    timegrid: TimeGrid
    commodities: Mapping[str, Commodity]
    sectors: Mapping[str, SectorNode]
    technologies: Mapping[str, Technology]
    resources: Mapping[str, GradedResource]
    macro: MacroDrivers
    exogenous: Mapping[str, Mapping[int, float]]
    calibration: tuple[Observation, ...]
    history: Mapping[str, Mapping[int, float]]
    parameters: Mapping[str, float] = field(default_factory=dict)

    def parameter(self, name: str, default: float | None = None) -> float:
        if name in self.parameters:
            return self.parameters[name]
        if default is None:
            raise InvalidEntity(f"parameter {name}", "not defined in parameters table")
        return default

    def parameter_group(self, prefix: str) -> dict[str, float]:
        """Parameters named ``prefix.<key>`` as ``{key: value}``."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.parameters.items() if k.startswith(p)}


def _canonical(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return _canonical(asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): _canonical(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, float):
        return repr(obj)
    return obj


def checksum(obj) -> str:
    """Stable SHA-256 over a dataclass/mapping tree."""
    blob = json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class ModelInstance:
    """Validated, calibrated model.  Treat every field as read-only."""

    dataset: ModelDataset
    roots: Mapping[str, str]  # root node id -> output commodity
    producers: Mapping[str, str]  # produced commodity -> root node id
    tree: Mapping[str, tuple[float, tuple[str, ...]]]
    root_of: Mapping[str, str]  # technology / nest id -> root node id
    calibrated_weights: Mapping[str, float]
    base_prices: Mapping[str, float]
    base_service: Mapping[str, float]
    base_service_price: Mapping[str, float]
    produced_order: tuple[str, ...]  # produced commodities, inputs before users
    input_factors: Mapping[str, tuple[tuple[str, float], ...]]  # input qty per output qty

    @property
    def timegrid(self) -> TimeGrid:
        return self.dataset.timegrid

    @property
    def technologies(self) -> Mapping[str, Technology]:
        return self.dataset.technologies

    @property
    def sectors(self) -> Mapping[str, SectorNode]:
        return self.dataset.sectors

    def roots_with_role(self, role: str) -> tuple[str, ...]:
        return tuple(r for r in self.roots if self.sectors[r].role == role)

    @property
    def power_root(self) -> str:
        return self.roots_with_role("power")[0]

    def techs_under(self, root: str) -> tuple[str, ...]:
        return tuple(t for t in self.technologies if self.root_of[t] == root)

    def share_weight(self, child: str, year: int) -> float:
        """Effective share weight in ``year``: calibrated reference times path multiplier.

        Children without a base-year observation use a reference weight of 1
        (relative to the largest calibrated weight in their nest).
        """
        ref = self.calibrated_weights.get(child, 1.0)
        tech = self.technologies.get(child)
        mult = tech.share_multiplier(year) if tech is not None else 1.0
        return ref * mult

    def checksum(self) -> str:
        return checksum(self)


def _validate_technology(t: Technology, ds: ModelDataset):
    for c, v in t.inputs:
        if not v > 0:
            raise NonPositiveIntensity(t.id, c, v)
    if not 0.0 <= t.capture_fraction <= 1.0:
        raise InvalidEntity(t.id, f"capture_fraction {t.capture_fraction} outside [0, 1]")
    if t.emission_factor < 0:
        raise InvalidEntity(t.id, "emission_factor must be >= 0")
    if t.lifetime < ds.timegrid.step:
        raise InvalidEntity(t.id, f"lifetime {t.lifetime} shorter than the time step")
    if not 0.0 < t.capacity_factor <= 1.0:
        raise InvalidEntity(t.id, f"capacity_factor {t.capacity_factor} outside (0, 1]")
    if t.non_energy_cost < 0 or t.variable_om < 0:
        raise InvalidEntity(t.id, "costs must be non-negative")
    if t.capture_fraction > 0:
        stores = [(c, v) for c, v in t.inputs
                  if c in ds.commodities and ds.commodities[c].kind == "storage-resource"]
        want = t.capture_fraction * t.emission_factor
        if len(stores) != 1 or not np.isclose(stores[0][1], want, rtol=1e-9, atol=1e-12):
            raise InvalidEntity(
                t.id, f"capture requires one storage-resource input with intensity {want!r}"
            )
    if t.nest not in ds.sectors:
        raise InvalidEntity(t.id, f"unknown nest '{t.nest}'")


def build_model(dataset: ModelDataset) -> ModelInstance:
    """Validate ``dataset`` and calibrate it into a runnable instance."""
    ds = dataset
    tg = ds.timegrid

    for cid, com in ds.commodities.items():
        if com.kind not in COMMODITY_KINDS:
            raise InvalidEntity(cid, f"unknown commodity kind '{com.kind}'")
        if com.unit not in UNIT_SCALE:
            raise InvalidEntity(cid, f"unknown unit '{com.unit}'")

    # sector tree
    children: dict[str, list[str]] = {s: [] for s in ds.sectors}
    for sid, node in ds.sectors.items():
        if not node.logit_exponent < 0:
            raise InvalidEntity(sid, "logit_exponent must be negative")
        if node.price_elasticity > 0:
            raise InvalidEntity(sid, "price_elasticity must be <= 0")
        if node.parent:
            if node.parent not in ds.sectors:
                raise InvalidEntity(sid, f"unknown parent '{node.parent}'")
            children[node.parent].append(sid)
        elif node.role not in ROOT_ROLES:
            raise InvalidEntity(sid, f"root role must be one of {ROOT_ROLES}")
        elif node.output not in ds.commodities:
            raise DanglingCommodity(sid, node.output)
    for tid, t in ds.technologies.items():
        _validate_technology(t, ds)
        children[t.nest].append(tid)

    root_of: dict[str, str] = {}
    for sid in ds.sectors:
        seen, cur = {sid}, sid
        while ds.sectors[cur].parent:
            cur = ds.sectors[cur].parent
            if cur in seen:
                raise InvalidEntity(sid, "sector tree contains a cycle")
            seen.add(cur)
        root_of[sid] = cur
        if not children[sid]:
            raise InvalidEntity(sid, "nest has no technologies")
    for tid, t in ds.technologies.items():
        root_of[tid] = root_of[t.nest]
        root = ds.sectors[root_of[tid]]
        if t.output != root.output:
            raise InvalidEntity(tid, f"output '{t.output}' differs from sector output '{root.output}'")

    roots = {s: n.output for s, n in ds.sectors.items() if n.is_root}
    producers: dict[str, str] = {}
    for r, out in roots.items():
        if out in producers:
            raise InvalidEntity(r, f"commodity '{out}' produced by two sectors")
        producers[out] = r
        if ds.commodities[out].unit != ds.sectors[r].unit and ds.sectors[r].unit:
            raise InvalidEntity(r, "sector unit differs from its commodity's unit")

    for tid, t in ds.technologies.items():
        for c, _ in t.inputs:
            if c not in producers and c not in ds.resources:
                raise DanglingCommodity(tid, c)
    for rid, res in ds.resources.items():
        if rid not in ds.commodities:
            raise DanglingCommodity(rid, rid)
        costs = res.costs
        if any(q <= 0 for q, _ in res.grades) or not res.grades:
            raise InvalidEntity(rid, "grade quantities must be positive")
        if any(b <= a for a, b in zip(costs, costs[1:])):
            raise InvalidEntity(rid, "grades must have strictly increasing cost")

    for y in tg.all_years:
        for label, series in (("population", ds.macro.population),
                              ("gdp_per_capita", ds.macro.gdp_per_capita)):
            if y not in series or not series[y] > 0:
                raise InvalidEntity(f"macro {label}", f"missing or non-positive in {y}")

    order = _produced_order(ds, producers, roots)
    tree = {s: (ds.sectors[s].logit_exponent, tuple(children[s])) for s in ds.sectors}

    # calibration
    base_prices = {o.entity: o.value for o in ds.calibration if o.kind == "price"}
    shares: dict[str, dict[str, float]] = {}
    for o in ds.calibration:
        if o.kind == "share":
            parent = (ds.technologies[o.entity].nest if o.entity in ds.technologies
                      else ds.sectors[o.entity].parent if o.entity in ds.sectors else None)
            if not parent:
                raise InvalidEntity(o.entity, "share observation for unknown or root entity")
            shares.setdefault(parent, {})[o.entity] = o.value
    for nest, obs in shares.items():
        total = sum(obs.values())
        if abs(total - 1.0) > 1e-9:
            raise BadSharesSum(nest, total)

    weights: dict[str, float] = {}
    base = tg.base_year
    node_price: dict[str, float] = {}

    def leaf_cost(tid):
        t = ds.technologies[tid]
        return choice.levelized_cost(t, base_prices, 0.0, year=base)

    def weight_now(child):
        ref = weights.get(child, 1.0)
        t = ds.technologies.get(child)
        return ref * (t.share_multiplier(base) if t is not None else 1.0)

    def calibrate(node):
        for ch in children[node]:
            if ch in ds.sectors:
                calibrate(ch)
        obs = shares.get(node)
        if obs:
            ids = list(obs)
            costs = [node_price[c] if c in ds.sectors else leaf_cost(c) for c in ids]
            b = choice.calibrate_share_weights([obs[c] for c in ids], costs,
                                               ds.sectors[node].logit_exponent)
            weights.update(zip(ids, map(float, b)))
        costs, wts = [], []
        for ch in children[node]:
            if ch in ds.sectors:
                c = node_price.get(ch, np.inf)
            else:
                try:
                    c = leaf_cost(ch)
                except MissingPrice:
                    c = np.inf
            w = weight_now(ch)
            if np.isfinite(c) and w > 0:
                costs.append(c)
                wts.append(w)
        node_price[node] = (choice.nest_price(costs, wts, ds.sectors[node].logit_exponent)
                            if costs else np.inf)

    for r in roots:
        calibrate(r)

    base_service = {o.entity: o.value for o in ds.calibration if o.kind == "service"}
    base_service_price = {}
    for r in roots:
        if ds.sectors[r].role == "end-use":
            if r not in base_service:
                raise InvalidEntity(r, "end-use sector has no base service observation")
            if not np.isfinite(node_price[r]):
                raise InvalidEntity(r, "no technology is priced in the base year")
            base_service_price[r] = node_price[r]

    factors = {
        tid: tuple((c, v * ds.commodities[t.output].scale / ds.commodities[c].scale)
                   for c, v in t.inputs)
        for tid, t in ds.technologies.items()
    }

    return ModelInstance(
        dataset=ds,
        roots=roots,
        producers=producers,
        tree=tree,
        root_of=root_of,
        calibrated_weights=weights,
        base_prices=base_prices,
        base_service=base_service,
        base_service_price=base_service_price,
        produced_order=order,
        input_factors=factors,
    )


def _produced_order(ds, producers, roots):
    """Topological order of produced commodities by input dependency."""
    deps = {c: set() for c in producers}
    for t in ds.technologies.values():
        out = t.output
        for c, _ in t.inputs:
            if c in producers and c != out:
                deps[out].add(c)
    order: list[str] = []
    state: dict[str, int] = {}

    def visit(c):
        if state.get(c) == 2:
            return
        if state.get(c) == 1:
            raise InvalidEntity(c, "circular dependency between produced commodities")
        state[c] = 1
        for d in sorted(deps[c]):
            visit(d)
        state[c] = 2
        order.append(c)

    for c in sorted(deps):
        visit(c)
    return tuple(order)
