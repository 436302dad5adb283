"""Greenhouse-gas bookkeeping over solved periods.

Sign conventions: ``gross`` is CO2 released to the atmosphere after capture,
``captured`` is CO2 sent to storage by emitting technologies, ``negative``
holds removals (all non-negative numbers).  Net national emissions are
``sum(gross) - sum(negative) + wedge`` where the wedge is the exogenous
non-CO2 and process-emission block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import LEDGER_SECTORS, ModelInstance, interp_path
from .errors import EmptySector, NoNegativeEmissions, ZeroGeneration

NET_SOURCES = ("DAC", "BECCS", "LULUCF")
#: g/kWh per Mt/TWh
G_PER_KWH = 1000.0
TWH_PER_EJ = 1e6 / 3600


@dataclass(frozen=True)
class LedgerRow:
    year: int
    gross: Mapping[str, float]
    captured: Mapping[str, float]
    negative: Mapping[str, float]
    wedge: float
    dac_stored: float = 0.0

    @property
    def net(self) -> float:
        return sum(self.gross.values()) - sum(self.negative.values()) + self.wedge

    @property
    def total_gross(self) -> float:
        return sum(self.gross.values())

    @property
    def total_negative(self) -> float:
        return sum(self.negative.values())

    @property
    def stored(self) -> float:
        """CO2 injected into storage: capture at emitting plants plus DAC."""
        return sum(self.captured.values()) + self.dac_stored


class EmissionsLedger(dict):
    """``{year: LedgerRow}`` in period order."""

    def net_series(self) -> dict[int, float]:
        return {y: r.net for y, r in self.items()}


def nonco2_wedge(instance: ModelInstance, year: int) -> float:
    """Exogenous non-CO2 and process emissions, declining linearly to a floor."""
    ds = instance.dataset
    base = ds.parameter("nonco2_base_mt", 0.0)
    frac = ds.parameter("nonco2_final_fraction", 1.0)
    target = int(ds.parameter("nonco2_target_year", 2050))
    b = ds.timegrid.base_year
    return base * interp_path(((b, 1.0), (target, frac)), year)


def account_emissions(solution, instance: ModelInstance) -> LedgerRow:
    """Build the ledger row for one solved period."""
    inst = instance
    T = inst.technologies
    gross = {s: 0.0 for s in LEDGER_SECTORS}
    captured = {s: 0.0 for s in LEDGER_SECTORS}
    negative = {s: 0.0 for s in NET_SOURCES}
    dac = 0.0
    for tid in sorted(solution.tech_output):
        out = solution.tech_output[tid]
        if out <= 0:
            continue
        t = T[tid]
        root = inst.root_of[tid]
        node = inst.sectors[root]
        if node.role == "removal":
            dac += out
            negative["DAC"] += out
            continue
        e = t.emission_factor
        if not e:
            continue
        sector = node.ledger_sector or "other"
        mt = out * inst.dataset.commodities[t.output].scale * e / 1e6
        cap = t.capture_fraction * mt
        captured[sector] += cap
        if t.biogenic:
            negative["BECCS"] += cap
        else:
            gross[sector] += mt - cap
    negative["LULUCF"] = inst.dataset.exogenous.get("lulucf_sink_mt", {}).get(solution.year, 0.0)
    return LedgerRow(year=solution.year, gross=gross, captured=captured, negative=negative,
                     wedge=nonco2_wedge(inst, solution.year), dac_stored=dac)


def net_emissions(solution, instance: ModelInstance) -> float:
    return account_emissions(solution, instance).net


def carbon_intensity_power(row: LedgerRow, generation_twh: float) -> float:
    """Power-sector carbon intensity (gCO2/kWh); BECCS removals count against power."""
    if not generation_twh > 0:
        raise ZeroGeneration("generation must be positive")
    net = row.gross.get("power", 0.0) - row.negative.get("BECCS", 0.0)
    return net / generation_twh * G_PER_KWH


def nets_breakdown(ledger, year: int | None = None) -> dict[str, float]:
    """Shares of DAC, BECCS and LULUCF in total removals."""
    row = ledger if isinstance(ledger, LedgerRow) else ledger[year]
    total = sum(row.negative.get(s, 0.0) for s in NET_SOURCES)
    if not total > 0:
        raise NoNegativeEmissions(f"no removals in {row.year}")
    return {s: row.negative.get(s, 0.0) / total for s in NET_SOURCES}


def electrification_share(solution, sector: str) -> float:
    """Electricity as a fraction of the sector's final energy (feedstocks excluded)."""
    fe = solution.final_energy.get(sector, {})
    total = sum(fe.values())
    if not total > 0:
        raise EmptySector(f"sector '{sector}' has no final energy in {solution.year}")
    return fe.get("electricity", 0.0) / total


def generation_twh(solution) -> float:
    return solution.generation * TWH_PER_EJ


def power_intensity_series(solutions, ledger) -> dict[int, float]:
    return {s.year: carbon_intensity_power(ledger[s.year], generation_twh(s)) for s in solutions}


def sector_table(row: LedgerRow) -> dict[str, float]:
    """Net emissions by sector, negatives booked to their host sector."""
    out = dict(row.gross)
    out["power"] = out.get("power", 0.0) - row.negative.get("BECCS", 0.0)
    out["other"] = out.get("other", 0.0) + row.wedge
    out["DAC"] = -row.negative.get("DAC", 0.0)
    out["LULUCF"] = -row.negative.get("LULUCF", 0.0)
    assert np.isclose(sum(out.values()), row.net, atol=1e-9)
    return out
