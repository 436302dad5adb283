"""Dataset tables on disk, result CSVs and run orchestration.

A dataset directory holds seven comma-separated UTF-8 tables with a header
row.  Headers must match the schemas below exactly (any order); unknown or
missing columns are rejected with the row and column named.

``technologies.csv``
    id, nest, output, inputs, non_energy_cost, variable_om, emission_factor,
    capture_fraction, biogenic, vre, lifetime, capacity_factor,
    first_available_year, share_weight_path, cost_path.  ``inputs`` is
    ``commodity:intensity`` pairs separated by ``;``; the two paths are
    ``year:multiplier`` pairs separated by ``;``.
``sectors.csv``
    id, parent, role, logit_exponent, output, unit, ledger_sector,
    income_elasticity, price_elasticity.  Root rows (empty parent) declare
    the commodity they produce and its unit.
``resources.csv``
    commodity, kind, unit, grade, quantity, cost, depletable.  One row per grade.
``macro.csv``
    year, population_million, gdp_per_capita_usd, lulucf_sink_mt, dac_potential_mt.
``calibration.csv``
    kind, entity, value, unit.  ``kind`` is share, price or service.
``history.csv``
    technology, year, capacity_gw.
``parameters.csv``
    name, value, unit.  Scalars, including the time grid (``timegrid.*``).
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .core import (
    Commodity,
    GradedResource,
    MacroDrivers,
    ModelDataset,
    Observation,
    SectorNode,
    Technology,
    TimeGrid,
    build_model,
)
from .emissions import TWH_PER_EJ, electrification_share, generation_twh, carbon_intensity_power
from .errors import EmptySector, MissingTable, SchemaViolation
from .feasibility import assess, capacity_multiple
from .policy import RunResult, apply_scenario, run_horizon
from .scenario import ScenarioConfig, load_scenario

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data" / "korea"
SCENARIO_DIR = Path(__file__).parent / "scenarios"
SHIPPED_SCENARIOS = ("curpol", "nz2050", "nz2050_nuc", "nz2050_limccs")

SCHEMAS = {
    "technologies.csv": ("id", "nest", "output", "inputs", "non_energy_cost", "variable_om",
                         "emission_factor", "capture_fraction", "biogenic", "vre", "lifetime",
                         "capacity_factor", "first_available_year", "share_weight_path",
                         "cost_path"),
    "sectors.csv": ("id", "parent", "role", "logit_exponent", "output", "unit", "ledger_sector",
                    "income_elasticity", "price_elasticity"),
    "resources.csv": ("commodity", "kind", "unit", "grade", "quantity", "cost", "depletable"),
    "macro.csv": ("year", "population_million", "gdp_per_capita_usd", "lulucf_sink_mt",
                  "dac_potential_mt"),
    "calibration.csv": ("kind", "entity", "value", "unit"),
    "history.csv": ("technology", "year", "capacity_gw"),
    "parameters.csv": ("name", "value", "unit"),
}

#: commodity kind implied by the role of the sector that produces it
ROLE_KIND = {
    "power": "secondary-carrier",
    "supply": "secondary-carrier",
    "end-use": "end-use-service",
    "removal": "emissions-permit",
}


# --------------------------------------------------------------------------
# reading
# --------------------------------------------------------------------------


class _Table:
    def __init__(self, name, rows):
        self.name, self.rows = name, rows

    def __iter__(self):
        return iter(self.rows)


class _Row(dict):
    """A table row that knows where it came from and parses its own cells."""

    def __init__(self, table, line, data):
        super().__init__(data)
        self.table, self.line = table, line

    def fail(self, column, reason):
        raise SchemaViolation(self.table, self.line, column, reason)

    def text(self, column, required=True):
        v = self[column].strip()
        if required and not v:
            self.fail(column, "value required")
        return v

    def num(self, column, default=None):
        v = self[column].strip()
        if not v and default is not None:
            return default
        try:
            return float(v)
        except ValueError:
            self.fail(column, f"expected a number, got '{v}'")

    def int(self, column, default=None):
        x = self.num(column, default)
        if x != int(x):
            self.fail(column, f"expected an integer, got '{self[column]}'")
        return int(x)

    def flag(self, column):
        v = self[column].strip().lower()
        if v in ("", "0", "false", "no"):
            return False
        if v in ("1", "true", "yes"):
            return True
        self.fail(column, f"expected 0/1, got '{v}'")

    def pairs(self, column, key=str):
        """``a:1;b:2`` -> ``((a, 1.0), (b, 2.0))``"""
        v = self[column].strip()
        out = []
        if not v:
            return ()
        for part in v.split(";"):
            if ":" not in part:
                self.fail(column, f"expected key:value pairs, got '{part}'")
            k, x = part.split(":", 1)
            try:
                out.append((key(k.strip()), float(x)))
            except ValueError:
                self.fail(column, f"bad pair '{part}'")
        return tuple(out)


def read_table(directory: Path, name: str) -> _Table:
    path = Path(directory) / name
    if not path.is_file():
        raise MissingTable(name, str(directory))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaViolation(name, 1, "", "empty table (no header row)") from None
        want = SCHEMAS[name]
        for h in header:
            if h not in want:
                raise SchemaViolation(name, 1, h, "unknown column")
        for w in want:
            if w not in header:
                raise SchemaViolation(name, 1, w, "missing column")
        if len(set(header)) != len(header):
            raise SchemaViolation(name, 1, "", "duplicate column")
        rows = []
        for line, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if cells[0].lstrip().startswith("#"):
                continue
            if len(cells) != len(header):
                raise SchemaViolation(name, line, "", f"expected {len(header)} cells, got {len(cells)}")
            rows.append(_Row(name, line, dict(zip(header, cells))))
    return _Table(name, rows)


def load_dataset(path=DATA_DIR, *, end_year: int | None = None) -> ModelDataset:
    """Parse and schema-check a dataset directory (type invariants are checked by ``build_model``)."""
    d = Path(path)
    if not d.is_dir():
        raise MissingTable("technologies.csv", str(d))
    tables = {name: read_table(d, name) for name in SCHEMAS}

    params = {}
    for r in tables["parameters.csv"]:
        name = r.text("name")
        if name in params:
            r.fail("name", f"duplicate parameter '{name}'")
        params[name] = r.num("value")

    tg_kwargs = {k: int(params[f"timegrid.{k}"]) for k in ("base_year", "first_model_year", "step",
                                                           "end_year") if f"timegrid.{k}" in params}
    if end_year is not None:
        tg_kwargs["end_year"] = int(end_year)
    timegrid = TimeGrid(**tg_kwargs)

    sectors, commodities = {}, {}
    for r in tables["sectors.csv"]:
        sid = r.text("id")
        if sid in sectors:
            r.fail("id", f"duplicate sector '{sid}'")
        parent = r.text("parent", required=False)
        role = r.text("role") if not parent else (r.text("role", required=False) or "nest")
        node = SectorNode(
            id=sid, parent=parent, role=role, logit_exponent=r.num("logit_exponent"),
            output=r.text("output", required=not parent), unit=r.text("unit", required=not parent),
            ledger_sector=r.text("ledger_sector", required=False),
            income_elasticity=r.num("income_elasticity", 0.0),
            price_elasticity=r.num("price_elasticity", 0.0),
        )
        sectors[sid] = node
        if not parent:
            if role not in ROLE_KIND:
                r.fail("role", f"root role must be one of {sorted(ROLE_KIND)}")
            commodities[node.output] = Commodity(node.output, ROLE_KIND[role], node.unit)

    grades: dict[str, list] = {}
    meta = {}
    for r in tables["resources.csv"]:
        c = r.text("commodity")
        m = (r.text("kind"), r.text("unit"), r.flag("depletable"))
        if c in meta and meta[c] != m:
            r.fail("kind", f"grades of '{c}' disagree on kind, unit or depletable")
        meta[c] = m
        grades.setdefault(c, []).append((r.int("grade"), r.num("quantity"), r.num("cost"), r))
    resources = {}
    for c, gs in grades.items():
        gs.sort(key=lambda g: g[0])
        if [g[0] for g in gs] != list(range(1, len(gs) + 1)):
            gs[0][3].fail("grade", f"grades of '{c}' must be numbered 1..n")
        kind, unit, dep = meta[c]
        resources[c] = GradedResource(c, kind, unit, tuple((q, cost) for _, q, cost, _ in gs), dep)
        if c in commodities:
            gs[0][3].fail("commodity", f"'{c}' is both produced and a resource")
        commodities[c] = Commodity(c, kind, unit)

    techs = {}
    for r in tables["technologies.csv"]:
        tid = r.text("id")
        if tid in techs:
            r.fail("id", f"duplicate technology '{tid}'")
        techs[tid] = Technology(
            id=tid, nest=r.text("nest"), output=r.text("output"), inputs=r.pairs("inputs"),
            non_energy_cost=r.num("non_energy_cost"), variable_om=r.num("variable_om", 0.0),
            emission_factor=r.num("emission_factor", 0.0),
            capture_fraction=r.num("capture_fraction", 0.0), biogenic=r.flag("biogenic"),
            vre=r.flag("vre"), lifetime=r.int("lifetime", timegrid.step),
            capacity_factor=r.num("capacity_factor", 1.0),
            first_available_year=r.int("first_available_year", 0),
            share_weight_path=r.pairs("share_weight_path", int),
            cost_path=r.pairs("cost_path", int),
        )

    pop, gdppc, exo = {}, {}, {"lulucf_sink_mt": {}, "dac_potential_mt": {}}
    for r in tables["macro.csv"]:
        y = r.int("year")
        if y in pop:
            r.fail("year", f"duplicate year {y}")
        pop[y] = r.num("population_million") * 1e6
        gdppc[y] = r.num("gdp_per_capita_usd")
        for k in exo:
            exo[k][y] = r.num(k, 0.0)

    calibration = []
    for r in tables["calibration.csv"]:
        kind = r.text("kind")
        if kind not in ("share", "price", "service"):
            r.fail("kind", f"unknown observation kind '{kind}'")
        calibration.append(Observation(kind, r.text("entity"), r.num("value"),
                                       r.text("unit", required=False)))

    history: dict[str, dict[int, float]] = {}
    for r in tables["history.csv"]:
        gw = r.num("capacity_gw")
        if gw < 0:
            r.fail("capacity_gw", "capacity must be non-negative")
        history.setdefault(r.text("technology"), {})[r.int("year")] = gw

    return ModelDataset(
        timegrid=timegrid, commodities=commodities, sectors=sectors, technologies=techs,
        resources=resources, macro=MacroDrivers(pop, gdppc), exogenous=exo,
        calibration=tuple(calibration), history=history, parameters=params,
    )


def shipped_scenario(name: str) -> ScenarioConfig:
    return load_scenario(SCENARIO_DIR / f"{name}.cfg")


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


def run_scenario(instance, scenario: ScenarioConfig, *, feasibility: bool = True,
                 n_samples: int = 8) -> RunResult:
    model = apply_scenario(instance, scenario)
    result = run_horizon(model)
    if feasibility:
        result.feasibility = assess(result, n_samples)
    return result


def _run_job(args):
    data, cfg_path, end_year, out = args
    inst = build_model(load_dataset(data, end_year=end_year))
    scen = load_scenario(cfg_path)
    result = run_scenario(inst, scen)
    return str(write_run(result, out))


def run_many(data, scenario_paths, out, *, end_year=None, jobs=1) -> list[Path]:
    """Run each scenario file and write its results; ``jobs > 1`` uses worker processes."""
    args = [(str(data), str(p), end_year, str(out)) for p in scenario_paths]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return [Path(p) for p in pool.map(_run_job, args)]
    inst = build_model(load_dataset(data, end_year=end_year))
    return [write_run(run_scenario(inst, load_scenario(p)), out) for p in scenario_paths]


# --------------------------------------------------------------------------
# writing
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        if x == 0:
            return "0"
        return format(x, ".10g")
    return str(x)


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def result_tables(result: RunResult) -> dict[str, str]:
    """Render every result CSV as text, keyed by file name."""
    inst = result.instance
    power = inst.techs_under(inst.power_root)
    files = {}

    rows = []
    for y, row in result.ledger.items():
        for s, v in row.gross.items():
            rows.append((y, "gross", s, v))
        for s, v in row.captured.items():
            rows.append((y, "captured", s, v))
        for s, v in row.negative.items():
            rows.append((y, "negative", s, v))
        rows.append((y, "wedge", "nonco2", row.wedge))
        rows.append((y, "stored", "total", row.stored))
        rows.append((y, "net", "total", row.net))
    files["emissions.csv"] = _csv_text(("year", "category", "item", "value_MtCO2e"), rows)

    rows = []
    for y, sol in result.solutions.items():
        for t in power:
            rows.append((y, t, sol.tech_output.get(t, 0.0) * TWH_PER_EJ))
    files["generation.csv"] = _csv_text(("year", "technology", "generation_TWh"), rows)

    rows = []
    for y, sol in result.solutions.items():
        for sector in sorted(sol.final_energy):
            for carrier in sorted(sol.final_energy[sector]):
                rows.append((y, sector, carrier, sol.final_energy[sector][carrier]))
    files["final_energy.csv"] = _csv_text(("year", "sector", "carrier", "final_energy_EJ"), rows)

    rows = []
    for y, sol in result.solutions.items():
        for t in power:
            rows.append((y, t, sol.capacity.get(t, 0.0), sol.new_capacity.get(t, 0.0)))
    files["capacity.csv"] = _csv_text(("year", "technology", "capacity_GW", "new_capacity_GW"), rows)

    rows = []
    com = inst.dataset.commodities
    for y, sol in result.solutions.items():
        rows.append((y, "carbon", result.carbon_price[y], "USD/tCO2"))
        for c in sorted(sol.prices):
            unit = {"EJ": "USD/GJ", "Mt": "USD/t", "bpkm": "USD/pkm", "btkm": "USD/tkm"}[com[c].unit]
            rows.append((y, c, sol.prices[c], unit))
    files["prices.csv"] = _csv_text(("year", "commodity", "price", "price_unit"), rows)

    rep = result.feasibility if result.feasibility is not None else assess(result)
    files["feasibility.csv"] = _csv_text(("period", "metric", "value", "unit"), rep.rows())
    return files


def write_run(result: RunResult, out) -> Path:
    """Write ``<out>/<scenario>/`` with six CSVs and ``manifest.json``."""
    d = Path(out) / result.scenario.name
    d.mkdir(parents=True, exist_ok=True)
    files = result_tables(result)
    digests = {}
    for name, text in files.items():
        (d / name).write_text(text, encoding="utf-8")
        digests[name] = hashlib.sha256(text.encode()).hexdigest()
    manifest = {
        "scenario": result.scenario.name,
        "config": result.scenario.to_text(),
        "provenance": result.provenance,
        "periods": list(result.solutions),
        "files": digests,
        "tool_version": __version__,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    log.info("wrote %s", d)
    return d


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------


def _read_rows(path: Path):
    if not path.is_file():
        raise MissingTable(path.name, str(path.parent))
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def run_metrics(run_dir) -> list[tuple[int, str, float, str]]:
    """Headline ``(year, metric, value, unit)`` series of one written run."""
    d = Path(run_dir)
    out = []
    for r in _read_rows(d / "emissions.csv"):
        if r["category"] == "net":
            out.append((int(r["year"]), "net_emissions", float(r["value_MtCO2e"]), "MtCO2e"))
        if r["category"] == "stored":
            out.append((int(r["year"]), "co2_stored", float(r["value_MtCO2e"]), "MtCO2/yr"))
    for r in _read_rows(d / "prices.csv"):
        if r["commodity"] in ("carbon", "electricity"):
            out.append((int(r["year"]), f"price_{r['commodity']}", float(r["price"]), r["price_unit"]))
    gen: dict[int, float] = {}
    for r in _read_rows(d / "generation.csv"):
        y = int(r["year"])
        gen[y] = gen.get(y, 0.0) + float(r["generation_TWh"])
        out.append((y, f"generation_{r['technology']}", float(r["generation_TWh"]), "TWh"))
    for y, v in gen.items():
        out.append((y, "generation_total", v, "TWh"))
    for r in _read_rows(d / "capacity.csv"):
        out.append((int(r["year"]), f"capacity_{r['technology']}", float(r["capacity_GW"]), "GW"))
    fe: dict[tuple[int, str], dict[str, float]] = {}
    for r in _read_rows(d / "final_energy.csv"):
        fe.setdefault((int(r["year"]), r["sector"]), {})[r["carrier"]] = float(r["final_energy_EJ"])
    for (y, s), carriers in fe.items():
        total = sum(carriers.values())
        if total > 0:
            out.append((y, f"electrification_{s}", carriers.get("electricity", 0.0) / total, "fraction"))
    for r in _read_rows(d / "feasibility.csv"):
        if r["metric"] in ("policy_cost", "storage_cumulative"):
            out.append((int(r["period"]), r["metric"], float(r["value"]), r["unit"]))
    return sorted(out, key=lambda x: (x[1], x[0]))


def compare(run_dirs, out_path) -> Path:
    """Join several written runs into ``comparison.csv`` keyed by (scenario, period, metric)."""
    rows = []
    for d in run_dirs:
        d = Path(d)
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8")) \
            if (d / "manifest.json").is_file() else {"scenario": d.name}
        name = manifest["scenario"]
        for y, metric, value, unit in run_metrics(d):
            rows.append((name, y, metric, value, unit))
    rows.sort(key=lambda r: (r[0], r[2], r[1]))
    out_path = Path(out_path)
    if out_path.is_dir() or not out_path.suffix:
        out_path.mkdir(parents=True, exist_ok=True)
        out_path = out_path / "comparison.csv"
    out_path.write_text(_csv_text(("scenario", "period", "metric", "value", "unit"), rows),
                        encoding="utf-8")
    return out_path


def summary(result: RunResult) -> dict[str, float]:
    """A few headline 2050 (or final-period) numbers for terminal output."""
    y = list(result.solutions)[-1]
    sol = result.solutions[y]
    row = result.ledger[y]
    out = {
        "year": y,
        "net_emissions_Mt": row.net,
        "carbon_price_USD_per_t": result.carbon_price[y],
        "generation_TWh": generation_twh(sol),
        "power_intensity_g_per_kWh": carbon_intensity_power(row, generation_twh(sol)),
    }
    for s in sorted(sol.final_energy):
        try:
            out[f"electrification_{s}"] = electrification_share(sol, s)
        except EmptySector:
            pass
    caps = {t: {yy: result.solutions[yy].capacity.get(t, 0.0) for yy in result.solutions}
            for t in ("solar", "wind-on", "wind-off")}
    if 2020 in result.solutions:
        out["solar_multiple_2020"] = capacity_multiple(caps["solar"], 2020, y)
    rep = result.feasibility
    if rep is not None:
        if rep.policy_cost:
            out["policy_cost_pct_gdp"] = rep.policy_cost.get(y, 0.0)
        out["storage_cumulative_Gt"] = rep.storage.final
    return out
