from __future__ import annotations

from pathlib import Path

import pytest

from iamkit.core import build_model
from iamkit.io import load_dataset, run_scenario, shipped_scenario

TOY_TABLES = {
    "sectors.csv": """id,parent,role,logit_exponent,output,unit,ledger_sector,income_elasticity,price_elasticity
power,,power,-3,electricity,EJ,power,0,0
svc,,end-use,-3,service,EJ,industry,0,-0.5
""",
    "technologies.csv": """id,nest,output,inputs,non_energy_cost,variable_om,emission_factor,capture_fraction,biogenic,vre,lifetime,capacity_factor,first_available_year,share_weight_path,cost_path
plant,power,electricity,fuel:2,10,0,0.1,0,0,0,30,1,0,,
use,svc,service,electricity:1,5,0,0,0,0,0,5,1,0,,
""",
    "resources.csv": """commodity,kind,unit,grade,quantity,cost,depletable
fuel,primary-resource,EJ,1,1,2,0
fuel,primary-resource,EJ,2,0.5,8,0
""",
    "macro.csv": """year,population_million,gdp_per_capita_usd,lulucf_sink_mt,dac_potential_mt
2010,1,1000,0,0
2015,1,1000,0,0
2020,1,1000,0,0
""",
    "calibration.csv": """kind,entity,value,unit
price,fuel,2,USD/GJ
price,electricity,14,USD/GJ
service,svc,1.2,EJ
""",
    "history.csv": """technology,year,capacity_gw
""",
    "parameters.csv": """name,value,unit
timegrid.base_year,2010,year
timegrid.first_model_year,2015,year
timegrid.step,5,year
timegrid.end_year,2020,year
""",
}


def write_dataset(directory: Path, **overrides) -> Path:
    """Write the toy fuel -> electricity -> service dataset, replacing any tables given."""
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in TOY_TABLES.items():
        key = name.removesuffix(".csv")
        (directory / name).write_text(overrides.get(key, text))
    return directory


@pytest.fixture
def toy_dir(tmp_path):
    return write_dataset(tmp_path / "toy")


@pytest.fixture
def toy_instance(toy_dir):
    return build_model(load_dataset(toy_dir))


@pytest.fixture(scope="session")
def korea():
    return build_model(load_dataset())


@pytest.fixture(scope="session")
def shipped_runs(korea):
    """All four shipped scenarios solved once for the whole session."""
    names = ("curpol", "nz2050", "nz2050_nuc", "nz2050_limccs")
    return {n: run_scenario(korea, shipped_scenario(n)) for n in names}


#: ``(criterion number, passed, detail)`` filled in by the acceptance tests.
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
