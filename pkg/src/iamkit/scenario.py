"""Scenario definition files.

A scenario is a flat ``key = value`` text file, one key per line, ``#``
starting a comment.  Every key is required::

    name = NZ2050
    cap = linear(2050)
    nuclear_new_builds = banned_after:2024
    storage_cost_usd_per_t = 1000
    dac_cost_usd_per_t = 200
    exogenous_trajectories = none
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import BadValue, UnknownKey

KEYS = (
    "name",
    "cap",
    "nuclear_new_builds",
    "storage_cost_usd_per_t",
    "dac_cost_usd_per_t",
    "exogenous_trajectories",
)
PROFILES = ("none", "npsp")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    cap_netzero_year: int | None = None
    nuclear_banned_after: int | None = 2024
    storage_cost_usd_per_t: float = 1000.0
    dac_cost_usd_per_t: float = 200.0
    exogenous_trajectories: str = "none"

    @property
    def capped(self) -> bool:
        return self.cap_netzero_year is not None

    def to_text(self) -> str:
        cap = "none" if self.cap_netzero_year is None else f"linear({self.cap_netzero_year})"
        nuc = "free" if self.nuclear_banned_after is None else f"banned_after:{self.nuclear_banned_after}"
        lines = [
            f"name = {self.name}",
            f"cap = {cap}",
            f"nuclear_new_builds = {nuc}",
            f"storage_cost_usd_per_t = {_num(self.storage_cost_usd_per_t)}",
            f"dac_cost_usd_per_t = {_num(self.dac_cost_usd_per_t)}",
            f"exogenous_trajectories = {self.exogenous_trajectories}",
        ]
        return "\n".join(lines) + "\n"


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _cost(key, raw, lineno):
    try:
        v = float(raw)
    except ValueError:
        raise BadValue(f"line {lineno}: {key} must be a number, got '{raw}'") from None
    if not v > 0:
        raise BadValue(f"line {lineno}: {key} must be positive, got {raw}")
    return v


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    values: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadValue(f"{source}:{lineno}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise UnknownKey(f"{source}:{lineno}: unknown key '{key}'")
        if key in values:
            raise BadValue(f"{source}:{lineno}: duplicate key '{key}'")
        values[key] = (raw, lineno)
    missing = [k for k in KEYS if k not in values]
    if missing:
        raise BadValue(f"{source}: missing keys {', '.join(missing)}")

    name, _ = values["name"]
    if not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        raise BadValue(f"{source}: bad scenario name '{name}'")

    raw, ln = values["cap"]
    if raw == "none":
        cap = None
    else:
        m = re.fullmatch(r"linear\((\d{4})\)", raw)
        if not m:
            raise BadValue(f"{source}:{ln}: cap must be 'none' or 'linear(YEAR)', got '{raw}'")
        cap = int(m.group(1))

    raw, ln = values["nuclear_new_builds"]
    if raw == "free":
        nuc = None
    else:
        m = re.fullmatch(r"banned_after:(\d{4})", raw)
        if not m:
            raise BadValue(f"{source}:{ln}: nuclear_new_builds must be 'free' or 'banned_after:YEAR'")
        nuc = int(m.group(1))

    prof, ln = values["exogenous_trajectories"]
    if prof not in PROFILES:
        raise BadValue(f"{source}:{ln}: exogenous_trajectories must be one of {PROFILES}")

    return ScenarioConfig(
        name=name,
        cap_netzero_year=cap,
        nuclear_banned_after=nuc,
        storage_cost_usd_per_t=_cost("storage_cost_usd_per_t", *values["storage_cost_usd_per_t"]),
        dac_cost_usd_per_t=_cost("dac_cost_usd_per_t", *values["dac_cost_usd_per_t"]),
        exogenous_trajectories=prof,
    )


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), source=str(path))
