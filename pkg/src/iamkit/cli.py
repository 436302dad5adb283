"""``iam`` command line: run, compare, feasibility, validate."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .core import build_model
from .errors import IAMError
from .io import (
    DATA_DIR,
    SCENARIO_DIR,
    SHIPPED_SCENARIOS,
    compare,
    load_dataset,
    run_many,
    run_scenario,
    summary,
)
from .scenario import load_scenario

log = logging.getLogger("iamkit")


def _scenario_paths(args) -> list[Path]:
    if args.scenario:
        return [Path(p) for p in args.scenario]
    return [SCENARIO_DIR / f"{n}.cfg" for n in SHIPPED_SCENARIOS]


def cmd_run(args) -> int:
    dirs = run_many(args.data, _scenario_paths(args), args.out, end_year=args.end_year,
                    jobs=args.jobs)
    for d in dirs:
        print(d)
    return 0


def cmd_compare(args) -> int:
    print(compare(args.runs, args.out))
    return 0


def cmd_feasibility(args) -> int:
    inst = build_model(load_dataset(args.data, end_year=args.end_year))
    for path in _scenario_paths(args):
        result = run_scenario(inst, load_scenario(path))
        print(f"[{result.scenario.name}]")
        for k, v in summary(result).items():
            print(f"  {k:32s} {v:.6g}" if isinstance(v, float) else f"  {k:32s} {v}")
        for line in result.feasibility.violations:
            print(f"  VIOLATION {line}")
    return 0


def cmd_validate(args) -> int:
    ds = load_dataset(args.data, end_year=args.end_year)
    inst = build_model(ds)
    roots = {r: inst.sectors[r].role for r in inst.roots}
    print(f"dataset {args.data}: {len(inst.technologies)} technologies, {len(roots)} sectors "
          f"({', '.join(f'{r}:{role}' for r, role in roots.items())}), "
          f"periods {inst.timegrid.years[0]}-{inst.timegrid.years[-1]}")
    print(f"checksum {inst.checksum()}")
    for path in _scenario_paths(args):
        cfg = load_scenario(path)
        print(f"scenario {path}: ok ({cfg.name})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iam", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenarios=True):
        sp.add_argument("--data", default=str(DATA_DIR), help="dataset directory (default: shipped Korea data)")
        sp.add_argument("--end-year", type=int, default=None, help="last model period (<= 2100)")
        if scenarios:
            sp.add_argument("--scenario", action="append", default=[],
                            help="scenario file; repeat for several (default: the four shipped ones)")

    sp = sub.add_parser("run", help="solve scenarios and write result CSVs")
    common(sp)
    sp.add_argument("--out", default="results", help="output directory")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="join written runs into comparison.csv")
    sp.add_argument("runs", nargs="+", help="run directories written by 'iam run'")
    sp.add_argument("--out", default="comparison.csv", help="output file or directory")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("feasibility", help="run scenarios and print the feasibility dashboard")
    common(sp)
    sp.set_defaults(func=cmd_feasibility)

    sp = sub.add_parser("validate", help="check a dataset and scenario files without solving")
    common(sp)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    level = os.environ.get("IAM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IAMError as exc:
        print(f"iam: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
