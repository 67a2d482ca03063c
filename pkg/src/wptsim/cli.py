"""Command line entry point: ``wptsim <scenario> --config <file> ...``.

Exit codes: 0 ok, 1 configuration error, 2 runtime or solver error,
3 a ``--check`` threshold failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import link_model as lm
from .delay_comp import ConvergenceError
from .rectifier_sim import SimulationError, SteadyStateError
from .scenarios import SCENARIOS
from .tx_controller import CalibrationError, PhaseMeasurementError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("wptsim")

RUNTIME_ERRORS = (SimulationError, SteadyStateError, ConvergenceError, lm.SolverError,
                  lm.InfeasibleError, CalibrationError, PhaseMeasurementError,
                  ArithmeticError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wptsim", description=__doc__.splitlines()[0])
    p.add_argument("scenario", help="one of: " + ", ".join(SCENARIOS) + ", validate")
    p.add_argument("--config", required=True, help="INI file ('default' for the shipped one)")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value; repeatable")
    p.add_argument("--check", action="store_true",
                   help="exit 3 if any acceptance threshold in the summary fails")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run_scenario(name: str, cfg: cfgmod.ScenarioConfig, out: Path, jobs: int = 1,
                 seed: int = 0) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    result = SCENARIOS[name](cfg, out, jobs=jobs, seed=seed)
    summary = {"scenario": name, "seed": seed, **result,
               "all_checks_pass": all(c["pass"] for c in result["checks"].values()),
               "config": cfg.echo()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config_echo.ini").write_text(cfg.to_ini())
    return summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.scenario not in SCENARIOS and args.scenario != "validate":
        print(f"error: unknown scenario {args.scenario!r}; choose from "
              + ", ".join(SCENARIOS), file=sys.stderr)
        return EXIT_CONFIG
    source = cfgmod.default_config_text() if args.config == "default" else args.config
    if source is args.config and not Path(source).is_file():
        print(f"error: config file not found: {source}", file=sys.stderr)
        return EXIT_CONFIG
    cfg, errors = cfgmod.parse_config(source, args.set)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.scenario == "validate":
        print("ok")
        return EXIT_OK
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        summary = run_scenario(args.scenario, cfg, Path(args.out), args.jobs, args.seed)
    except RUNTIME_ERRORS as exc:
        print(f"error in scenario {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, c in summary["checks"].items():
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {name}: {c['value']} (limit {c['limit']})")
    if args.check and not summary["all_checks_pass"]:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
