"""Command-line front end.

``vortexctl run <scenario.json> [--out DIR]`` runs a scenario,
``vortexctl verify <DIR>`` re-checks a run directory and
``vortexctl sweep <scenario.json> --ns 8,16,32`` runs a convergence study.

Exit codes: 0 success, 1 configuration error, 2 synthesis failure,
3 simulation failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import shutil
import sys
import tempfile
from pathlib import Path

from . import errors
from .runner import run_scenario
from .scenario import load_scenario, parse_ns
from .verify import VerificationFailed, verify_run

EXIT_OK, EXIT_CONFIG, EXIT_SYNTHESIS, EXIT_SIMULATION, EXIT_VERIFY = 0, 1, 2, 3, 4

SYNTHESIS_ERRORS = (errors.InfeasibleClearance, errors.SpeedFloorUnachievable, errors.CalibrationFailed,
                    errors.NoConvergence, errors.ContractionViolated, errors.DTooLarge, errors.MembershipViolated,
                    errors.ShootingDiverged, errors.BlockedPath, errors.OverlappingObstacles,
                    errors.DegenerateContext)
SIMULATION_ERRORS = (errors.CollisionError, errors.StepFailure, errors.HypothesisHViolated,
                     errors.ContainmentViolated)


def _execute(scenario, out_dir: Path) -> int:
    """Run into a temporary sibling directory and move it into place only on success."""
    out_dir = out_dir.resolve()
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        report = run_scenario(scenario, tmp)
    except SIMULATION_ERRORS as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        print(f"simulation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except (*SYNTHESIS_ERRORS, errors.VortexError, ValueError) as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        print(f"synthesis failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out_dir.exists():
        shutil.rmtree(out_dir)
    tmp.chmod(0o755)
    tmp.rename(out_dir)
    summary = ", ".join(f"{k}={report[k]:.3e}" for k in ("endpoint_error",) if k in report)
    print(f"{scenario.name}: {scenario.mode} ok in {report['elapsed_seconds']:.1f} s"
          + (f" ({summary})" if summary else "") + f" -> {out_dir}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except errors.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return _execute(scenario, Path(args.out or Path("runs") / scenario.name))


def cmd_sweep(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        ns = parse_ns(args.ns, "--ns")
        if not isinstance(scenario.gamma_c, float):
            raise errors.ConfigError("field 'gamma_c': a sweep needs a single-control scenario "
                                     "(one number for the control intensity)")
    except errors.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    scenario = dataclasses.replace(scenario, mode="convergence_study", ns=ns, n=None)
    return _execute(scenario, Path(args.out or Path("runs") / f"{scenario.name}-sweep"))


def cmd_verify(args) -> int:
    try:
        checks = verify_run(args.dir)
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    print(f"{args.dir}: all checks passed ({', '.join(checks)})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vortexctl", description="Point-vortex control synthesis and simulation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario", help="scenario JSON file")
    run.add_argument("--out", help="output directory (default runs/<name>)")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="re-check the artifacts of a run directory")
    verify.add_argument("dir", help="run directory")
    verify.set_defaults(func=cmd_verify)

    sweep = sub.add_parser("sweep", help="convergence study over several n")
    sweep.add_argument("scenario", help="scenario JSON file (single-control)")
    sweep.add_argument("--ns", required=True, help="comma-separated increasing n values, e.g. 8,16,32")
    sweep.add_argument("--out", help="output directory (default runs/<name>-sweep)")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
