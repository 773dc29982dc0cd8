"""Command-line entry point: ``concavity-lab``."""

from __future__ import annotations

import argparse
import json
import sys

from .convexity import SearchOptions
from .envelope import concave_envelope_2d
from .experiments import PRESETS, ExperimentSpec, property_suite, emit_report, load_spec, run
from .fields import FieldError, read_field_csv
from .solver import SolverError

EXIT_PASS, EXIT_REJECTED, EXIT_FAIL, EXIT_SOLVER = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="concavity-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a named experiment")
    r.add_argument("preset", choices=sorted(PRESETS))
    r.add_argument("--config", help="INI file with [domain], [grid], [search], [params] sections")
    r.add_argument("--out", help="output directory for the JSON report and CSV dumps")
    r.add_argument("--lambda-steps", type=int, help="lambda grid resolution")
    r.add_argument("--refine", action="store_true", help="golden-section refinement in lambda")
    r.add_argument("--grid", type=int, help="grid spacing 1/N")
    r.add_argument("--record", action="store_true", help="record defect tables")

    v = sub.add_parser("verify-appendix", help="seeded harmonic-concavity property suite")
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("envelope", help="concave envelope gap of a field CSV")
    e.add_argument("field")
    return p


def _cmd_run(args) -> int:
    spec = load_spec(args.config, args.preset) if args.config else ExperimentSpec(args.preset)
    if args.grid:
        spec.h, spec.grid = 1.0 / args.grid, None
    s = spec.search
    spec.search = SearchOptions(args.lambda_steps or s.lambda_steps, args.refine or s.refine, s.stride,
                                s.local_radius, s.point_filter, args.record or s.record)
    try:
        report = run(spec)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = args.out or spec.out
    if out:
        paths = emit_report(report, out)
        print(f"wrote {paths['report']}")
    print(json.dumps(report.to_dict(), indent=2))
    return {"pass": EXIT_PASS, "rejected": EXIT_REJECTED}.get(report.verdict, EXIT_FAIL)


def _cmd_verify(args) -> int:
    rows = property_suite(args.samples, args.seed)
    for row in rows:
        flag = "PASS" if row["passed"] else "FAIL"
        print(f"{flag} {row['name']}: {row['value']:.3e} (threshold {row['threshold']:g}, "
              f"{row['admissible']} admissible)")
    return EXIT_PASS if all(r["passed"] for r in rows) else EXIT_FAIL


def _cmd_envelope(args) -> int:
    u = read_field_csv(args.field)
    res = concave_envelope_2d(u)
    print(json.dumps(res.summary(), indent=2))
    return EXIT_PASS


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify-appendix":
            return _cmd_verify(args)
        return _cmd_envelope(args)
    except (FieldError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED


if __name__ == "__main__":
    sys.exit(main())
