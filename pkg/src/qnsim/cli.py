"""Command-line entry point: scenario simulation and asset generation."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from qnsim import assets, harness


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qnsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario JSON file")
    sim.add_argument("scenario")
    sim.add_argument("--out", default=None, help="output directory (default: scenario directory)")
    sim.add_argument("--seed", type=int, default=None, help="override perturbation seed")
    sim.add_argument("--solver", default=None, help="override solver kind")
    sim.add_argument("--iterations", type=int, default=None, help="override iteration count")

    gen = sub.add_parser("make-assets", help="generate the bundled desk-scale meshes")
    gen.add_argument("--dir", default="assets")

    args = parser.parse_args(argv)

    if args.command == "make-assets":
        assets.generate_all(args.dir)
        print(f"assets written to {args.dir}")
        return 0

    try:
        scn = harness.load_scenario(args.scenario)
        overrides = {}
        if args.solver is not None:
            overrides["kind"] = args.solver
        if args.iterations is not None:
            overrides["iterations"] = args.iterations
        if overrides:
            scn.solver = dataclasses.replace(scn.solver, **overrides)
        report = harness.run(scn, out_dir=args.out, seed=args.seed)
    except Exception as exc:  # surface a diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1

    print(
        f"simulated {len(report.records)} frames; "
        f"avg line-search trials/iteration: {report.avg_ls_trials:.3f}"
    )
    for frame, err in sorted(report.final_rel_errors.items()):
        print(f"frame {frame}: final relative error {err:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
