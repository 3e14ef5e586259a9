"""Command line entry points: simulate, verify, info."""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .session import ConfigError, VERIFY_SUITES, cmd_simulate, cmd_verify, load_config

_INFO = """\
lagflow conventions
  symplectic form        omega = dx ^ dy on each torus factor
  graph surface form     omega' = dx1 ^ dy1 - dx2 ^ dy2 on T^2 x T^2
  Hamiltonian field      i_{X_G} omega = dG, so X_G = (dG/dy, -dG/dx)
  complex structure      w1 = x1 + i y1, w2 = x2 - i y2; theta = arg(det_C of the tangent frame)
  curvature one-form     sigma_i = omega'(e_i, H); for graphs sigma = d(theta)
  flux normalization     translating the target by (a, b) gives cycle periods (-2*pi*b, 2*pi*a)
  Maslov normalization   reported winding = (2/pi) * loop integral of d(theta) = 4 * raw turns
  grid                   n x n uniform nodes on [0, 2*pi)^2; schemes: spectral, centered4
  env                    LAGFLOW_KERNEL={compiled,python} picks the backend,
                         LAGFLOW_THREADS caps family-evolution parallelism
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lagflow",
        description="Mean curvature flow of Lagrangian graphs of torus symplectomorphisms",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a flow and write series/snapshot artifacts")
    sim.add_argument("--config", required=True, help="path to a key=value config file")
    sim.add_argument("--out", default=None, help="output directory (overrides the config)")

    ver = sub.add_parser("verify", help="run an invariant suite and write verify.csv")
    ver.add_argument("--suite", required=True, choices=sorted(VERIFY_SUITES))
    ver.add_argument("--config", required=True, help="path to a key=value config file")
    ver.add_argument("--out", default=None, help="output directory (overrides the config)")

    sub.add_parser("info", help="print sign and normalization conventions")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "info":
        print(_INFO, end="")
        return 0
    try:
        config = load_config(args.config)
        if args.command == "simulate":
            report = cmd_simulate(config, out_dir=args.out)
            print(f"termination: {report.termination}  t = {report.final_time:.6g}")
            for key in ("area", "max_h", "defect", "flux_px", "flux_py", "angle_spread"):
                if key in report.invariants:
                    print(f"  {key} = {report.invariants[key]:.6e}")
            if report.error:
                print(f"  error: {report.error}", file=sys.stderr)
            for f in report.files:
                print(f"  wrote {f}")
            return 0 if report.error is None else 1
        report = cmd_verify(config, args.suite, out_dir=args.out)
        width = max(len(k) for k in report.invariants)
        for check, measured in report.invariants.items():
            print(f"  {check:<{width}}  {measured:.6e}")
        print(f"suite {args.suite}: {'PASS' if report.passed else 'FAIL'}")
        return 0 if report.passed else 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
