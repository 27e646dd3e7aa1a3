"""Command line interface: ``distbeam run | sweep | validate | ledger-table``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_experiment
from .distnet.graph import GraphError
from .distnet.ledger import format_cost_table
from .runner import SWEEP_AXES, RunError, check_spec, run_experiment, sweep
from .scene import SceneError

log = logging.getLogger("distbeam")


def _parse_value(axis, text):
    if axis == "t_max":
        return int(text)
    if axis == "perturbation_radius":
        return float(text)
    return text


def _summary(rows):
    means = [r for r in rows if r[5] == "mean"] or rows
    for r in means:
        if r[6] in ("ssnr_gain", "target_response", "max_residual", "weight_scalars"):
            print(f"{r[0]} {r[1]} {r[2]} {r[3]}={r[4]} seed={r[5]} {r[6]}={r[7]:.6g}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distbeam", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment spec")
    r.add_argument("spec")
    r.add_argument("--seeds", type=int, nargs="+")

    s = sub.add_parser("sweep", help="run a spec across values of one axis")
    s.add_argument("spec")
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True, nargs="+")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--out", help="aggregated CSV path")

    v = sub.add_parser("validate", help="check a spec without running it")
    v.add_argument("spec")

    t = sub.add_parser("ledger-table", help="closed-form transmission counts")
    t.add_argument("--N", type=int, required=True)
    t.add_argument("--K", type=int, required=True)
    t.add_argument("--r", type=int, required=True)
    t.add_argument("--tmax", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "ledger-table":
            if not 1 <= args.K <= args.N:
                raise RunError("need 1 <= K <= N")
            print(format_cost_table(args.N, args.K, args.r, args.tmax))
            return 0
        spec = load_experiment(args.spec)
        if args.command == "validate":
            check_spec(spec)
            spec.scene_config(spec.seeds[0])
            print(f"{args.spec}: ok ({spec.beamformer}, {spec.mode})")
            return 0
        if args.seeds:
            spec = spec.replace(seeds=args.seeds)
        if args.command == "run":
            res = run_experiment(spec)
        else:
            values = [_parse_value(args.axis, v) for v in args.values]
            res = sweep(spec, args.axis, values, out_csv=args.out)
        _summary(res.rows)
        return res.exit_status
    except (ConfigError, RunError, SceneError, GraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
