"""hartree-lab command line.

Exit codes: 0 success, 2 config error, 3 ground-state non-convergence,
4 run aborted on a non-finite field, 5 self-test failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .ground_state import GroundStateError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NAN, EXIT_SELFTEST = 0, 2, 3, 4, 5


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="configuration file")
    common.add_argument("--out", type=Path, help="output directory (overrides config and HARTREE_LAB_OUT)")
    common.add_argument("--force", action="store_true", help="recompute even if results exist")
    common.add_argument("--parallel", type=int, default=None, help="concurrent runs in a sweep")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = argparse.ArgumentParser(prog="hartree-lab", description="Radial energy-critical Hartree lab")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("groundstate", parents=[common], help="solve for the ground state and its constants")
    sub.add_parser("evolve", parents=[common], help="evolve one initial datum and classify it")
    c = sub.add_parser("classify", parents=[common], help="re-classify an existing trajectory")
    c.add_argument("run_dir", type=Path, nargs="?", help="run directory (default: the one for --config)")
    sub.add_parser("sweep", parents=[common], help="parameter sweep with phase-plane output")
    s = sub.add_parser("selftest", parents=[common], help="fast acceptance subset")
    s.add_argument("--corrupt-constant", action="store_true", help=argparse.SUPPRESS)
    return p


def _load(args, need_sweep=False):
    if args.config is None:
        raise ConfigError("--config is required for this command")
    cfg, sweep = load_config(args.config)
    if need_sweep and sweep is None:
        raise ConfigError("config has no [sweep] section", args.config)
    if args.parallel is not None and args.parallel < 1:
        raise ConfigError("--parallel must be >= 1")
    return cfg, sweep


def main(argv=None):
    args = _parser().parse_args(argv)
    from . import runner

    quiet = args.quiet
    try:
        if args.command == "selftest":
            ok, _ = runner.selftest(corrupt_constant=args.corrupt_constant, quiet=quiet)
            return EXIT_OK if ok else EXIT_SELFTEST

        if args.command == "classify" and args.run_dir is not None:
            cfg = load_config(args.config)[0] if args.config else None
            from .classifier import Thresholds
            th = cfg.thresholds() if cfg else Thresholds()
            runner.reclassify(args.run_dir, th, quiet=quiet)
            return EXIT_OK

        cfg, sweep = _load(args, need_sweep=args.command == "sweep")
        if args.command == "sweep":
            runner.run_sweep(sweep, out=args.out, force=args.force, parallel=args.parallel, quiet=quiet)
            return EXIT_OK

        ctx = runner.Context(cfg, args.out)
        if args.command == "groundstate":
            gs, gdir = runner.ground_state(ctx, force=args.force, quiet=quiet)
            if not quiet:
                print(f"K_W   = {gs.kinetic_W!r}")
                print(f"E_W   = {gs.energy_W!r}")
                print(f"C_d^4 = {gs.sobolev_c4!r}")
                print(f"residual = {gs.residual!r}")
                print(f"written to {gdir}")
            return EXIT_OK
        if args.command == "evolve":
            _, code = runner.run_evolve(ctx, force=args.force, quiet=quiet)
            return code
        if args.command == "classify":
            rdir = runner.run_dir_for(ctx)
            if not (rdir / "trajectory.csv").exists():
                raise ConfigError(f"no trajectory at {rdir}; run evolve first", args.config)
            runner.reclassify(rdir, cfg.thresholds(), quiet=quiet)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GroundStateError as exc:
        print(f"ground state failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
