"""Command line entry point: ``blowup-lab {groundstate,run,verify,fit}``.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for bad
configuration or unreadable input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _cmd_groundstate(args) -> int:
    from .fields import make_grid
    from .groundstate import cache_dir, load_or_solve, write_cache

    bundle = load_or_solve(args.dim)
    meta = bundle.to_meta()
    meta["Q0"] = bundle.q0
    if args.M:
        grid = make_grid(args.dim, args.M, args.L)
        target = args.out or cache_dir() or Path(".")
        meta["snapshot"] = str(write_cache(bundle, grid, target))
    print(json.dumps(meta, indent=2))
    return EXIT_OK if bundle.residual < 1e-6 else EXIT_FAIL


def _cmd_run(args) -> int:
    from .harness import ExperimentConfig, run_blowup_experiment

    cfg = ExperimentConfig.load(args.config)
    if args.output:
        cfg.output_dir = args.output
    if cfg.output_dir is None:
        cfg.output_dir = str(Path(args.config).with_suffix("")) + "_out"
    res = run_blowup_experiment(cfg)
    fit = res.fit
    if fit is None:
        print("no rate fit (too few samples in the final decade)")
        return EXIT_FAIL
    print(f"lambda slope {fit.lambda_slope:.5f} vs predicted {fit.predicted_lambda_slope:.5f} "
          f"(rel dev {fit.lambda_rel_dev:.3%})")
    print(f"b/lambda     {fit.b_over_lambda:.5f} (rel dev {fit.b_over_lambda_rel_dev:.3%})")
    print(f"max |w|/|t|  {fit.w_over_t_max:.3e}")
    print(f"outputs in {cfg.output_dir}")
    return EXIT_OK if res.passed else EXIT_FAIL


def _cmd_verify(args) -> int:
    from .suite import run_identity_suite

    dims = (1, 2) if args.dim == 0 else (args.dim,)
    rep = run_identity_suite(args.suite, dims=dims, cache=args.cache, out_dir=args.output)
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_FAIL


def _cmd_fit(args) -> int:
    from .groundstate import load_or_solve
    from .harness import fit_rates, read_modulation_csv

    series = read_modulation_csv(args.trajectory)
    N = series["w"].shape[1]
    bundle = load_or_solve(N)
    fit = fit_rates(series["t"], series["lambda"], series["b"], series["w"], args.E0,
                    bundle.virial_sq, args.decades, series.get("s"), series.get("eps_h1"))
    d = fit.to_dict()
    print(json.dumps(d, indent=2))
    return EXIT_OK if fit.passed(args.tolerance) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blowup-lab",
                                description="critical-mass blow-up experiments for inhomogeneous NLS")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("groundstate", help="solve for Q and print its constants")
    g.add_argument("--dim", type=int, choices=(1, 2), default=1)
    g.add_argument("--M", type=int, default=0, help="also write Q sampled on an M-point grid")
    g.add_argument("--L", type=float, default=16.0)
    g.add_argument("--out", type=str, default=None, help="directory for the sampled profile")
    g.set_defaults(func=_cmd_groundstate)

    r = sub.add_parser("run", help="run a blow-up experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--output", default=None, help="override output_dir")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("verify", help="run the identity / explicit-solution checks")
    v.add_argument("--suite", choices=("identities", "exact", "psi", "all"), default="identities")
    v.add_argument("--dim", type=int, choices=(0, 1, 2), default=1, help="0 runs both dimensions")
    v.add_argument("--cache", default=None, help="rho cache directory (default $BLOWUP_LAB_CACHE)")
    v.add_argument("--output", default=None, help="directory for junit.xml and summary.txt")
    v.set_defaults(func=_cmd_verify)

    f = sub.add_parser("fit", help="refit rates from a modulation.csv")
    f.add_argument("--trajectory", required=True)
    f.add_argument("--E0", type=float, default=1.0)
    f.add_argument("--decades", type=float, default=1.0)
    f.add_argument("--tolerance", type=float, default=0.05)
    f.set_defaults(func=_cmd_fit)
    return p


def main(argv=None) -> int:
    from .evolve import ConfigError
    from .harness import ExperimentAborted, ExperimentConfigError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ExperimentConfigError, ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"bad input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentAborted as exc:
        print(f"experiment aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
