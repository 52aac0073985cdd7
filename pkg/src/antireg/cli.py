"""Command-line entry point: ``antireg {run,report,solve-dof,diagnose}``."""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import load_config
from .diagnostics import clip_and_proj_rates, ece, output_scale_ratio
from .dof_target import DofTarget, solve_dof_target
from .errors import AntiRegError
from .harness import (
    paired_report,
    parse_ablations,
    read_csv,
    read_summary,
    report_to_csv,
    report_to_markdown,
    resolve_output_dir,
    run_grid,
)

log = logging.getLogger("antireg")


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


def cmd_run(args):
    cfg = load_config(args.config)
    grid = cfg.grid
    if args.add_baseline_zero:
        grid = replace(grid, add_baseline_zero=True)
    if args.ablate:
        grid = replace(grid, ablations=parse_ablations(args.ablate))
    if args.epochs is not None:
        grid = replace(grid, epochs=args.epochs)
    out = resolve_output_dir(args.output or cfg.output_dir)
    outcome = run_grid(
        grid, cfg.datasets, output_dir=out,
        parallelism=args.parallelism if args.parallelism is not None else cfg.parallelism,
        only_seed=args.only_seed, only_fraction=args.only_fraction,
        only_optimizer=args.only_optimizer, write_runs=not args.no_run_dirs,
    )
    n_div = sum(r.diverged for r in outcome.rows)
    print(f"wrote {len(outcome.rows)} rows to {outcome.csv_path} ({n_div} diverged)")
    print(f"selection summary: {outcome.summary_path}")
    return 0


def cmd_report(args):
    rows = read_csv(args.csv)
    selection = None
    if not args.all_lambdas:
        sel_path = Path(args.selection) if args.selection else Path(
            str(args.csv).replace(".csv", "_best.csv"))
        if sel_path.exists():
            selection = read_summary(sel_path)
        else:
            log.warning("no selection file at %s; comparing every lambda0", sel_path)
    lines = paired_report(rows, selection)
    md = report_to_markdown(lines)
    if args.out:
        report_to_csv(lines, Path(args.out).with_suffix(".csv"))
        Path(args.out).with_suffix(".md").write_text(md)
    print(md, end="")
    return 0


def cmd_solve_dof(args):
    sigma = _floats(args.sigma)
    weights = _floats(args.weights) if args.weights else None
    target = DofTarget(args.kappa, args.n, sigma, weights, eps=args.eps)
    sol = solve_dof_target(target, tol=args.tol, method=args.method, log_scale=args.log_scale)
    print(json.dumps({"lambda": sol.lam, "residual": sol.residual, "iterations": sol.iterations,
                      "flag": sol.flag, "upper": target.upper}))
    return 0


def _load_npz(run_dir):
    return np.load(Path(run_dir) / "predictions.npz")


def cmd_diagnose(args):
    """Recompute r_clip, r_proj, rho and task metrics from a stored run folder."""
    pred = _load_npz(args.run_dir)
    out = {}
    clip, proj = pred["clip_flags"], pred["proj_flags"]
    if clip.size and proj.size:
        out["r_clip"], out["r_proj"] = clip_and_proj_rates(clip, proj)
    z = pred["z_val"]
    if args.baseline_dir:
        zb = _load_npz(args.baseline_dir)["z_val"]
        out["rho"] = output_scale_ratio(z, zb)
    zt, yt = pred["z_test"], pred["y_test"]
    if zt.ndim == 2 and zt.shape[1] > 1:
        P = np.exp(zt - zt.max(axis=1, keepdims=True))
        P /= P.sum(axis=1, keepdims=True)
        labels = yt.astype(int)
        out["accuracy"] = float(np.mean(P.argmax(axis=1) == labels))
        out["ece"] = ece(P.max(axis=1), P.argmax(axis=1), labels)
    else:
        r = zt.ravel() - yt
        out["rmse"] = float(np.sqrt(np.mean(r * r)))
        out["mae"] = float(np.mean(np.abs(r)))
    print(json.dumps(out))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="antireg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute an experiment grid")
    r.add_argument("--config", required=True)
    r.add_argument("--only_seed", type=int)
    r.add_argument("--only_fraction", type=float)
    r.add_argument("--only_optimizer", choices=["adam", "sgdm"])
    r.add_argument("--add_baseline_zero", action="store_true")
    r.add_argument("--ablate", help="comma list of no_trust_region,no_grad_clip,l2,constant_lambda")
    r.add_argument("--epochs", type=int)
    r.add_argument("--output", help="output directory (else config, else $ANTIREG_OUTPUT_DIR)")
    r.add_argument("--parallelism", type=int)
    r.add_argument("--no_run_dirs", action="store_true", help="skip per-run folders")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="paired statistics from a results CSV")
    rep.add_argument("--csv", required=True)
    rep.add_argument("--selection", help="best-per-block summary (default: <csv>_best.csv)")
    rep.add_argument("--all_lambdas", action="store_true", help="compare every lambda0, not just the selected one")
    rep.add_argument("--out", help="write <out>.csv and <out>.md")
    rep.set_defaults(func=cmd_report)

    d = sub.add_parser("solve-dof", help="find lambda with dof(lambda)/n = kappa")
    d.add_argument("--sigma", required=True, help="eigenvalues, comma or space separated")
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--kappa", type=float, required=True)
    d.add_argument("--weights")
    d.add_argument("--eps", type=float, default=0.05)
    d.add_argument("--tol", type=float, default=1e-10)
    d.add_argument("--method", choices=["hybrid", "bisection", "newton"], default="hybrid")
    d.add_argument("--log_scale", action="store_true")
    d.set_defaults(func=cmd_solve_dof)

    g = sub.add_parser("diagnose", help="recompute diagnostics from a stored run folder")
    g.add_argument("--run_dir", required=True)
    g.add_argument("--baseline_dir")
    g.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AntiRegError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
