"""Command-line front end: ``adaptg test`` and ``adaptg simulate``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from .baselines import bh, storey_bh
from .data import Hypotheses
from .masking import MaskingParams, NullType, Shape, default_params
from .simlab import SCENARIOS, evaluate, scenario
from .workmodel import ModelCandidate, run_adapt_gmm

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_REJECTIONS = 2

RESERVED = ("id", "p", "z", "se")


class InputError(ValueError):
    pass


def _float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"row {row}, column {col!r}: cannot parse {text!r} as a number") from None
    if math.isnan(v):
        raise InputError(f"row {row}, column {col!r}: value is NaN")
    return v


def read_input(path, null: NullType) -> Hypotheses:
    """Parse a CSV with an optional ``id`` column, covariates and ``p`` / ``z`` / ``se``.

    Rows use ``z`` (with ``se``, default 1) when a z column is present and
    ``p`` otherwise. Point nulls need z-statistics, interval nulls z and se.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if len(set(header)) != len(header):
        raise InputError("duplicate column names in header")
    has_p, has_z, has_se = "p" in header, "z" in header, "se" in header
    if not (has_p or has_z):
        raise InputError("input needs a 'p' column or a 'z' column")
    if has_se and not has_z:
        raise InputError("an 'se' column requires a 'z' column")
    if null.kind == "point" and not has_z:
        raise InputError(f"--null {null} needs z-statistics ('z' and optionally 'se' columns)")
    if null.kind == "interval" and not (has_z and has_se):
        raise InputError(f"--null {null} needs 'z' and 'se' columns; the half-width is in standard-error units")
    if not rows:
        raise InputError("input has no data rows")
    cov_names = [h for h in header if h not in RESERVED]
    col = {h: j for j, h in enumerate(header)}
    n = len(rows)
    x = np.empty((n, len(cov_names)))
    p = np.full(n, np.nan)
    z = np.full(n, np.nan)
    se = np.ones(n)
    ids = []
    for i, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise InputError(f"row {i}: expected {len(header)} fields, found {len(r)}")
        k = i - 2
        ids.append(r[col["id"]].strip() if "id" in col else str(k))
        for j, name in enumerate(cov_names):
            x[k, j] = _float(r[col[name]], i, name)
        if has_z:
            z[k] = _float(r[col["z"]], i, "z")
            if has_se:
                se[k] = _float(r[col["se"]], i, "se")
                if se[k] <= 0:
                    raise InputError(f"row {i}, column 'se': standard error must be positive")
        else:
            p[k] = _float(r[col["p"]], i, "p")
            if not 0 <= p[k] <= 1:
                raise InputError(f"row {i}, column 'p': {p[k]} is not in [0, 1]")
    if has_z:
        if has_p:
            warnings.warn("both 'p' and 'z' given; p-values are recomputed from z for the chosen null")
        return Hypotheses.from_z(z, se, x, null, ids, cov_names)
    return Hypotheses.from_p(p, x, ids, cov_names)


def masking_from_args(args, n: int, null: NullType) -> MaskingParams:
    base = default_params(n, args.alpha, nu_override=args.mask_nu, null=null)
    shape = base.shape if args.mask_shape == "auto" else Shape(args.mask_shape)
    lam = base.lam if args.mask_lambda is None else args.mask_lambda
    alpha_m = base.alpha_m if args.mask_alpha_m is None else args.mask_alpha_m
    if args.mask_lambda is not None and args.mask_alpha_m is None:
        alpha_m = min(alpha_m, lam)
    if args.mask_alpha_m is not None and args.mask_lambda is None:
        lam = max(lam, alpha_m)
    return MaskingParams(alpha_m, lam, base.nu, shape)


def model_grid(args, n_covariates: int) -> list[ModelCandidate]:
    ks = [int(k) for k in args.classes.split(",")]
    if any(k < 1 for k in ks):
        raise InputError("--classes must list positive integers")
    kind = args.classifier
    if kind == "auto":
        kind = "nnet" if n_covariates else "intercept"
    grid = [ModelCandidate(K) for K in ks]
    if kind != "intercept" and n_covariates:
        h = 2 if kind == "nnet" else None
        grid += [ModelCandidate(K, "spline", df, kind, h) for K in ks for df in (2, 3, 4)]
    return grid


def _write_rejections(path, hyps, rejected):
    flag = np.zeros(len(hyps), dtype=bool)
    flag[rejected] = True
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "p", "z", "rejected"])
        for i in range(len(hyps)):
            w.writerow([hyps.ids[i] if hyps.ids else i, repr(float(hyps.p[i])),
                        repr(float(hyps.z[i])), int(flag[i])])


def _write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "n_masked", "a", "r", "fdp_hat", "note"])
        for row in trace:
            w.writerow([row.t, row.n_masked, row.a, row.r, repr(row.fdp_hat), row.note])


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def cmd_test(args) -> int:
    null = NullType.parse(args.null)
    hyps = read_input(args.input, null)
    os.makedirs(args.out_dir, exist_ok=True)
    diag = {"method": args.method, "alpha": args.alpha, "null": str(null), "n": len(hyps)}

    if args.method in ("bh", "storey"):
        res = bh(hyps.p, args.alpha) if args.method == "bh" else storey_bh(hyps.p, args.alpha)
        rejected = res.indices
        diag["threshold"] = res.threshold
        trace = []
    else:
        params = masking_from_args(args, len(hyps), null)
        grid = model_grid(args, hyps.standardized().x.shape[1])
        result = run_adapt_gmm(hyps, args.alpha, params=params, batch_size=args.batch,
                               grid=grid, criterion=args.criterion, seed=args.seed)
        rejected = result.rejected
        trace = result.trace
        diag.update({
            "masking": {"alpha_m": params.alpha_m, "lambda": params.lam, "nu": params.nu,
                        "shape": params.shape.value, "zeta": params.zeta,
                        "r_min": params.r_min(args.alpha)},
            "stop_step": result.stop_step, "n_masked_initial": result.n_masked_initial,
            "model": result.diagnostics,
        })
        if args.trace:
            for row in trace:
                print(f"t={row.t} masked={row.n_masked} A={row.a} R={row.r} "
                      f"fdp_hat={row.fdp_hat:.4g} {row.note}".rstrip(), file=sys.stderr)
    diag["rejections"] = int(len(rejected))
    _write_rejections(os.path.join(args.out_dir, "rejections.csv"), hyps, rejected)
    _write_trace(os.path.join(args.out_dir, "trace.csv"), trace)
    _write_json(os.path.join(args.out_dir, "diagnostics.json"), diag)
    print(f"{len(rejected)} rejection(s) at alpha={args.alpha}")
    return EXIT_OK if len(rejected) else EXIT_NO_REJECTIONS


def cmd_simulate(args) -> int:
    grid = tuple(float(a) for a in args.alpha_grid.split(","))
    config, methods = scenario(args.scenario, n=args.n, replications=args.reps,
                               alpha_grid=grid, seed=args.seed)
    if args.methods:
        methods = tuple(args.methods.split(","))
    report = evaluate(methods, config)
    os.makedirs(args.out_dir, exist_ok=True)
    report.write_csv(os.path.join(args.out_dir, "report.csv"))
    report.write_json(os.path.join(args.out_dir, "report.json"))
    for row in report.summary():
        print(f"{row['method']:>12s} alpha={row['alpha']:<5g} FDR={row['fdr']:.4f} "
              f"(se {row['fdr_se']:.4f})  TPR={row['tpr']:.4f} (se {row['tpr_se']:.4f})"
              f"  errors={row['errors']}")
    return EXIT_OK


def _prob(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adaptg",
                                 description="Covariate-adaptive FDR control with generalized masking.")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run a multiple testing procedure on a CSV file")
    t.add_argument("--input", required=True, help="CSV with id, covariates and p or z[/se] columns")
    t.add_argument("--alpha", type=_prob, default=0.1, help="target FDR level (default 0.1)")
    t.add_argument("--null", default="one-sided-right",
                   help="point | one-sided-right | one-sided-left | interval:<delta> (default one-sided-right)")
    t.add_argument("--method", choices=["adaptg", "bh", "storey"], default="adaptg")
    t.add_argument("--mask-alpha-m", type=_prob, default=None, help="default: size heuristic")
    t.add_argument("--mask-lambda", type=_prob, default=None, help="default: equal to alpha_m")
    t.add_argument("--mask-nu", type=_prob, default=None, help="default 0.9")
    t.add_argument("--mask-shape", choices=["auto", "tent", "comb"], default="auto",
                   help="default: comb for interval nulls, tent otherwise")
    t.add_argument("--classes", default="2,3,4,5", help="mixture sizes to try (default 2,3,4,5)")
    t.add_argument("--classifier", choices=["logit", "nnet", "intercept", "auto"], default="auto",
                   help="class-probability model; auto is nnet with covariates, intercept without")
    t.add_argument("--criterion", choices=["aic", "bic"], default="aic")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--batch", type=int, default=None, help="reveals per model refit (default |M0|/50)")
    t.add_argument("--out-dir", default=".", help="directory for output files (default .)")
    t.add_argument("--trace", action="store_true", help="print the step trace to stderr")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="Monte Carlo FDR/TPR evaluation on a named scenario")
    s.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    s.add_argument("--reps", type=int, default=50, help="replications (default 50)")
    s.add_argument("--n", type=int, default=1000, help="hypotheses per replication (default 1000)")
    s.add_argument("--alpha-grid", default="0.05,0.1,0.2")
    s.add_argument("--methods", default=None, help="comma-separated override of the scenario's methods")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ValueError, OSError) as exc:
        print(f"adaptg: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
