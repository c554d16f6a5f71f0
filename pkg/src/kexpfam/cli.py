"""Command-line entry point: ``kexpfam {fit,eval,experiment,check-derivatives}``.

Exit codes: 0 on success, 2 on configuration or input errors, 3 on numeric
failures (including a failed derivative check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .base import base_from_config
from .errors import ConfigError, KexpfamError, NumericError
from .evaluation import Grid, correlation, cross_validate, quadrature_divergences, score_objective
from .experiment import (DEFAULT_LAMBDA_GRID, DEFAULT_SIGMA_GRID, ExperimentConfig, Target,
                         load_samples_csv, run_experiment, sample_target, write_results)
from .fit import DEFAULT_SIZE_CAP, FittedModel, assemble, model_from_system, solve_clipped, solve_tikhonov
from .kernels import KernelSpec, check_kernel_derivatives
from .spectral import FILTERS, FilterSpec, solve_spectral

log = logging.getLogger("kexpfam")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

FIT_KEYS = {"kernel", "sigma_grid", "r", "c", "base", "lambda", "lambda_grid", "method", "M",
            "filter", "folds", "size_cap", "cv_table"}


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _read_samples(path):
    try:
        return load_samples_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _emit(payload, output):
    text = json.dumps(payload, indent=2)
    if output:
        with open(output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def fit_from_config(X, cfg: dict, seed: int = 0, threads: int = 1):
    """Fit a model from a config dict; grids trigger cross-validation first.

    Returns ``(model, cv_result_or_None)``.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("fit config must be a JSON object")
    unknown = set(cfg) - FIT_KEYS
    if unknown:
        raise ConfigError(f"unknown fit config keys: {sorted(unknown)}")
    d = X.shape[1]
    base = base_from_config(cfg.get("base", {"family": "gaussian", "s": 2.0}), d)
    method = cfg.get("method", "tikhonov")
    if method not in ("tikhonov", "clipped", "spectral"):
        raise ConfigError(f"unknown method {method!r}")
    filt = cfg.get("filter")
    if method == "spectral" and filt not in FILTERS:
        raise ConfigError(f"spectral method needs 'filter' in {FILTERS}")
    if method == "clipped" and not (isinstance(cfg.get("M"), (int, float)) and cfg["M"] > 0):
        raise ConfigError("clipped method needs a positive 'M'")
    size_cap = int(cfg.get("size_cap", DEFAULT_SIZE_CAP))

    cv = None
    if "kernel" in cfg and "lambda" in cfg:
        kernel = KernelSpec.from_dict(cfg["kernel"])
        lam = float(cfg["lambda"])
    else:
        if "kernel" in cfg:
            kernels = [KernelSpec.from_dict(cfg["kernel"])]
        else:
            r, c = float(cfg.get("r", 0.1)), float(cfg.get("c", 0.5))
            kernels = [KernelSpec.gaussian_poly2(s, r, c)
                       for s in cfg.get("sigma_grid", DEFAULT_SIGMA_GRID)]
        lams = [float(cfg["lambda"])] if "lambda" in cfg else cfg.get("lambda_grid", DEFAULT_LAMBDA_GRID)
        solver = filt if method == "spectral" else "tikhonov"
        cv = cross_validate(X, kernels, lams, base, folds=int(cfg.get("folds", 5)), seed=seed,
                            solver=solver, threads=threads, size_cap=size_cap)
        if not np.isfinite(cv.best_score):
            raise NumericError("every grid point failed during cross-validation")
        kernel, lam = cv.best_kernel, cv.best_lambda
        if cfg.get("cv_table"):
            cv.write_csv(cfg["cv_table"])

    sys_ = assemble(X, kernel, base, lam, size_cap=size_cap)
    if method == "tikhonov":
        model = model_from_system(sys_, *solve_tikhonov(sys_))
    elif method == "clipped":
        alpha, beta, _ = solve_clipped(sys_, float(cfg["M"]))
        model = model_from_system(sys_, alpha, beta, method="clipped", M=float(cfg["M"]))
    else:
        model = solve_spectral(sys_, FilterSpec(filt, lam))
    return model, cv


def cmd_fit(args):
    X = _read_samples(args.samples)
    cfg = _read_json(args.config) if args.config else {}
    model, cv = fit_from_config(X, cfg, seed=args.seed, threads=args.threads)
    if cv is not None:
        log.info("cross-validation selected %s lambda=%g (held-out score %.6g)",
                 cv.best_kernel.to_dict(), cv.best_lambda, cv.best_score)
    _emit(model.to_dict(), args.output)


def cmd_eval(args):
    model = FittedModel.from_dict(_read_json(args.model))
    Z = _read_samples(args.samples)
    if Z.shape[1] != model.d:
        raise ConfigError(f"samples have {Z.shape[1]} columns, model expects {model.d}")
    value, se = score_objective(model, Z, return_se=True)
    out = {"n_eval": int(len(Z)), "score_objective": value, "score_objective_se": se,
           "rkhs_norm2": model.rkhs_norm2()}
    if args.truth:
        spec = _read_json(args.truth)
        target = Target.from_dict(spec)
        truth = target.truth(model.d)
        ref = sample_target(target, args.n_ref, model.d, args.seed)
        out["correlation"] = correlation(model, truth, ref)
        if args.quadrature:
            lo, hi, res = args.quadrature
            out["quadrature"] = quadrature_divergences(model, truth,
                                                       Grid.cube(lo, hi, int(res), model.d))
    _emit(out, args.output)


def cmd_experiment(args):
    cfg = _read_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    config = ExperimentConfig.from_dict(cfg)
    output = args.output or config.output
    if not output:
        raise ConfigError("experiment needs --output or an 'output' key in the config")
    rows, summary = run_experiment(config, threads=args.threads)
    summary_path = write_results(rows, summary, output)
    log.info("wrote %d rows to %s and summary to %s", len(rows), output, summary_path)
    print(json.dumps({"rows": summary["rows"], "errors": summary["errors"],
                      "determinism_hash": summary["determinism_hash"]}))


def cmd_check(args):
    kernel = KernelSpec.from_dict(_read_json(args.kernel))
    report = check_kernel_derivatives(kernel, dims=tuple(args.dims), pairs=args.pairs,
                                      step=args.step, seed=args.seed)
    report["tolerance"] = args.tol
    report["passed"] = report["max_rel_error"] < args.tol
    _emit(report, args.output)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def build_parser():
    p = argparse.ArgumentParser(prog="kexpfam",
                                description="Kernel exponential family score-matching density estimation")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0, threads_default=1):
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--threads", type=int, default=threads_default)
        sp.add_argument("--output", "-o", help="output path (stdout if omitted)")

    sp = sub.add_parser("fit", help="fit a model to samples")
    sp.add_argument("--samples", required=True, help="CSV of samples, one row per point")
    sp.add_argument("--config", help="JSON fit config")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("eval", help="evaluate a fitted model")
    sp.add_argument("--model", required=True, help="model JSON written by 'fit'")
    sp.add_argument("--samples", required=True, help="CSV of evaluation samples")
    sp.add_argument("--truth", help="target JSON, e.g. {\"name\": \"std_normal\"}")
    sp.add_argument("--n-ref", type=int, default=10000, help="reference draws for correlation")
    sp.add_argument("--quadrature", type=float, nargs=3, metavar=("LO", "HI", "RES"),
                    help="also compute grid divergences against the truth (d <= 3)")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("experiment", help="run a synthetic comparison sweep")
    sp.add_argument("--config", required=True, help="JSON experiment config")
    # None defers to the config file
    common(sp, seed_default=None, threads_default=None)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("check-derivatives", help="finite-difference check of kernel derivatives")
    sp.add_argument("--kernel", required=True, help="kernel JSON")
    sp.add_argument("--dims", type=int, nargs="+", default=[1, 2, 5])
    sp.add_argument("--pairs", type=int, default=100)
    sp.add_argument("--step", type=float, default=1e-4)
    sp.add_argument("--tol", type=float, default=1e-5)
    common(sp)
    sp.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, KexpfamError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
