"""Synthetic-target sweeps comparing score matching with KDE.

Results are rows of :class:`ResultRow` written as CSV in a canonical order
(n, d, trial, method) regardless of worker completion order.  Every random
draw is seeded from ``(seed, n, d, trial)`` so a run is reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import _backend
from .base import BaseMeasure, base_from_config
from .errors import ConfigError, EmptyInputError, KexpfamError, ParseError
from .evaluation import (TrueDensity, correlation, cross_validate, kde_cross_validate,
                         KdeModel, score_objective)
from .fit import DEFAULT_SIZE_CAP, assemble, model_from_system, solve_clipped, solve_tikhonov
from .kernels import KernelSpec
from .spectral import FILTERS, FilterSpec, solve_spectral

log = logging.getLogger(__name__)

DEFAULT_SIGMA_GRID = [0.5, 1.0, 2.0, 4.0, 8.0]
DEFAULT_LAMBDA_GRID = [1e-4, 1e-3, 1e-2, 1e-1, 1.0]


@dataclass(frozen=True)
class Target:
    """``std_normal`` or ``gauss_mix`` (``0.5 N(alpha 1, I) + 0.5 N(beta 1, I)``)."""

    name: str = "std_normal"
    alpha: float = 4.0
    beta: float = -4.0

    def __post_init__(self):
        if self.name not in ("std_normal", "gauss_mix"):
            raise ConfigError(f"unknown target {self.name!r}")

    def truth(self, d: int) -> TrueDensity:
        if self.name == "std_normal":
            return TrueDensity.std_normal(d)
        return TrueDensity.gauss_mix(d, self.alpha, self.beta)

    @property
    def label(self):
        return self.name

    def to_dict(self):
        if self.name == "std_normal":
            return {"name": self.name}
        return {"name": self.name, "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, data):
        if isinstance(data, str):
            return cls(data)
        try:
            return cls(data["name"], float(data.get("alpha", 4.0)), float(data.get("beta", -4.0)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad target spec: {exc}") from None


def sample_target(target: Target, n: int, d: int, seed) -> np.ndarray:
    if n < 1 or d < 1:
        raise ConfigError("n and d must be positive")
    rng = np.random.default_rng(seed)
    if target.name == "std_normal":
        return rng.standard_normal((n, d))
    heads = rng.random(n) < 0.5
    shift = np.where(heads, target.alpha, target.beta)[:, None]
    return shift + rng.standard_normal((n, d))


@dataclass(frozen=True)
class MethodSpec:
    kind: str  # score_match | score_match_clipped | spectral | kde
    M: float | None = None
    filter: str | None = None

    @property
    def label(self):
        if self.kind == "score_match_clipped":
            return f"score_match_clipped(M={self.M:g})"
        if self.kind == "spectral":
            return f"spectral_{self.filter}"
        return self.kind

    @classmethod
    def parse(cls, item):
        if isinstance(item, str):
            item = {"name": item}
        if not isinstance(item, dict) or "name" not in item:
            raise ConfigError(f"bad method entry {item!r}")
        name = item["name"]
        if name in ("score_match", "kde"):
            return cls(name)
        if name == "score_match_clipped":
            if "M" not in item or not float(item["M"]) > 0:
                raise ConfigError("score_match_clipped needs a positive M")
            return cls(name, M=float(item["M"]))
        if name == "spectral":
            filt = item.get("filter")
            if filt not in FILTERS:
                raise ConfigError(f"spectral method needs filter in {FILTERS}")
            return cls(name, filter=filt)
        raise ConfigError(f"unknown method {name!r}")

    def to_dict(self):
        out = {"name": self.kind}
        if self.M is not None:
            out["M"] = self.M
        if self.filter is not None:
            out["filter"] = self.filter
        return out


@dataclass
class ExperimentConfig:
    target: Target = field(default_factory=Target)
    n_grid: list = field(default_factory=lambda: [100])
    d_grid: list = field(default_factory=lambda: [1])
    trials: int = 10
    seed: int = 0
    sigma_grid: list = field(default_factory=lambda: list(DEFAULT_SIGMA_GRID))
    lambda_grid: list = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    r: float = 0.1
    c: float = 0.5
    base: dict = field(default_factory=lambda: {"family": "gaussian", "s": 2.0})
    methods: list = field(default_factory=lambda: [MethodSpec("score_match"), MethodSpec("kde")])
    metrics: list = field(default_factory=lambda: ["score_objective", "correlation"])
    folds: int = 5
    n_eval: int = 10000
    n_ref: int = 10000
    kde_bandwidth_grid: list | None = None
    size_cap: int = DEFAULT_SIZE_CAP
    output: str | None = None
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.n_grid or not self.d_grid:
            raise ConfigError("n_grid and d_grid must be nonempty")
        if any(int(v) < 1 for v in [*self.n_grid, *self.d_grid]):
            raise ConfigError("grid entries must be positive integers")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.sigma_grid or not self.lambda_grid:
            raise ConfigError("sigma_grid and lambda_grid must be nonempty")
        if any(v <= 0 for v in [*self.sigma_grid, *self.lambda_grid]):
            raise ConfigError("sigma and lambda values must be positive")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in self.metrics:
            if m not in ("score_objective", "correlation"):
                raise ConfigError(f"unknown metric {m!r}")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        fitted = any(m.kind != "kde" for m in self.methods)
        for n in self.n_grid:
            for d in self.d_grid:
                if fitted and int(n) * int(d) + 1 > self.size_cap:
                    raise ConfigError(f"(n={n}, d={d}) exceeds the system size cap {self.size_cap}")
                if int(n) < self.folds:
                    raise ConfigError(f"n={n} is smaller than the number of folds")

    def base_measure(self, d: int) -> BaseMeasure:
        return base_from_config(self.base, d)

    def kernel_grid(self):
        return [KernelSpec.gaussian_poly2(s, self.r, self.c) for s in self.sigma_grid]

    def to_dict(self):
        return {
            "target": self.target.to_dict(),
            "n_grid": list(self.n_grid),
            "d_grid": list(self.d_grid),
            "trials": self.trials,
            "seed": self.seed,
            "sigma_grid": list(self.sigma_grid),
            "lambda_grid": list(self.lambda_grid),
            "r": self.r,
            "c": self.c,
            "base": self.base,
            "methods": [m.to_dict() for m in self.methods],
            "metrics": list(self.metrics),
            "folds": self.folds,
            "n_eval": self.n_eval,
            "n_ref": self.n_ref,
            "kde_bandwidth_grid": self.kde_bandwidth_grid,
            "size_cap": self.size_cap,
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        try:
            if "target" in kw:
                kw["target"] = Target.from_dict(kw["target"])
            if "methods" in kw:
                kw["methods"] = [MethodSpec.parse(m) for m in kw["methods"]]
            for key in ("n_grid", "d_grid"):
                if key in kw:
                    kw[key] = [int(v) for v in kw[key]]
            for key in ("sigma_grid", "lambda_grid"):
                if key in kw:
                    kw[key] = [float(v) for v in kw[key]]
            for key in ("trials", "seed", "folds", "n_eval", "n_ref", "size_cap", "threads"):
                if key in kw:
                    kw[key] = int(kw[key])
            for key in ("r", "c"):
                if key in kw:
                    kw[key] = float(kw[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from None
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None


@dataclass
class ResultRow:
    method: str
    target: str
    n: int
    d: int
    trial: int
    score_objective: float
    correlation: float
    wall_time_ms: float
    selected_sigma: float
    selected_lambda: float
    error: str = ""


CSV_FIELDS = [f.name for f in fields(ResultRow)]


def _trial_seeds(seed: int, n: int, d: int, trial: int):
    ss = np.random.SeedSequence([seed, n, d, trial])
    train, ev, ref, cv = ss.spawn(4)
    return train, ev, ref, int(cv.generate_state(1)[0])


def fit_method(method: MethodSpec, X, config: ExperimentConfig, base: BaseMeasure, cv_seed: int):
    """CV-select hyperparameters and fit; returns ``(model, sigma, lambda)``."""
    if method.kind == "kde":
        cv = kde_cross_validate(X, config.kde_bandwidth_grid, config.folds, cv_seed)
        return KdeModel(X, cv.best_bandwidth), cv.best_bandwidth, math.nan
    solver = method.filter if method.kind == "spectral" else "tikhonov"
    cv = cross_validate(X, config.kernel_grid(), config.lambda_grid, base, config.folds,
                        seed=cv_seed, solver=solver, size_cap=config.size_cap)
    if not math.isfinite(cv.best_score):
        raise KexpfamError("every grid point failed during cross-validation")
    sys = assemble(X, cv.best_kernel, base, cv.best_lambda, size_cap=config.size_cap)
    if method.kind == "score_match":
        model = model_from_system(sys, *solve_tikhonov(sys))
    elif method.kind == "score_match_clipped":
        alpha, beta, _ = solve_clipped(sys, method.M)
        model = model_from_system(sys, alpha, beta, method="clipped", M=method.M)
    else:
        model = solve_spectral(sys, FilterSpec(method.filter, cv.best_lambda))
    return model, cv.best_kernel.sigma, cv.best_lambda


def _run_cell(config: ExperimentConfig, n: int, d: int, trial: int):
    train_seed, eval_seed, ref_seed, cv_seed = _trial_seeds(config.seed, n, d, trial)
    X = sample_target(config.target, n, d, train_seed)
    Z = sample_target(config.target, config.n_eval, d, eval_seed)
    R = sample_target(config.target, config.n_ref, d, ref_seed)
    truth = config.target.truth(d)
    base = config.base_measure(d)
    rows = []
    for method in config.methods:
        t0 = time.perf_counter()
        row = ResultRow(method.label, config.target.label, n, d, trial,
                        math.nan, math.nan, 0.0, math.nan, math.nan)
        try:
            model, row.selected_sigma, row.selected_lambda = fit_method(
                method, X, config, base, cv_seed)
            if "score_objective" in config.metrics:
                row.score_objective = score_objective(model, Z)
            if "correlation" in config.metrics:
                row.correlation = correlation(model, truth, R)
        except KexpfamError as exc:
            row.error = f"{type(exc).__name__}: {exc}"
            log.warning("n=%d d=%d trial=%d %s failed: %s", n, d, trial, method.label, exc)
        row.wall_time_ms = max((time.perf_counter() - t0) * 1e3, 1e-6)
        rows.append(row)
    log.info("finished n=%d d=%d trial=%d", n, d, trial)
    return rows


def run_experiment(config: ExperimentConfig, threads: int | None = None):
    """Run every (n, d, trial, method) cell; returns ``(rows, summary)``."""
    threads = config.threads if threads is None else threads
    cells = [(n, d, t) for n in config.n_grid for d in config.d_grid for t in range(config.trials)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(lambda c: _run_cell(config, *c), cells))
    else:
        chunks = [_run_cell(config, *c) for c in cells]
    order = {m.label: i for i, m in enumerate(config.methods)}
    rows = sorted((r for chunk in chunks for r in chunk),
                  key=lambda r: (r.n, r.d, r.trial, order[r.method]))
    return rows, summarize(rows, config)


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow([_fmt(getattr(r, k)) for k in CSV_FIELDS])
    return buf.getvalue()


def determinism_hash(rows) -> str:
    """SHA-256 of the CSV content with the wall-time column removed."""
    keep = [k for k in CSV_FIELDS if k != "wall_time_ms"]
    h = hashlib.sha256()
    for r in rows:
        h.update((",".join(_fmt(getattr(r, k)) for k in keep) + "\n").encode())
    return h.hexdigest()


def summarize(rows, config: ExperimentConfig) -> dict:
    groups = {}
    for r in rows:
        groups.setdefault((r.method, r.target, r.n, r.d), []).append(r)
    stats = []
    for (method, target, n, d), rs in groups.items():
        entry = {"method": method, "target": target, "n": n, "d": d,
                 "trials": len(rs), "errors": sum(bool(r.error) for r in rs)}
        for metric in ("score_objective", "correlation", "wall_time_ms"):
            vals = np.array([getattr(r, metric) for r in rs], dtype=float)
            vals = vals[np.isfinite(vals)]
            entry[f"{metric}_mean"] = float(vals.mean()) if vals.size else None
            entry[f"{metric}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else None
        stats.append(entry)
    return {"config": config.to_dict(), "backend": _backend.BACKEND, "rows": len(rows),
            "errors": sum(bool(r.error) for r in rows), "determinism_hash": determinism_hash(rows),
            "groups": stats}


def write_results(rows, summary, csv_path, summary_path=None):
    with open(csv_path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))
    if summary_path is None:
        summary_path = str(csv_path).rsplit(".", 1)[0] + ".summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary_path


def load_samples_csv(path) -> np.ndarray:
    """Read a rectangular numeric CSV; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        lines = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(lines) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyInputError("sample file is empty")

    def numeric(cells):
        try:
            return [float(c) for c in cells]
        except ValueError:
            return None

    if numeric(rows[0][1]) is None:
        rows = rows[1:]
        if not rows:
            raise EmptyInputError("sample file has a header but no data")
    width = len(rows[0][1])
    data = []
    for lineno, cells in rows:
        if len(cells) != width:
            raise ParseError(f"expected {width} columns, found {len(cells)}", lineno)
        vals = numeric(cells)
        if vals is None:
            raise ParseError("non-numeric cell", lineno)
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", lineno)
        data.append(vals)
    return np.array(data, dtype=float)


def save_samples_csv(path, X, header=True):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow([f"x{j + 1}" for j in range(X.shape[1])])
        for row in X:
            writer.writerow([repr(float(v)) for v in row])
