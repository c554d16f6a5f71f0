"""Metrics, reference densities, the KDE baseline and k-fold cross-validation.

Any object with ``log_density``, ``grad_log_density`` and
``laplacian_diag_log_density`` accepting an ``(m, d)`` batch is a density
model here; log-densities may be unnormalized.  An optional ``log_terms``
method returning all three at once is used when present.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .base import BaseMeasure
from .errors import (DegenerateCorrelationError, DimensionCapError, FoldSizeError,
                     InvalidInputError, KexpfamError)
from .fit import as_samples, assemble, model_from_system, solve_tikhonov_reduced
from .kernels import KernelSpec
from .spectral import FilterSpec, decompose, solve_spectral

_CHUNK_BYTES = 64 * 2**20


def log_terms(model, Z):
    """``(log p, grad log p, diag Hessian log p)`` at the rows of ``Z``."""
    if hasattr(model, "log_terms"):
        return model.log_terms(Z)
    return (model.log_density(Z), model.grad_log_density(Z),
            model.laplacian_diag_log_density(Z))


class GaussianMixture:
    """Isotropic Gaussian mixture ``sum_k w_k N(mu_k, s^2 I)``."""

    def __init__(self, means, s: float = 1.0, weights=None):
        self.means = as_samples(means)
        K, d = self.means.shape
        if not s > 0:
            raise InvalidInputError("mixture scale must be positive")
        self.s = float(s)
        if weights is None:
            self.log_w = np.full(K, -math.log(K))
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (K,) or np.any(w < 0) or w.sum() <= 0:
                raise InvalidInputError("weights must be non-negative with positive sum")
            with np.errstate(divide="ignore"):
                self.log_w = np.log(w / w.sum())
        self._norm = -0.5 * d * math.log(2 * math.pi * self.s**2)

    @property
    def d(self):
        return self.means.shape[1]

    def _points(self, Z):
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        if Z.shape[1] != self.d:
            raise InvalidInputError(f"points must have dimension {self.d}")
        if not np.all(np.isfinite(Z)):
            raise InvalidInputError("points contain non-finite values")
        return Z, single

    def log_terms(self, Z):
        Z, single = self._points(Z)
        m, d = Z.shape
        K = self.means.shape[0]
        s2 = self.s**2
        lp = np.empty(m)
        grad = np.empty((m, d))
        lap = np.empty((m, d))
        step = max(1, _CHUNK_BYTES // (8 * K * d * 3))
        for start in range(0, m, step):
            sl = slice(start, start + step)
            # (chunk, K, d) scaled displacements = per-component scores
            score = (self.means[None, :, :] - Z[sl, None, :]) / s2
            e = -0.5 * s2 * np.einsum("akj,akj->ak", score, score) + self.log_w
            tot = logsumexp(e, axis=1)
            resp = np.exp(e - tot[:, None])
            mean = np.einsum("ak,akj->aj", resp, score)
            second = np.einsum("ak,akj->aj", resp, score * score)
            lp[sl] = tot + self._norm
            grad[sl] = mean
            lap[sl] = second - mean * mean - 1.0 / s2
        if single:
            return float(lp[0]), grad[0], lap[0]
        return lp, grad, lap

    def log_density(self, Z):
        return self.log_terms(Z)[0]

    def grad_log_density(self, Z):
        return self.log_terms(Z)[1]

    def laplacian_diag_log_density(self, Z):
        return self.log_terms(Z)[2]

    def sample(self, n: int, rng: np.random.Generator):
        K = self.means.shape[0]
        comp = rng.choice(K, size=n, p=np.exp(self.log_w)) if K > 1 else np.zeros(n, int)
        return self.means[comp] + self.s * rng.standard_normal((n, self.d))


class TrueDensity(GaussianMixture):
    """Analytic synthetic targets."""

    @classmethod
    def std_normal(cls, d: int):
        return cls(np.zeros((1, d)), 1.0)

    @classmethod
    def gaussian(cls, mean, s=1.0):
        return cls(np.atleast_2d(np.asarray(mean, dtype=float)), s)

    @classmethod
    def gauss_mix(cls, d: int, a: float = 4.0, b: float = -4.0):
        """``0.5 N(a 1, I) + 0.5 N(b 1, I)``."""
        return cls(np.stack([np.full(d, a), np.full(d, b)]), 1.0)


class KdeModel(GaussianMixture):
    """Gaussian kernel density estimate with isotropic bandwidth."""

    def __init__(self, samples, bandwidth: float):
        if not (bandwidth > 0 and math.isfinite(bandwidth)):
            raise InvalidInputError("bandwidth must be positive")
        super().__init__(samples, bandwidth)

    @property
    def bandwidth(self):
        return self.s

    @property
    def samples(self):
        return self.means


def kde_fit(samples, bandwidth: float) -> KdeModel:
    return KdeModel(samples, bandwidth)


def score_objective(model, eval_samples, return_se: bool = False):
    """Monte-Carlo ``sum_i E[0.5 (d_i log p)^2 + d_i^2 log p]`` over ``eval_samples``."""
    Z = as_samples(eval_samples)
    _, g, lap = log_terms(model, Z)
    g = np.atleast_2d(g)
    vals = np.sum(0.5 * g * g + np.atleast_2d(lap), axis=1)
    mean = float(vals.mean())
    if return_se:
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
        return mean, se
    return mean


def correlation(model, truth, ref_samples) -> float:
    """``E_R[p p0] / sqrt(E_R[p^2] E_R[p0^2])`` on unnormalized densities."""
    Z = as_samples(ref_samples)
    lp = np.asarray(model.log_density(Z), dtype=float)
    lq = np.asarray(truth.log_density(Z), dtype=float)
    for arr, who in ((lp, "model"), (lq, "truth")):
        if np.any(np.isnan(arr)) or np.any(arr == np.inf):
            raise DegenerateCorrelationError(f"{who} log-density is not finite on the reference set")
        if not np.any(np.isfinite(arr)):
            raise DegenerateCorrelationError(f"{who} density vanishes on the reference set")
    p = np.exp(lp - lp.max())
    q = np.exp(lq - lq.max())
    den = math.sqrt(float(np.mean(p * p)) * float(np.mean(q * q)))
    if den == 0.0:
        raise DegenerateCorrelationError("density values are all zero")
    return float(min(1.0, max(-1.0, np.mean(p * q) / den)))


@dataclass
class Grid:
    """Tensor grid on a box for trapezoidal quadrature."""

    lower: np.ndarray
    upper: np.ndarray
    resolution: int

    @classmethod
    def cube(cls, lo, hi, resolution, d):
        return cls(np.full(d, float(lo)), np.full(d, float(hi)), int(resolution))

    def nodes_and_weights(self):
        axes, wts = [], []
        for lo, hi in zip(self.lower, self.upper):
            x = np.linspace(lo, hi, self.resolution)
            w = np.full(self.resolution, (hi - lo) / (self.resolution - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            axes.append(x)
            wts.append(w)
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        wmesh = np.meshgrid(*wts, indexing="ij")
        weights = np.prod(np.stack([w.ravel() for w in wmesh], axis=1), axis=1)
        return nodes, weights


def quadrature_divergences(model, truth, grid: Grid) -> dict:
    """Grid-normalized KL(truth || model), L1 and Hellinger distances.

    ``A_model`` is the log of the trapezoidal integral of the model's
    unnormalized density, i.e. the log-partition for a fitted model.
    """
    d = len(grid.lower)
    if d > 3:
        raise DimensionCapError("quadrature diagnostics are limited to d <= 3")
    if grid.resolution < 2:
        raise InvalidInputError("grid resolution must be at least 2")
    nodes, w = grid.nodes_and_weights()
    lq = np.asarray(model.log_density(nodes), dtype=float)
    lp = np.asarray(truth.log_density(nodes), dtype=float)

    def normalize(lv):
        top = lv.max()
        mass = float(np.sum(w * np.exp(lv - top)))
        return lv - top - math.log(mass), top + math.log(mass)

    log_q, A_model = normalize(lq)
    log_p, _ = normalize(lp)
    p, q = np.exp(log_p), np.exp(log_q)
    mask = p > 0
    kl = float(np.sum((w * p * (log_p - log_q))[mask]))
    l1 = float(np.sum(w * np.abs(p - q)))
    hel = math.sqrt(float(np.sum(w * (np.sqrt(p) - np.sqrt(q)) ** 2)))
    return {"kl": kl, "l1": l1, "hellinger": hel, "A_model": A_model}


def kl_sup_norm_bound(sup_diff: float) -> float:
    """Upper bound on KL(p_f || p_g) in terms of ``||f - g||_inf``."""
    return sup_diff**2 * math.exp(sup_diff) * (1.0 + sup_diff)


# ---------------------------------------------------------------------------
# cross-validation


def canonical_order(X) -> np.ndarray:
    """Row permutation sorting samples lexicographically (input-order free)."""
    return np.lexsort(X.T[::-1])


def fold_indices(X, folds: int, seed: int):
    """Split rows of ``X`` into ``folds`` groups independent of row order."""
    n = len(X)
    if folds < 2:
        raise FoldSizeError("need at least 2 folds")
    if n < folds:
        raise FoldSizeError(f"{n} samples cannot fill {folds} folds")
    order = canonical_order(X)
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)
    shuffled = order[np.random.default_rng(seed).permutation(n)]
    out = []
    for k in range(folds):
        val = shuffled[k::folds]
        val = val[np.argsort(rank[val])]
        in_val = np.zeros(n, dtype=bool)
        in_val[val] = True
        out.append((order[~in_val[order]], val))
    return out


@dataclass
class CVResult:
    best_kernel: KernelSpec | None
    best_lambda: float | None
    best_score: float
    table: list = field(default_factory=list)
    mean_scores: list = field(default_factory=list)
    best_bandwidth: float | None = None

    def write_csv(self, path):
        if not self.table:
            return
        keys = list(self.table[0])
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.table)

    def summary(self) -> dict:
        out = {"best_score": self.best_score, "mean_scores": self.mean_scores}
        if self.best_kernel is not None:
            out["kernel"] = self.best_kernel.to_dict()
            out["lambda"] = self.best_lambda
        if self.best_bandwidth is not None:
            out["bandwidth"] = self.best_bandwidth
        return out


def _fold_scores(Xtr, Xval, kernel, lambdas, base, solver, size_cap):
    """Held-out score objective for every lambda at one (fold, kernel)."""
    scores = []
    try:
        sys = assemble(Xtr, kernel, base, lambdas[0], size_cap=size_cap)
        dec = decompose(sys) if solver != "tikhonov" else None
    except KexpfamError:
        return [math.inf] * len(lambdas)
    for lam in lambdas:
        try:
            if solver == "tikhonov":
                s = sys.with_lambda(lam)
                model = model_from_system(s, *solve_tikhonov_reduced(s))
            else:
                model = solve_spectral(sys, FilterSpec(solver, lam), dec)
            val = score_objective(model, Xval)
            scores.append(val if math.isfinite(val) else math.inf)
        except KexpfamError:
            scores.append(math.inf)
    return scores


def cross_validate(samples, kernel_grid, lambda_grid, base: BaseMeasure, folds: int = 5,
                   criterion: str = "score", seed: int = 0, solver: str = "tikhonov",
                   threads: int = 1, size_cap: int = 20001) -> CVResult:
    """Pick ``(kernel, lambda)`` minimizing the mean held-out score objective.

    Each grid point is fitted on the training folds without the penalty
    entering the validation criterion.  Ties go to the first grid point in
    ``kernel``-major, ``lambda``-minor order.
    """
    if criterion != "score":
        raise InvalidInputError(f"unsupported criterion {criterion!r}")
    X = as_samples(samples)
    kernel_grid = list(kernel_grid)
    lambda_grid = [float(v) for v in lambda_grid]
    if not kernel_grid or not lambda_grid:
        raise InvalidInputError("grids must be nonempty")
    splits = fold_indices(X, folds, seed)
    tasks = [(fi, ki) for fi in range(folds) for ki in range(len(kernel_grid))]

    def run(task):
        fi, ki = task
        tr, val = splits[fi]
        return _fold_scores(X[tr], X[val], kernel_grid[ki], lambda_grid, base, solver, size_cap)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    scores = np.empty((folds, len(kernel_grid), len(lambda_grid)))
    for (fi, ki), row in zip(tasks, results):
        scores[fi, ki] = row
    table = []
    for ki, kern in enumerate(kernel_grid):
        for li, lam in enumerate(lambda_grid):
            for fi in range(folds):
                row = {"family": kern.family, "sigma": kern.sigma, "r": kern.poly_weight,
                       "c": kern.c, "beta": kern.beta, "lambda": lam, "fold": fi,
                       "heldout_score": float(scores[fi, ki, li])}
                table.append(row)
    with np.errstate(invalid="ignore"):
        mean = scores.mean(axis=0)
    mean = np.where(np.isnan(mean), np.inf, mean)
    flat = int(np.argmin(mean.ravel()))
    ki, li = divmod(flat, len(lambda_grid))
    mean_scores = [{"kernel": kernel_grid[a].to_dict(), "lambda": lambda_grid[b],
                    "mean_heldout_score": float(mean[a, b])}
                   for a in range(len(kernel_grid)) for b in range(len(lambda_grid))]
    return CVResult(kernel_grid[ki], lambda_grid[li], float(mean[ki, li]), table, mean_scores)


def default_bandwidth_grid(X, num: int = 20):
    X = as_samples(X)
    n, d = X.shape
    spread = float(np.mean(X.std(axis=0))) if n > 1 else 1.0
    scott = max(spread, 1e-3) * n ** (-1.0 / (d + 4))
    return scott * np.geomspace(0.1, 4.0, num)


def kde_cross_validate(samples, bandwidth_grid=None, folds: int = 5, seed: int = 0) -> CVResult:
    """Bandwidth by held-out mean negative log-likelihood."""
    X = as_samples(samples)
    grid = default_bandwidth_grid(X) if bandwidth_grid is None else np.asarray(bandwidth_grid, float)
    if grid.size == 0:
        raise InvalidInputError("bandwidth grid must be nonempty")
    splits = fold_indices(X, folds, seed)
    scores = np.empty((folds, grid.size))
    table = []
    for fi, (tr, val) in enumerate(splits):
        for bi, h in enumerate(grid):
            nll = -float(np.mean(KdeModel(X[tr], h).log_density(X[val])))
            scores[fi, bi] = nll
    for bi, h in enumerate(grid):
        for fi in range(folds):
            table.append({"bandwidth": float(h), "fold": fi, "heldout_nll": float(scores[fi, bi])})
    mean = scores.mean(axis=0)
    best = int(np.argmin(mean))
    return CVResult(None, None, float(mean[best]), table,
                    [{"bandwidth": float(h), "mean_heldout_nll": float(m)} for h, m in zip(grid, mean)],
                    best_bandwidth=float(grid[best]))
