"""Spectral-filter regularization ``f = -g_lambda(C_hat) xi_hat``.

``C_hat`` maps into the span of the derivative sections
``phi_ai = dk(., X_a)/dy_i`` and vanishes on its orthogonal complement.  In
that span its matrix is ``G / n`` under the ``G`` inner product, so with
``G = U diag(s) U^T`` the eigenpairs of ``C_hat`` are ``s_k / n`` with
eigenfunctions ``Phi U_k / sqrt(s_k)``.  Splitting ``xi_hat`` into its part in
the span and the remainder gives

    alpha = -g(0),    beta = (1/n) U diag(q(s/n)) U^T h,

where ``q(a) = (g(0) - g(a)) / a``.  Eigenvalues below ``1e-12 * max(s)`` are
treated as null directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidInputError, NumericError
from .fit import FittedModel, ScoreSystem, model_from_system

FILTERS = ("tikhonov", "cutoff", "showalter")
EIG_CUTOFF = 1e-12


@dataclass(frozen=True)
class FilterSpec:
    name: str
    lam: float

    def __post_init__(self):
        if self.name not in FILTERS:
            raise ConfigError(f"unknown filter {self.name!r}; expected one of {FILTERS}")
        if not self.lam > 0:
            raise ConfigError("filter lambda must be positive")

    def to_dict(self):
        return {"filter": self.name, "lambda": self.lam}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["filter"], float(data["lambda"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad filter spec: {exc}") from None


def filter_value(spec: FilterSpec, alpha_eig):
    """``g_lambda`` evaluated elementwise; Showalter at 0 returns its limit ``1/lambda``."""
    a = np.asarray(alpha_eig, dtype=float)
    if np.any(a < 0):
        raise InvalidInputError("eigenvalues passed to a filter must be non-negative")
    lam = spec.lam
    if spec.name == "tikhonov":
        out = 1.0 / (a + lam)
    elif spec.name == "cutoff":
        with np.errstate(divide="ignore"):
            out = np.where(a >= lam, 1.0 / np.where(a > 0, a, 1.0), 0.0)
    else:
        safe = np.where(a > 0, a, 1.0)
        out = np.where(a > 0, -np.expm1(-a / lam) / safe, 1.0 / lam)
    return float(out) if out.ndim == 0 else out


def _deficit_over_a(spec: FilterSpec, a):
    """``(g(0) - g(a)) / a`` for ``a > 0``, written to avoid cancellation."""
    lam = spec.lam
    if spec.name == "tikhonov":
        return 1.0 / (lam * (a + lam))
    if spec.name == "cutoff":
        return np.where(a >= lam, -1.0 / (a * a), 0.0)
    x = a / lam
    small = x < 1e-3
    xs = np.where(small, x, 1.0)
    xl = np.where(small, 1.0, x)
    series = 0.5 - xs / 6 + xs**2 / 24 - xs**3 / 120 + xs**4 / 720
    direct = (np.expm1(-xl) + xl) / xl**2
    return np.where(small, series, direct) / lam**2


@dataclass
class Decomposition:
    """Eigendecomposition of ``G`` restricted to its numerical range."""

    s: np.ndarray
    U: np.ndarray
    Uh: np.ndarray
    n: int


def decompose(sys: ScoreSystem) -> Decomposition:
    try:
        s, U = np.linalg.eigh(sys.G)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition of G failed: {exc}") from None
    if not np.all(np.isfinite(s)):
        raise NumericError("eigendecomposition of G produced non-finite values")
    top = s.max(initial=0.0)
    keep = s > EIG_CUTOFF * top if top > 0 else np.zeros_like(s, dtype=bool)
    U = U[:, keep]
    return Decomposition(s[keep], U, U.T @ sys.h, sys.n)


def spectral_coefficients(dec: Decomposition, spec: FilterSpec, xi_norm2: float):
    if xi_norm2 == 0.0:
        return 0.0, np.zeros(dec.U.shape[0])
    a = dec.s / dec.n
    beta = dec.U @ (_deficit_over_a(spec, a) * dec.Uh) / dec.n
    return -float(filter_value(spec, 0.0)), beta


def solve_spectral(sys: ScoreSystem, spec: FilterSpec,
                   dec: Decomposition | None = None) -> FittedModel:
    """Fit ``-g_lambda(C_hat) xi_hat``; ``sys.lam`` is ignored in favour of ``spec.lam``."""
    if dec is None:
        dec = decompose(sys)
    alpha, beta = spectral_coefficients(dec, spec, sys.xi_norm2)
    model = model_from_system(sys.with_lambda(spec.lam), alpha, beta,
                              method=f"spectral:{spec.name}")
    return model


def filter_diagnostics(spec: FilterSpec, grid, etas=(0.5, 1.0)) -> dict:
    """Empirical constants of the filter conditions on ``grid``.

    ``A_g = sup |a g(a)|``, ``B_g = lambda sup |g(a)|``, ``C_g = sup |1 - a g(a)|``
    and ``gamma_eta = sup |1 - a g(a)| a^eta / lambda^eta``.
    """
    a = np.asarray(grid, dtype=float)
    g = filter_value(spec, a)
    ag = a * g
    out = {
        "A_g": float(np.max(np.abs(ag))),
        "B_g": float(spec.lam * np.max(np.abs(g))),
        "C_g": float(np.max(np.abs(1 - ag))),
        "shrinkage_min": float(ag.min()),
        "shrinkage_max": float(ag.max()),
    }
    for eta in etas:
        out[f"gamma_{eta:g}"] = float(np.max(np.abs(1 - ag) * a**eta) / spec.lam**eta)
    return out
