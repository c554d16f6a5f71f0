"""Reference densities q0 on open axis-aligned boxes.

All methods accept a single point ``(d,)`` or a batch ``(m, d)`` and return
matching shapes.  Support membership is strict: points on the boundary of
the box are outside.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, InvalidInputError, OutOfSupportError


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    if x.ndim == 0:
        X = x.reshape(1, 1)
    elif x.ndim == 1:
        X = x[None, :]
    else:
        X = x
    if X.ndim != 2:
        raise InvalidInputError("points must be a vector or an (m, d) matrix")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("points contain non-finite values")
    return X, single


class BaseMeasure:
    """Interface shared by the built-in families and :class:`Custom`."""

    lower: np.ndarray
    upper: np.ndarray

    @property
    def dim(self) -> int | None:
        return None if self.lower is None else self.lower.size

    def in_support(self, x) -> np.ndarray:
        X, _ = _as_batch(x)
        if self.lower is None:
            return np.ones(len(X), dtype=bool)
        if X.shape[1] != self.lower.size:
            raise InvalidInputError(
                f"point dimension {X.shape[1]} does not match base dimension {self.lower.size}")
        return np.all((X > self.lower) & (X < self.upper), axis=1)

    def check_support(self, x):
        X, single = _as_batch(x)
        inside = self.in_support(X)
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise OutOfSupportError(f"point {X[bad].tolist()} lies outside the support box")
        return X, single

    def log_density(self, x):
        X, single = self.check_support(x)
        out = self._log_density(X)
        return float(out[0]) if single else out

    def grad_log_density(self, x):
        X, single = self.check_support(x)
        out = self._grad(X)
        return out[0] if single else out

    def laplacian_diag_log_density(self, x):
        X, single = self.check_support(x)
        out = self._lap_diag(X)
        return out[0] if single else out

    def to_dict(self) -> dict:
        raise ConfigError(f"{type(self).__name__} cannot be serialized")

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def from_dict(data: dict) -> "BaseMeasure":
        if not isinstance(data, dict) or "family" not in data:
            raise ConfigError("base JSON must be an object with a 'family' key")
        family = data["family"]
        if family == "gaussian":
            return IsotropicGaussian(data.get("mu", [0.0]), float(data.get("s", 1.0)))
        if family == "uniform":
            if "a" not in data or "b" not in data:
                raise ConfigError("uniform base needs 'a' and 'b'")
            return UniformBox(data["a"], data["b"])
        raise ConfigError(f"unknown base family {family!r}")

    @staticmethod
    def from_json(text: str) -> "BaseMeasure":
        return BaseMeasure.from_dict(json.loads(text))


class IsotropicGaussian(BaseMeasure):
    """``N(mu, s^2 I)`` on all of R^d."""

    def __init__(self, mu, s: float = 1.0):
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if self.mu.ndim != 1 or not np.all(np.isfinite(self.mu)):
            raise ConfigError("mu must be a finite vector")
        if not (s > 0 and math.isfinite(s)):
            raise ConfigError("s must be positive")
        self.s = float(s)
        d = self.mu.size
        self.lower = np.full(d, -np.inf)
        self.upper = np.full(d, np.inf)

    @classmethod
    def standard(cls, d: int, s: float = 1.0):
        return cls(np.zeros(d), s)

    def _log_density(self, X):
        d = self.mu.size
        z = (X - self.mu) / self.s
        return -0.5 * np.sum(z * z, axis=1) - d * math.log(self.s) - 0.5 * d * math.log(2 * math.pi)

    def _grad(self, X):
        return -(X - self.mu) / self.s**2

    def _lap_diag(self, X):
        return np.full(X.shape, -1.0 / self.s**2)

    def to_dict(self):
        return {"family": "gaussian", "mu": self.mu.tolist(), "s": self.s}

    def __repr__(self):
        return f"IsotropicGaussian(mu={self.mu.tolist()}, s={self.s})"


class UniformBox(BaseMeasure):
    """Uniform density on the open box ``prod (a_j, b_j)``."""

    def __init__(self, a, b):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if a.shape != b.shape or a.ndim != 1:
            raise ConfigError("a and b must be vectors of equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(a < b)):
            raise ConfigError("uniform box needs finite bounds with a_j < b_j")
        self.lower, self.upper = a, b
        self._logc = -float(np.sum(np.log(b - a)))

    def _log_density(self, X):
        return np.full(len(X), self._logc)

    def _grad(self, X):
        return np.zeros_like(X)

    def _lap_diag(self, X):
        return np.zeros_like(X)

    def to_dict(self):
        return {"family": "uniform", "a": self.lower.tolist(), "b": self.upper.tolist()}

    def __repr__(self):
        return f"UniformBox(a={self.lower.tolist()}, b={self.upper.tolist()})"


@dataclass
class Custom(BaseMeasure):
    """User-supplied base measure.

    Callbacks receive an ``(m, d)`` batch and must be thread-safe; they are
    passed through unchanged.
    """

    log_density_fn: Callable
    grad_fn: Callable
    lap_diag_fn: Callable
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.lower is not None:
            self.lower = np.asarray(self.lower, dtype=float)
            self.upper = np.asarray(self.upper, dtype=float)

    def _log_density(self, X):
        return np.asarray(self.log_density_fn(X), dtype=float)

    def _grad(self, X):
        return np.asarray(self.grad_fn(X), dtype=float)

    def _lap_diag(self, X):
        return np.asarray(self.lap_diag_fn(X), dtype=float)


def base_from_config(spec: dict, d: int) -> BaseMeasure:
    """Build a base measure for dimension ``d``; scalar ``mu``/``a``/``b`` are broadcast."""
    if not isinstance(spec, dict):
        raise ConfigError("base config must be a JSON object")
    spec = dict(spec)
    for key in ("mu", "a", "b"):
        if key in spec and np.ndim(spec[key]) == 0:
            spec[key] = [float(spec[key])] * d
    if spec.get("family") == "gaussian":
        spec.setdefault("mu", [0.0] * d)
    base = BaseMeasure.from_dict(spec)
    if base.dim != d:
        raise ConfigError(f"base dimension {base.dim} does not match data dimension {d}")
    return base
