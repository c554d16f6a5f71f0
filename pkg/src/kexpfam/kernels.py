"""Positive-definite kernels with closed-form partial derivatives.

Every family is written as a radial part ``phi(||x - y||^2)`` plus an
optional degree-2 polynomial part ``r (x.y + c)^2``.  Derivatives of the
radial part are expressed through derivatives of ``phi`` with respect to
the squared distance ``s``, which is what the vectorized cores consume.

Derivative patterns are named by how many times the first argument (x) and
the second argument (y) are differentiated, each along a single coordinate:

=========  =================================
pattern    meaning
=========  =================================
dx         d k / dx_i
dxdy       d^2 k / dx_i dy_j
dx2        d^2 k / dx_i^2
dx2dy      d^3 k / dx_i^2 dy_j
dxdy2      d^3 k / dx_i dy_j^2
dx2dy2     d^4 k / dx_i^2 dy_j^2
=========  =================================
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError, UnsupportedOrderError

FAMILIES = ("gaussian", "gaussian_poly2", "imq")

_DEFAULTS = {
    "gaussian": {"sigma": 1.0},
    "gaussian_poly2": {"sigma": 1.0, "r": 0.1, "c": 0.5},
    "imq": {"c": 1.0, "beta": 0.5},
}

# family codes understood by the compiled and numpy cores
GAUSSIAN_CODE = 0
IMQ_CODE = 1


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family and its parameters.

    ``c`` is the polynomial offset for ``gaussian_poly2`` and the length
    scale for ``imq``; ``beta`` is the inverse-multiquadric exponent.
    """

    family: str = "gaussian"
    sigma: float = 1.0
    r: float = 0.0
    c: float = 0.0
    beta: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        for name in ("sigma", "r", "c", "beta"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"kernel parameter {name} must be finite")
        if self.family in ("gaussian", "gaussian_poly2") and self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.family == "gaussian_poly2" and self.r < 0:
            raise ConfigError("polynomial weight r must be non-negative")
        if self.family == "imq" and (self.c <= 0 or self.beta <= 0):
            raise ConfigError("imq requires c > 0 and beta > 0")

    @classmethod
    def gaussian(cls, sigma=1.0):
        return cls("gaussian", sigma=sigma)

    @classmethod
    def gaussian_poly2(cls, sigma=1.0, r=0.1, c=0.5):
        return cls("gaussian_poly2", sigma=sigma, r=r, c=c)

    @classmethod
    def imq(cls, c=1.0, beta=0.5):
        return cls("imq", c=c, beta=beta)

    @property
    def poly_weight(self) -> float:
        return self.r if self.family == "gaussian_poly2" else 0.0

    @property
    def poly_offset(self) -> float:
        return self.c if self.family == "gaussian_poly2" else 0.0

    def core_params(self):
        """``(family_code, p1, p2, r, c)`` as consumed by the numeric cores."""
        if self.family == "imq":
            return IMQ_CODE, self.c, self.beta, 0.0, 0.0
        return GAUSSIAN_CODE, self.sigma, 0.0, self.poly_weight, self.poly_offset

    def to_dict(self) -> dict:
        keys = ["family", *_DEFAULTS[self.family]]
        return {k: getattr(self, k) for k in keys}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        if not isinstance(data, dict) or "family" not in data:
            raise ConfigError("kernel JSON must be an object with a 'family' key")
        family = data["family"]
        if family not in _DEFAULTS:
            raise ConfigError(f"unknown kernel family {family!r}")
        params = dict(_DEFAULTS[family])
        for key in ("sigma", "r", "c", "beta"):
            if key in data and data[key] is not None:
                params[key] = float(data[key])
        # fields that do not belong to the family are ignored
        params = {k: v for k, v in params.items() if k in _DEFAULTS[family]}
        return cls(family, **params)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "KernelSpec":
        return cls.from_dict(json.loads(text))


def radial_phi(spec: KernelSpec, s):
    """Return ``(phi, phi', phi'', phi''', phi'''')`` at squared distance ``s``."""
    s = np.asarray(s, dtype=float)
    if spec.family == "imq":
        q = 1.0 / spec.c**2
        base = 1.0 + q * s
        out = []
        coef = 1.0
        for k in range(5):
            out.append(coef * q**k * base ** (-spec.beta - k))
            coef *= -spec.beta - k
        return tuple(out)
    a = -0.5 / spec.sigma**2
    e = np.exp(a * s)
    return e, a * e, a * a * e, a**3 * e, a**4 * e


@dataclass(frozen=True)
class DerivOrder:
    """Derivative order in each argument; each acts along one coordinate."""

    ax: int
    ay: int
    name: str = field(init=False, compare=False)

    _NAMES = {(1, 0): "dx", (1, 1): "dxdy", (2, 0): "dx2",
              (2, 1): "dx2dy", (1, 2): "dxdy2", (2, 2): "dx2dy2"}

    def __post_init__(self):
        key = (self.ax, self.ay)
        if key not in self._NAMES:
            raise UnsupportedOrderError(
                f"derivative pattern (x:{self.ax}, y:{self.ay}) is not supported")
        object.__setattr__(self, "name", self._NAMES[key])

    @classmethod
    def parse(cls, name: str) -> "DerivOrder":
        for key, value in cls._NAMES.items():
            if value == name:
                return cls(*key)
        raise UnsupportedOrderError(f"unknown derivative pattern {name!r}")


SUPPORTED_ORDERS = tuple(DerivOrder(*k) for k in DerivOrder._NAMES)


def _point(x, name):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-d point")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return x


def _pair(x, y):
    x, y = _point(x, "x"), _point(y, "y")
    if x.shape != y.shape:
        raise InvalidInputError("x and y must have the same dimension")
    return x, y


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x, y = _pair(x, y)
    u = x - y
    value = radial_phi(spec, u @ u)[0]
    r = spec.poly_weight
    if r:
        value = value + r * (x @ y + spec.poly_offset) ** 2
    return float(value)


def kernel_deriv(spec: KernelSpec, order: DerivOrder | str, i: int, j: int, x, y) -> float:
    """Analytic partial derivative of ``k(x, y)``.

    ``i`` indexes the coordinate differentiated in ``x`` and ``j`` the one in
    ``y``; for the x-only patterns ``j`` is ignored.
    """
    if isinstance(order, str):
        order = DerivOrder.parse(order)
    x, y = _pair(x, y)
    d = x.size
    if not (0 <= i < d) or (order.ay and not (0 <= j < d)):
        raise InvalidInputError(f"coordinate index out of range for d={d}")
    u = x - y
    s = u @ u
    _, p1, p2, p3, p4 = radial_phi(spec, s)
    ui, uj = u[i], u[j]
    dij = 1.0 if i == j else 0.0
    r = spec.poly_weight
    t = x @ y + spec.poly_offset
    name = order.name
    # radial derivatives in u = x - y; each y-derivative contributes a sign flip
    if name == "dx":
        rad = 2 * ui * p1
        poly = 2 * r * t * y[i]
    elif name == "dx2":
        rad = 2 * p1 + 4 * ui * ui * p2
        poly = 2 * r * y[i] ** 2
    elif name == "dxdy":
        rad = -(2 * dij * p1 + 4 * ui * uj * p2)
        poly = 2 * r * (x[j] * y[i] + t * dij)
    elif name == "dx2dy":
        rad = -(4 * uj * p2 + 8 * dij * ui * p2 + 8 * ui * ui * uj * p3)
        poly = 4 * r * y[i] * dij
    elif name == "dxdy2":
        rad = 4 * ui * p2 + 8 * dij * uj * p2 + 8 * uj * uj * ui * p3
        poly = 4 * r * x[j] * dij
    else:
        rad = (4 * p2 + 8 * dij * p2 + 8 * (ui * ui + uj * uj) * p3
               + 32 * dij * ui * uj * p3 + 16 * ui * ui * uj * uj * p4)
        poly = 4 * r * dij
    return float(rad + poly)


# Each pattern is checked by one central difference of the next-lower
# analytic derivative: (target, lower pattern or None for k itself, slot).
_FD_CHAIN = (
    ("dx", None, "x"),
    ("dx2", "dx", "x"),
    ("dxdy", "dx", "y"),
    ("dx2dy", "dx2", "y"),
    ("dxdy2", "dxdy", "y"),
    ("dx2dy2", "dx2dy", "y"),
)


@dataclass
class FiniteDiffReport:
    step: float
    max_rel_error: float
    worst_pattern: str | None
    worst_index: tuple | None
    per_pattern: dict

    def passed(self, tol=1e-5) -> bool:
        return self.max_rel_error < tol

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "max_rel_error": self.max_rel_error,
            "worst_pattern": self.worst_pattern,
            "worst_index": list(self.worst_index) if self.worst_index else None,
            "per_pattern": self.per_pattern,
        }


def finite_diff_check(spec: KernelSpec, x, y, step: float = 1e-4) -> FiniteDiffReport:
    """Compare every analytic pattern to central differences at ``(x, y)``.

    The error measure is ``|analytic - fd| / (1 + |analytic|)``.
    """
    if not (1e-6 <= step <= 1e-2):
        raise InvalidInputError("step must lie in [1e-6, 1e-2]")
    x, y = _pair(x, y)
    d = x.size
    per_pattern = {}
    worst = (-1.0, None, None)

    def lower(name, i, j, xx, yy):
        if name is None:
            return kernel_eval(spec, xx, yy)
        return kernel_deriv(spec, name, i, j, xx, yy)

    for target, base, slot in _FD_CHAIN:
        pattern_max = 0.0
        for i in range(d):
            for j in range(d) if DerivOrder.parse(target).ay else (i,):
                k = i if slot == "x" else j
                e = np.zeros(d)
                e[k] = step
                if slot == "x":
                    fd = (lower(base, i, j, x + e, y) - lower(base, i, j, x - e, y)) / (2 * step)
                else:
                    fd = (lower(base, i, j, x, y + e) - lower(base, i, j, x, y - e)) / (2 * step)
                exact = kernel_deriv(spec, target, i, j, x, y)
                err = abs(exact - fd) / (1.0 + abs(exact))
                pattern_max = max(pattern_max, err)
                if err > worst[0]:
                    worst = (err, target, (i, j))
        per_pattern[target] = pattern_max
    return FiniteDiffReport(step, worst[0], worst[1], worst[2], per_pattern)


def check_kernel_derivatives(spec: KernelSpec, dims=(1, 2, 5), pairs=100,
                             step=1e-4, box=3.0, seed=0) -> dict:
    """Run :func:`finite_diff_check` on random pairs in ``[-box, box]^d``."""
    rng = np.random.default_rng(seed)
    out = {"kernel": spec.to_dict(), "step": step, "pairs": pairs, "dims": {}}
    overall = 0.0
    for d in dims:
        worst = 0.0
        per_pattern = {}
        for _ in range(pairs):
            x = rng.uniform(-box, box, d)
            y = rng.uniform(-box, box, d)
            rep = finite_diff_check(spec, x, y, step)
            worst = max(worst, rep.max_rel_error)
            for k, v in rep.per_pattern.items():
                per_pattern[k] = max(per_pattern.get(k, 0.0), v)
        out["dims"][str(d)] = {"max_rel_error": worst, "per_pattern": per_pattern}
        overall = max(overall, worst)
    out["max_rel_error"] = overall
    return out


def gram(spec: KernelSpec, X, Y=None):
    """Kernel matrix ``[k(X_a, Y_b)]``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
    diff = X[:, None, :] - Y[None, :, :]
    K = radial_phi(spec, np.einsum("abk,abk->ab", diff, diff))[0]
    r = spec.poly_weight
    if r:
        K = K + r * (X @ Y.T + spec.poly_offset) ** 2
    return K
