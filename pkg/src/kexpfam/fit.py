"""Score-matching estimator in the kernel exponential family.

The regularized empirical score objective is minimized over the span of
``xi_hat`` and the first-derivative kernel sections ``dk(., X_b)/dy_j``.
Coefficients are packed as ``theta = (alpha, beta)`` with ``beta`` flattened
sample-major (index ``b * d + j``).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _backend
from .base import BaseMeasure, IsotropicGaussian
from .errors import (ConfigError, ConvergenceError, InfeasibleClipError,
                     InvalidInputError, NumericError, SingularSystemError,
                     SizeCapError)
from .kernels import KernelSpec

DEFAULT_SIZE_CAP = 20001


def as_samples(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidInputError("samples must be an (n, d) matrix with n, d >= 1")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("samples contain non-finite values")
    return X


@dataclass
class ScoreSystem:
    """Assembled quantities of the finite-dimensional score-matching problem."""

    samples: np.ndarray
    kernel: KernelSpec
    base: BaseMeasure
    lam: float
    G: np.ndarray
    h: np.ndarray
    xi_norm2: float
    grad_log_base: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @property
    def size(self) -> int:
        return self.n * self.d + 1

    @property
    def B(self) -> np.ndarray:
        """Gram matrix of ``(xi_hat, dk(., X_b)/dy_j)``."""
        if "B" not in self._cache:
            N = self.size
            B = np.empty((N, N))
            B[0, 0] = self.xi_norm2
            B[0, 1:] = self.h
            B[1:, 0] = self.h
            B[1:, 1:] = self.G
            self._cache["B"] = B
        return self._cache["B"]

    @property
    def Q(self) -> np.ndarray:
        """Data quadratic term ``(1/n) D^T D`` with ``D = [h | G]``."""
        if "Q" not in self._cache:
            D = self.B[1:]
            Q = (D.T @ D) / self.n
            self._cache["Q"] = 0.5 * (Q + Q.T)
        return self._cache["Q"]

    @property
    def H(self) -> np.ndarray:
        return self.Q + self.lam * self.B

    @property
    def Delta(self) -> np.ndarray:
        return np.concatenate([[self.xi_norm2], self.h])

    def with_lambda(self, lam: float) -> "ScoreSystem":
        """Same assembled system at another regularization level."""
        if not lam > 0:
            raise InvalidInputError("lambda must be positive")
        cache = {k: v for k, v in self._cache.items() if k in ("B", "Q")}
        return ScoreSystem(self.samples, self.kernel, self.base, float(lam), self.G,
                           self.h, self.xi_norm2, self.grad_log_base, cache)

    def objective(self, theta) -> float:
        """``0.5 theta^T H theta + theta^T Delta`` (regularized, constant dropped)."""
        theta = np.asarray(theta, dtype=float)
        return float(0.5 * theta @ self.H @ theta + theta @ self.Delta)

    def norm2(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        a, b = theta[0], theta[1:]
        return float(a * a * self.xi_norm2 + 2.0 * a * (self.h @ b) + b @ self.G @ b)


def assemble(samples, kernel: KernelSpec, base: BaseMeasure, lam: float,
             size_cap: int = DEFAULT_SIZE_CAP) -> ScoreSystem:
    X = as_samples(samples)
    if not (lam > 0 and math.isfinite(lam)):
        raise InvalidInputError("lambda must be positive and finite")
    n, d = X.shape
    if n * d + 1 > size_cap:
        raise SizeCapError(f"system size n*d+1 = {n * d + 1} exceeds the cap {size_cap}")
    base.check_support(X)
    L = np.asarray(base.grad_log_density(X), dtype=float).reshape(n, d)
    G, tsum, s4sum = _backend.pair_terms(X, *kernel.core_params())
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(tsum)) and math.isfinite(s4sum)):
        raise NumericError("non-finite kernel derivative; check the kernel length-scale")
    G = 0.5 * (G + G.T)
    h1 = tsum.ravel() / n
    Lf = L.ravel()
    GL = G @ Lf
    h = h1 + GL / n
    xi_norm2 = s4sum / n**2 + 2.0 * (h1 @ Lf) / n + (Lf @ GL) / n**2
    return ScoreSystem(X, kernel, base, float(lam), G, h, float(xi_norm2), L)


def _residual_ok(A, x, b, tol):
    res = np.linalg.norm(A @ x - b)
    return res <= tol * (np.linalg.norm(A) * np.linalg.norm(x) + np.linalg.norm(b))


def _ldl_solve(A, b):
    """LDL^T solve; returns ``(x or None, singular_to_working_precision)``."""
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", sla.LinAlgWarning)
            x = sla.solve(A, b, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None, True
    return x, any(issubclass(w.category, sla.LinAlgWarning) for w in caught)


def min_norm_solve(A, b, rcond=1e-15):
    """Minimum-norm solution from the eigenpairs of symmetric ``A`` above ``rcond``."""
    try:
        s, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError:
        return None
    keep = np.abs(s) > rcond * np.abs(s).max(initial=0.0)
    return V[:, keep] @ ((V[:, keep].T @ b) / s[keep])


def solve_symmetric(A, b, tol=1e-8, max_jitter=3):
    """Solve ``A x = b`` for symmetric ``A`` with an LDL^T (Bunch-Kaufman) solve.

    When LAPACK reports ``A`` singular to working precision the minimum-norm
    solution is used instead: the LDL^T answer then drifts along the
    near-null space, which moves the fitted function.  A solution is accepted
    when its backward residual is below ``tol``; otherwise a diagonal jitter
    of ``1e-10 trace(A) / N`` is added, at most ``max_jitter`` times.
    """
    N = A.shape[0]
    jitter = 1e-10 * abs(np.trace(A)) / N
    for attempt in range(max_jitter + 1):
        M = A + attempt * jitter * np.eye(N) if attempt else A
        x, singular = _ldl_solve(M, b)
        if singular and not attempt:
            x = min_norm_solve(A, b)
        if x is not None and np.all(np.isfinite(x)) and _residual_ok(A, x, b, tol):
            return x
    try:
        cond = float(np.linalg.cond(A))
    except np.linalg.LinAlgError:
        cond = math.inf
    raise SingularSystemError("linear system is numerically singular", cond)


def solve_tikhonov(sys: ScoreSystem):
    """Solve ``H theta = -Delta``; returns ``(alpha, beta)``."""
    Delta = sys.Delta
    if not np.any(Delta):
        return 0.0, np.zeros(sys.size - 1)
    theta = solve_symmetric(sys.H, -Delta)
    return float(theta[0]), theta[1:]


def solve_tikhonov_reduced(sys: ScoreSystem):
    """Same minimizer through the ``n d`` system ``(G + n lambda I) c = h``.

    ``f = -(1/lambda) xi_hat + (1/lambda) sum c_bj dk(., X_b)/dy_j``; avoids
    forming ``H`` and is what cross-validation uses.
    """
    lam, n = sys.lam, sys.n
    if not np.any(sys.h) and sys.xi_norm2 == 0.0:
        return 0.0, np.zeros(sys.size - 1)
    A = sys.G.copy()
    A.flat[::A.shape[0] + 1] += n * lam
    try:
        c = sla.cho_solve(sla.cho_factor(A, check_finite=False), sys.h, check_finite=False)
    except np.linalg.LinAlgError:
        c = solve_symmetric(A, sys.h)
    return -1.0 / lam, c / lam


def solve_clipped(sys: ScoreSystem, M: float, tol: float = 1e-6,
                  max_doublings: int = 200, max_bisections: int = 400,
                  return_multiplier: bool = False):
    """Minimize ``0.5 theta^T H theta + theta^T Delta`` s.t. ``theta^T B theta <= M^2``.

    Returns ``(alpha, beta, active)``, plus the constraint multiplier ``tau``
    of ``(H + 2 tau B) theta = -Delta`` when ``return_multiplier`` is set
    (0 when inactive).
    """
    def done(th, active, tau):
        out = (float(th[0]), th[1:], active)
        return out + (tau,) if return_multiplier else out

    if not (M > 0 and math.isfinite(M)):
        raise InvalidInputError("M must be positive and finite")
    Delta = sys.Delta
    if not np.any(Delta):
        return done(np.zeros(sys.size), False, 0.0)
    H, B = sys.H, sys.B
    if np.max(np.abs(B)) <= 1e-300:
        raise InfeasibleClipError("B vanishes while Delta does not; constraint cannot bind")
    M2 = M * M
    theta = solve_symmetric(H, -Delta)
    if sys.norm2(theta) <= M2:
        return done(theta, False, 0.0)

    def norm_at(tau):
        th = solve_symmetric(H + 2.0 * tau * B, -Delta)
        return th, float(th @ B @ th)

    lo, hi = 0.0, 1.0
    th_hi, n_hi = norm_at(hi)
    doublings = 0
    while n_hi > M2:
        lo = hi
        hi *= 2.0
        doublings += 1
        if doublings > max_doublings:
            raise ConvergenceError("could not bracket the clipping multiplier")
        th_hi, n_hi = norm_at(hi)
    if abs(n_hi - M2) <= tol * M2:
        return done(th_hi, True, hi)
    for _ in range(max_bisections):
        # geometric midpoint once both ends are positive
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * hi
        th, nm = norm_at(mid)
        if abs(nm - M2) <= tol * M2:
            return done(th, True, mid)
        if nm > M2:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    raise ConvergenceError("bisection on the clipping multiplier did not converge")


class FittedModel:
    """Unnormalized log-density ``f + log q0`` with ``f`` in representer form.

    Immutable after construction; evaluation is safe from several threads.
    """

    def __init__(self, alpha, beta, samples, kernel: KernelSpec, base: BaseMeasure,
                 lam: float, method: str = "tikhonov", M: float | None = None,
                 norm2: float | None = None):
        X = as_samples(samples)
        n, d = X.shape
        beta = np.asarray(beta, dtype=float).ravel()
        if beta.size != n * d:
            raise InvalidInputError(f"beta has {beta.size} entries, expected {n * d}")
        self.alpha = float(alpha)
        self.beta = beta
        self.samples = X
        self.kernel = kernel
        self.base = base
        self.lam = float(lam)
        self.method = method
        self.M = M
        self._norm2 = norm2
        L = np.asarray(base.grad_log_density(X), dtype=float).reshape(n, d)
        self._v = self.alpha / n
        self._W = beta.reshape(n, d) + self._v * L
        for arr in (self.beta, self._W):
            arr.setflags(write=False)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def d(self):
        return self.samples.shape[1]

    @property
    def theta(self):
        return np.concatenate([[self.alpha], self.beta])

    def _points(self, y):
        Y, single = self.base.check_support(y)
        if Y.shape[1] != self.d:
            raise InvalidInputError(f"points must have dimension {self.d}")
        return Y, single

    def terms(self, y):
        """``(f, grad f, diag Hessian f)`` at ``y`` (a point or an ``(m, d)`` batch)."""
        Y, single = self._points(y)
        f, g, lap = _backend.model_terms(Y, self.samples, self._W, self._v,
                                         *self.kernel.core_params())
        if single:
            return float(f[0]), g[0], lap[0]
        return f, g, lap

    def f(self, y):
        return self.terms(y)[0]

    def grad_f(self, y):
        return self.terms(y)[1]

    def laplacian_diag_f(self, y):
        return self.terms(y)[2]

    # DensityModel interface: log q0 + f (normalizer omitted)
    def log_density(self, y):
        return self.f(y) + self.base.log_density(y)

    def grad_log_density(self, y):
        return self.grad_f(y) + self.base.grad_log_density(y)

    def laplacian_diag_log_density(self, y):
        return self.laplacian_diag_f(y) + self.base.laplacian_diag_log_density(y)

    def log_terms(self, y):
        f, g, lap = self.terms(y)
        return (f + self.base.log_density(y), g + self.base.grad_log_density(y),
                lap + self.base.laplacian_diag_log_density(y))

    def rkhs_norm2(self) -> float:
        """``theta^T B theta``; reassembles ``B`` if it was not kept from fitting."""
        if self._norm2 is None:
            sys = assemble(self.samples, self.kernel, self.base, max(self.lam, 1e-300),
                           size_cap=math.inf)
            self._norm2 = sys.norm2(self.theta)
        return self._norm2

    def to_dict(self) -> dict:
        out = {
            "kernel": self.kernel.to_dict(),
            "base": self.base.to_dict(),
            "lambda": self.lam,
            "method": self.method,
            "alpha": self.alpha,
            "beta": self.beta.tolist(),
            "samples": self.samples.tolist(),
        }
        if self.M is not None:
            out["M"] = self.M
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "FittedModel":
        try:
            return cls(data["alpha"], data["beta"], data["samples"],
                       KernelSpec.from_dict(data["kernel"]),
                       BaseMeasure.from_dict(data["base"]),
                       data["lambda"], data.get("method", "tikhonov"), data.get("M"))
        except KeyError as exc:
            raise ConfigError(f"model JSON is missing {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return (f"FittedModel(n={self.n}, d={self.d}, kernel={self.kernel.family}, "
                f"lambda={self.lam:g}, method={self.method!r})")


def model_from_system(sys: ScoreSystem, alpha, beta, method="tikhonov", M=None):
    theta = np.concatenate([[alpha], np.asarray(beta).ravel()])
    return FittedModel(alpha, beta, sys.samples, sys.kernel, sys.base, sys.lam,
                       method=method, M=M, norm2=sys.norm2(theta))


def fit(samples, kernel: KernelSpec, base: BaseMeasure | None = None, lam: float = 1e-2,
        method: str = "tikhonov", M: float | None = None,
        size_cap: int = DEFAULT_SIZE_CAP) -> FittedModel:
    """Assemble and solve in one call.

    ``method`` is ``"tikhonov"`` (full linear system), ``"tikhonov_reduced"``
    or ``"clipped"`` (requires ``M``).  Spectral filters live in
    :mod:`kexpfam.spectral`.  The default base is ``N(0, 4 I)``, matching the
    CLI and experiment defaults.
    """
    X = as_samples(samples)
    if base is None:
        base = IsotropicGaussian.standard(X.shape[1], 2.0)
    sys = assemble(X, kernel, base, lam, size_cap=size_cap)
    if method == "tikhonov":
        return model_from_system(sys, *solve_tikhonov(sys))
    if method == "tikhonov_reduced":
        return model_from_system(sys, *solve_tikhonov_reduced(sys), method="tikhonov")
    if method == "clipped":
        if M is None:
            raise ConfigError("clipped fit needs M")
        alpha, beta, _ = solve_clipped(sys, M)
        return model_from_system(sys, alpha, beta, method="clipped", M=M)
    raise ConfigError(f"unknown fit method {method!r}")


def eval_f(model: FittedModel, y):
    return model.f(y)


def eval_grad_f(model: FittedModel, y):
    return model.grad_f(y)


def eval_laplacian_diag_f(model: FittedModel, y):
    return model.laplacian_diag_f(y)


def log_unnormalized_density(model: FittedModel, y):
    return model.log_density(y)
