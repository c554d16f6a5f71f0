"""Independent reference computations used by the tests.

These deliberately avoid the vectorized cores: everything is built from the
scalar ``kernel_deriv`` closed forms (themselves checked against sympy and
finite differences) with explicit loops, following the definitions of the
span elements directly.
"""

import numpy as np

from kexpfam.kernels import kernel_deriv


def brute_system(X, spec, base):
    """``(G, h, xi_norm2)`` from pairwise inner products of the span elements."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    L = np.asarray(base.grad_log_density(X)).reshape(n, d)
    N = n * d
    G = np.zeros((N, N))
    h = np.zeros(N)
    xi2 = 0.0
    for a in range(n):
        for b in range(n):
            xa, xb = X[a], X[b]
            for i in range(d):
                for j in range(d):
                    g = kernel_deriv(spec, "dxdy", i, j, xa, xb)
                    G[a * d + i, b * d + j] = g
                    h[b * d + j] += (kernel_deriv(spec, "dx2dy", i, j, xa, xb) + g * L[a, i]) / n
                    xi2 += (kernel_deriv(spec, "dx2dy2", i, j, xa, xb)
                            + kernel_deriv(spec, "dx2dy", i, j, xa, xb) * L[b, j]
                            + kernel_deriv(spec, "dxdy2", i, j, xa, xb) * L[a, i]
                            + g * L[a, i] * L[b, j]) / n**2
    return G, h, xi2


def brute_block_matrices(G, h, xi2, n, lam):
    """``B``, ``Q``, ``H`` and ``Delta`` written out block by block."""
    N = len(h)
    B = np.zeros((N + 1, N + 1))
    B[0, 0] = xi2
    B[0, 1:] = B[1:, 0] = h
    B[1:, 1:] = G
    Q = np.zeros_like(B)
    Q[0, 0] = h @ h / n
    Q[0, 1:] = Q[1:, 0] = G @ h / n
    Q[1:, 1:] = G @ G / n
    return B, Q, Q + lam * B, B[:, 0].copy()


def brute_f(model, z):
    """``(f, grad f, diag Hessian f)`` at one point from scalar derivatives."""
    X, spec, base = model.samples, model.kernel, model.base
    n, d = X.shape
    z = np.asarray(z, dtype=float)
    L = np.asarray(base.grad_log_density(X)).reshape(n, d)
    beta = model.beta.reshape(n, d)
    f = 0.0
    g = np.zeros(d)
    lap = np.zeros(d)
    for a in range(n):
        xa = X[a]
        for i in range(d):
            # xi_hat contribution, derivatives taken in the sample slot
            w = model.alpha / n
            f += w * (kernel_deriv(spec, "dx", i, 0, xa, z) * L[a, i]
                      + kernel_deriv(spec, "dx2", i, 0, xa, z))
            f += beta[a, i] * kernel_deriv(spec, "dx", i, 0, xa, z)
            for m in range(d):
                g[m] += w * (kernel_deriv(spec, "dxdy", i, m, xa, z) * L[a, i]
                             + kernel_deriv(spec, "dx2dy", i, m, xa, z))
                g[m] += beta[a, i] * kernel_deriv(spec, "dxdy", i, m, xa, z)
                lap[m] += w * (kernel_deriv(spec, "dxdy2", i, m, xa, z) * L[a, i]
                               + kernel_deriv(spec, "dx2dy2", i, m, xa, z))
                lap[m] += beta[a, i] * kernel_deriv(spec, "dxdy2", i, m, xa, z)
    return f, g, lap


def eig_minimizer(H, Delta, rcond=1e-15):
    """Minimizer of ``0.5 t^T H t + t^T Delta`` by symmetric eigendecomposition."""
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    keep = w > rcond * w.max()
    return -(V[:, keep] @ ((V[:, keep].T @ Delta) / w[keep]))


def empirical_score(model, X):
    """Unregularized empirical score objective of ``f`` at the samples.

    ``(1/n) sum_a sum_i [0.5 (d_i f)^2 + d_i f d_i log q0 + d_i^2 f]``, which
    is ``0.5 <f, C f> + <f, xi>``.
    """
    _, g, lap = model.terms(X)
    L = np.asarray(model.base.grad_log_density(X))
    return float(np.mean(np.sum(0.5 * g * g + g * L + lap, axis=1)))


def filter_oracle(name, lam, a):
    a = np.asarray(a, dtype=float)
    if name == "tikhonov":
        return 1.0 / (a + lam)
    if name == "cutoff":
        return np.where(a >= lam, 1.0 / np.maximum(a, 1e-300), 0.0)
    out = np.empty_like(a)
    big = a > 1e-8 * lam
    out[big] = (1.0 - np.exp(-a[big] / lam)) / a[big]
    out[~big] = 1.0 / lam - a[~big] / (2 * lam**2)
    return out


def spectral_by_whitening(sys, name, lam, rcond=1e-13):
    """Coefficients of ``-g(C) xi`` through an orthonormal basis of the span.

    The span ``{xi, phi_ai}`` has Gram matrix ``B``.  ``C f = (1/n) sum
    <phi_ai, f> phi_ai`` maps coefficient vectors ``c`` to ``(1/n) P B c``
    with ``P`` dropping the ``xi`` slot.
    """
    B = sys.B
    w, V = np.linalg.eigh(B)
    keep = w > rcond * w.max()
    E = V[:, keep] / np.sqrt(w[keep])
    P = np.eye(len(B))
    P[0, 0] = 0.0
    M = E.T @ B @ P @ B @ E / sys.n
    s, U = np.linalg.eigh(0.5 * (M + M.T))
    s = np.clip(s, 0.0, None)
    u = E.T @ B[:, 0]
    coords = -(U @ (filter_oracle(name, lam, s) * (U.T @ u)))
    theta = E @ coords
    return theta[0], theta[1:]
