"""Pure-numpy implementation of the pairwise kernel-derivative kernels.

Two entry points mirror the compiled core in ``_core.pyx``:

``pair_terms(X, code, p1, p2, r, c)``
    Returns ``(G, tsum, s4sum)`` where ``G`` is the ``(n d, n d)`` matrix of
    ``d^2 k(X_a, X_b) / dx_i dy_j`` (row ``a d + i``, column ``b d + j``),
    ``tsum[b, j] = sum_{a, i} d^3 k(X_a, X_b) / dx_i^2 dy_j`` and
    ``s4sum = sum_{a, b, i, j} d^4 k(X_a, X_b) / dx_i^2 dy_j^2``.

``model_terms(Z, X, W, v, code, p1, p2, r, c)``
    Evaluates ``g(z) = sum_b [W_b . grad_y k(z, X_b) + v lap_y k(z, X_b)]``
    together with its gradient and the diagonal of its Hessian in ``z``.

``code`` selects the radial profile (0: Gaussian with length-scale ``p1``;
1: inverse multiquadric with scale ``p1`` and exponent ``p2``) and ``r``,
``c`` the additive polynomial ``r (x.y + c)^2``.
"""

import numpy as np

# bytes budget for (chunk, n, d, d) temporaries
_BLOCK_BYTES = 64 * 2**20


def phi_derivs(code, p1, p2, s):
    if code == 1:
        q = 1.0 / (p1 * p1)
        base = 1.0 + q * s
        out = []
        coef = 1.0
        for k in range(5):
            out.append(coef * q**k * base ** (-p2 - k))
            coef *= -p2 - k
        return out
    a = -0.5 / (p1 * p1)
    e = np.exp(a * s)
    return [e, a * e, a * a * e, a**3 * e, a**4 * e]


def _rows_per_block(n, d):
    return max(1, _BLOCK_BYTES // (8 * max(1, n) * d * d * 3))


def pair_terms(X, code, p1, p2, r, c):
    X = np.ascontiguousarray(X, dtype=float)
    n, d = X.shape
    G = np.empty((n * d, n * d))
    tsum = np.zeros((n, d))
    s4sum = 0.0
    eye = np.eye(d)
    step = _rows_per_block(n, d)
    for start in range(0, n, step):
        Xa = X[start:start + step]
        m = len(Xa)
        u = Xa[:, None, :] - X[None, :, :]
        s = np.einsum("abk,abk->ab", u, u)
        _, p1_, p2_, p3_, p4_ = phi_derivs(code, p1, p2, s)
        uu = u[:, :, :, None] * u[:, :, None, :]
        # -(2 delta_ij phi' + 4 u_i u_j phi'')
        blk = -(2.0 * p1_[:, :, None, None] * eye + 4.0 * p2_[:, :, None, None] * uu)
        radial_t = -u * (4.0 * (d + 2) * p2_ + 8.0 * s * p3_)[:, :, None]
        s4 = ((4.0 * d * d + 8.0 * d) * p2_ + (16.0 * d + 32.0) * s * p3_
              + 16.0 * s * s * p4_)
        if r:
            t = Xa @ X.T + c
            # 2 r (x_j y_i + t delta_ij) with x = X_a, y = X_b
            blk += 2.0 * r * (Xa[:, None, None, :] * X[None, :, :, None]
                              + t[:, :, None, None] * eye)
            radial_t += 4.0 * r * X[None, :, :]
            s4 = s4 + 4.0 * r * d
        G[start * d:(start + m) * d] = blk.transpose(0, 2, 1, 3).reshape(m * d, n * d)
        tsum += radial_t.sum(axis=0)
        s4sum += float(s4.sum())
    return G, tsum, s4sum


def _model_block(Z, X, W, v, code, p1, p2, r, c):
    d = Z.shape[1]
    u = Z[:, None, :] - X[None, :, :]
    s = np.einsum("abk,abk->ab", u, u)
    _, f1, f2, f3, f4 = phi_derivs(code, p1, p2, s)
    wu = np.einsum("abk,bk->ab", u, W)
    f = np.sum(-2.0 * wu * f1 + v * (2.0 * d * f1 + 4.0 * s * f2), axis=1)
    k2 = 4.0 * (d + 2) * f2 + 8.0 * s * f3
    grad = (-2.0 * np.einsum("ab,bk->ak", f1, W)
            + np.einsum("abk,ab->ak", u, -4.0 * wu * f2 + v * k2))
    uw = u * W[None, :, :]
    u2 = u * u
    lap = (np.einsum("abk,ab->ak", uw, -8.0 * f2)
           + np.sum(-4.0 * wu * f2 + v * k2, axis=1)[:, None]
           + np.einsum("abk,ab->ak", u2, -8.0 * wu * f3
                       + v * (8.0 * (d + 4) * f3 + 16.0 * s * f4)))
    if r:
        t = Z @ X.T + c
        wz = W @ Z.T  # (n, m): W_b . z
        f += 2.0 * r * np.sum(t * wz.T, axis=1) + 2.0 * r * v * X.shape[0] * np.sum(Z * Z, axis=1)
        grad += 2.0 * r * (wz.T @ X + t @ W) + 4.0 * r * v * X.shape[0] * Z
        lap += 4.0 * r * np.sum(X * W, axis=0)[None, :] + 4.0 * r * v * X.shape[0]
    return f, grad, lap


def model_terms(Z, X, W, v, code, p1, p2, r, c):
    Z = np.ascontiguousarray(Z, dtype=float)
    X = np.ascontiguousarray(X, dtype=float)
    W = np.ascontiguousarray(W, dtype=float)
    m, d = Z.shape
    n = X.shape[0]
    f = np.empty(m)
    grad = np.empty((m, d))
    lap = np.empty((m, d))
    step = max(1, _BLOCK_BYTES // (8 * max(1, n) * d * 4))
    for start in range(0, m, step):
        sl = slice(start, start + step)
        f[sl], grad[sl], lap[sl] = _model_block(Z[sl], X, W, v, code, p1, p2, r, c)
    return f, grad, lap
