"""Slow, independent reference solvers used only by the tests."""
from __future__ import annotations

import itertools

import numpy as np


def lasso_sign_oracle(X, t, weights, delta, tol=1e-9):
    """Weighted lasso solution at ``delta`` by enumerating every sign pattern.

    Minimizes ``0.5 ||t - X b||^2 + delta * sum w_j |b_j|``; zero-weight
    columns are always free. Returns the unique pattern-consistent solution.
    """
    X = np.asarray(X, float)
    t = np.asarray(t, float)
    w = np.asarray(weights, float)
    p = X.shape[1]
    free = np.flatnonzero(w == 0)
    pen = np.flatnonzero(w > 0)
    sols = []
    for signs in itertools.product((-1, 0, 1), repeat=pen.size):
        s = np.zeros(p)
        s[pen] = signs
        A = np.sort(np.concatenate([free, pen[np.array(signs) != 0]])).astype(int)
        b = np.zeros(p)
        if A.size:
            G = X[:, A].T @ X[:, A]
            rhs = X[:, A].T @ t - delta * w[A] * s[A]
            try:
                b[A] = np.linalg.solve(G, rhs)
            except np.linalg.LinAlgError:
                continue
        ok = all(np.sign(b[j]) == s[j] and abs(b[j]) > tol for j in pen if s[j] != 0)
        r = X.T @ (t - X @ b)
        ok = ok and all(abs(r[j]) <= delta * w[j] + 1e-7 * (1 + delta) for j in pen if s[j] == 0)
        if ok:
            sols.append(b)
    if not sols:
        raise RuntimeError("no sign pattern satisfies the optimality conditions")
    return sols[0], sols


def garotte_face_oracle(Q, q, A, b):
    """Exact minimum of ``0.5 x'Qx - q'x`` subject to ``A x <= b`` by enumerating faces.

    Every subset of constraints is tried as an equality set; the feasible
    stationary point with the smallest objective is the global minimum
    when ``Q`` is positive definite.
    """
    m, n = A.shape
    best, best_x = np.inf, None
    for k in range(0, min(m, n) + 1):
        for W in itertools.combinations(range(m), k):
            W = list(W)
            K = np.zeros((n + k, n + k))
            K[:n, :n] = Q
            if k:
                K[:n, n:] = A[W].T
                K[n:, :n] = A[W]
            rhs = np.concatenate([q, b[W]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            if np.all(A @ x <= b + 1e-10):
                f = 0.5 * x @ Q @ x - q @ x
                if f < best:
                    best, best_x = f, x
    return best_x, best


def _dykstra(z, A, b, iters=300):
    """Euclidean projection onto ``{x : A x <= b}`` by Dykstra's alternating projections."""
    x = z.copy()
    inc = np.zeros((A.shape[0], z.size))
    norms = np.einsum("ij,ij->i", A, A)
    for _ in range(iters):
        x_old = x
        for i in range(A.shape[0]):
            y = x + inc[i]
            v = A[i] @ y - b[i]
            xn = y - (v / norms[i]) * A[i] if v > 0 else y
            inc[i] = y - xn
            x = xn
        if np.max(np.abs(x - x_old)) < 1e-13:
            break
    return x


def projected_gradient_qp(Q, q, A, b, iters=20000, tol=1e-12):
    """Accelerated projected gradient for ``min 0.5 x'Qx - q'x`` over ``A x <= b``."""
    n = Q.shape[0]
    L = float(np.linalg.eigvalsh(Q).max())
    x = _dykstra(np.zeros(n), A, b)
    y, tk = x.copy(), 1.0
    for _ in range(iters):
        xn = _dykstra(y - (Q @ y - q) / L, A, b)
        tn = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        y = xn + ((tk - 1) / tn) * (xn - x)
        if np.max(np.abs(xn - x)) < tol:
            x = xn
            break
        x, tk = xn, tn
    return x, 0.5 * x @ Q @ x - q @ x


def garotte_qp(X, beta_star, target, lam, heredity_rows=None):
    """The garotte as an explicit QP in ``theta``: ``(Q, q, A, b, constant)``."""
    Z = X * beta_star
    Q = Z.T @ Z
    q = Z.T @ target
    p = X.shape[1]
    rows = [-np.eye(p), np.ones((1, p))]
    rhs = [np.zeros(p), [lam]]
    if heredity_rows is not None and heredity_rows.size:
        rows.append(heredity_rows)
        rhs.append(np.zeros(heredity_rows.shape[0]))
    return Q, q, np.vstack(rows), np.concatenate(rhs), 0.5 * target @ target


def logistic_l1_grid_oracle(X, mu, lam, size=801):
    """Constrained logistic fit over ``|b_1| + |b_2| <= lam`` by a dense grid (two coefficients)."""
    g = np.linspace(-lam, lam, size)
    B1, B2 = np.meshgrid(g, g, indexing="ij")
    keep = np.abs(B1) + np.abs(B2) <= lam + 1e-12
    B = np.column_stack([B1[keep], B2[keep]])
    eta = B @ X.T
    obj = np.sum(np.logaddexp(0.0, eta) - mu * eta, axis=1)
    k = int(np.argmin(obj))
    return B[k], obj[k], g[1] - g[0]


def logistic_objective(X, mu, b):
    eta = X @ b
    return float(np.sum(np.logaddexp(0.0, eta) - mu * eta))
