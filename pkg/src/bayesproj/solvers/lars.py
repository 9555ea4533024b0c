"""Exact homotopy for the weighted lasso with a least-squares loss.

Solves ``min_b 0.5 * ||t - X b||^2 + delta * sum_j w_j |b_j|`` for every
``delta >= 0``. Zero-weight columns are unpenalized and handled by
projecting them out first.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve

from .base import PenaltySpec, SolutionPath

_COND_LIMIT = 1e12


def _free_basis(Xf: np.ndarray):
    Q, R = np.linalg.qr(Xf)
    diag = np.abs(np.diag(R))
    if diag.size and diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise np.linalg.LinAlgError("unpenalized columns are collinear")
    return Q, R


def lasso_path_gaussian(X, target, penalty: PenaltySpec, max_steps: int | None = None) -> SolutionPath:
    """Piecewise-linear weighted-lasso path from the null fit down to ``delta = 0``.

    Every knot satisfies the subgradient conditions; variables that cross
    zero are dropped (the lasso modification of least-angle regression).
    If the active Gram matrix becomes singular the path is truncated and a
    warning is stored on the returned path.
    """
    X = np.asarray(X, dtype=float)
    t = np.asarray(target, dtype=float).reshape(-1)
    n, p = X.shape
    w = penalty.weights
    if w.shape[0] != p:
        raise ValueError("penalty has the wrong number of weights")
    free = penalty.free
    pen = np.flatnonzero(~free & ~penalty.excluded)
    warnings = []

    if free.any():
        Q, R = _free_basis(X[:, free])
        Z = X[:, pen] - Q @ (Q.T @ X[:, pen])
        tz = t - Q @ (Q.T @ t)
    else:
        Q = R = None
        Z, tz = X[:, pen], t

    def full_beta(bp):
        b = np.zeros(p)
        b[pen] = bp
        if Q is not None:
            resid = t - X[:, pen] @ bp
            b[free] = np.linalg.solve(R, Q.T @ resid)
        return b

    m = pen.shape[0]
    wp = w[pen]
    G = Z.T @ Z
    c0 = Z.T @ tz
    scale = max(1.0, float(np.max(np.abs(c0))) if m else 1.0)
    bp = np.zeros(m)
    knots_d, knots_b = [], []

    def record(delta, bvec):
        knots_d.append(max(delta, 0.0))
        knots_b.append(full_beta(bvec))

    if m == 0:
        record(0.0, bp)
        return _finish(X, t, w, knots_d, knots_b, warnings)
    ratio = np.abs(c0) / wp
    delta = float(ratio.max())
    record(delta, bp)
    if delta <= 1e-13 * scale:
        return _finish(X, t, w, knots_d, knots_b, warnings)

    j0 = int(np.argmax(ratio))
    active = [j0]
    signs = {j0: np.sign(c0[j0])}
    in_active = np.zeros(m, bool)
    in_active[j0] = True
    max_steps = max_steps or 8 * m + 50
    eps = 1e-12

    for _ in range(max_steps):
        A = np.array(active)
        s = np.array([signs[j] for j in active])
        GA = G[np.ix_(A, A)]
        try:
            C = np.linalg.cholesky(GA)
            dg = np.diag(C)
            singular = dg.min() ** 2 < dg.max() ** 2 / _COND_LIMIT
        except np.linalg.LinAlgError:
            singular = True
        if singular:
            warnings.append(f"singular active Gram at delta={delta:.6g}; path truncated")
            break
        d = cho_solve((C, True), wp[A] * s, check_finite=False)
        c = c0 - G @ bp
        a = G[:, A] @ d

        best_t, kind, who = delta, "end", -1
        inact = ~in_active
        if inact.any():
            cj, aj, wj = c[inact], a[inact], wp[inact]
            idx = np.flatnonzero(inact)
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (delta * wj - cj) / (wj - aj)
                t2 = (delta * wj + cj) / (wj + aj)
            for tt in (t1, t2):
                ok = np.isfinite(tt) & (tt > eps * delta)
                if ok.any():
                    k = int(np.argmin(np.where(ok, tt, np.inf)))
                    if tt[k] < best_t * (1 - 1e-10):
                        best_t, kind, who = float(tt[k]), "join", int(idx[k])
        with np.errstate(divide="ignore", invalid="ignore"):
            td = -bp[A] / d
        ok = np.isfinite(td) & (td > eps * delta)
        if ok.any():
            k = int(np.argmin(np.where(ok, td, np.inf)))
            if td[k] < best_t:
                best_t, kind, who = float(td[k]), "drop", int(A[k])

        bp[A] += best_t * d
        delta -= best_t
        if kind == "end":
            record(0.0, bp)
            break
        if kind == "join":
            cnew = c0[who] - G[who] @ bp
            active.append(who)
            signs[who] = np.sign(cnew) if cnew != 0 else 1.0
            in_active[who] = True
        else:
            bp[who] = 0.0
            active.remove(who)
            del signs[who]
            in_active[who] = False
            if not active:
                # everything left the model: restart from the null fit at this delta
                c = c0 - G @ bp
                r = np.abs(c) / wp
                j = int(np.argmax(r))
                active, signs = [j], {j: np.sign(c[j])}
                in_active[j] = True
        record(delta, bp)
        if delta <= 0:
            break
    else:
        warnings.append("maximum number of homotopy steps reached")
    return _finish(X, t, w, knots_d, knots_b, warnings)


def _finish(X, t, w, deltas, betas, warnings) -> SolutionPath:
    deltas = np.array(deltas, dtype=float)
    betas = np.array(betas, dtype=float).reshape(len(deltas), X.shape[1])
    cv = np.sum(w * np.abs(betas), axis=1)
    resid = t[None, :] - betas @ X.T
    obj = 0.5 * np.sum(resid**2, axis=1) + deltas * cv
    return SolutionPath(deltas, betas, cv, obj, t.copy(), "gaussian", warnings)
