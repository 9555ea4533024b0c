"""Non-negative garotte on fitted values, with optional heredity constraints.

The shrinkage factors ``theta`` multiply a fixed coefficient vector
``beta_star`` and satisfy ``theta >= 0``, ``sum(theta) <= lam`` and the
linear heredity inequalities. Gaussian problems are a convex QP solved by a
primal active-set method; other families use sequential quadratic
approximation with the same QP as the inner step.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..glm import Family, get_family
from .base import GarottePath, GarotteSolution, HeredityGraph, SolverError

_RIDGE = 1e-12
_PERTURB = 1e-11


def _qp_active_set(Q, q, A, b, x, W, free_vars=0, max_iter=None, tol=1e-11):
    """Primal active-set method for ``min 0.5 x'Qx - q'x  s.t.  A x <= b``.

    ``x`` must be feasible and ``W`` a list of linearly independent rows
    active at ``x``. Returns the solution, final working set and multipliers.
    """
    nv = Q.shape[0]
    x = np.array(x, dtype=float)
    W = list(W)
    scale = 1.0 + float(np.max(np.abs(q))) + float(np.max(np.abs(np.diag(Q))))
    ptol = tol * scale
    max_iter = max_iter or 20 * (nv + A.shape[0]) + 50
    seen = {}
    for it in range(max_iter):
        g = Q @ x - q
        k = len(W)
        if k:
            AW = A[W]
            K = np.zeros((nv + k, nv + k))
            K[:nv, :nv] = Q
            K[:nv, nv:] = AW.T
            K[nv:, :nv] = AW
            rhs = np.concatenate([-g, np.zeros(k)])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            step, nu = sol[:nv], sol[nv:]
        else:
            step = np.linalg.solve(Q, -g)
            nu = np.zeros(0)
        if np.max(np.abs(step)) <= ptol:
            if k == 0 or nu.min() >= -ptol:
                return x, W, nu
            key = (tuple(sorted(W)), round(float(np.sum(x)), 12))
            seen[key] = seen.get(key, 0) + 1
            if seen[key] > 2:
                # cycling guard: Bland's rule on the negative multipliers
                drop = min(i for i, v in zip(W, nu) if v < -ptol)
                W.remove(drop)
            else:
                W.pop(int(np.argmin(nu)))
            continue
        Ap = A @ step
        slack = b - A @ x
        cand = Ap > ptol
        if W:
            cand[W] = False
        alpha, block = 1.0, -1
        if cand.any():
            ratios = np.maximum(slack[cand], 0.0) / Ap[cand]
            i = int(np.argmin(ratios))
            if ratios[i] < 1.0:
                alpha, block = float(ratios[i]), int(np.flatnonzero(cand)[i])
        x = x + alpha * step
        if block >= 0:
            W.append(block)
    raise SolverError("active-set QP did not converge")


class _GarotteQP:
    """Constraint data for the garotte over ``m`` penalized factors plus ``k`` free coefficients."""

    def __init__(self, m: int, k: int, heredity_rows: np.ndarray, perturb: float = 0.0):
        self.m, self.k = m, k
        nv = m + k
        rows = [np.hstack([np.zeros((m, k)), -np.eye(m)])]
        if heredity_rows.size:
            rows.append(np.hstack([np.zeros((heredity_rows.shape[0], k)), heredity_rows]))
        budget = np.concatenate([np.zeros(k), np.ones(m)])[None, :]
        rows.append(budget)
        self.A = np.vstack(rows).reshape(-1, nv)
        self.budget = self.A.shape[0] - 1
        # distinct tiny offsets on the homogeneous rows break ties between
        # constraints that meet at one vertex (heredity rows at theta = 0)
        r = np.arange(self.A.shape[0])
        self.b0 = perturb * (1.0 + np.mod(r * 0.6180339887498949, 1.0))
        self.b0[self.budget] = 0.0

    def b(self, lam: float) -> np.ndarray:
        b = self.b0.copy()
        b[self.budget] += lam
        return b


def _setup(X, beta_star, free, heredity: Optional[HeredityGraph]):
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    bs = np.asarray(beta_star, dtype=float).reshape(-1)
    if bs.shape[0] != p:
        raise ValueError("beta_star has the wrong length")
    free = np.zeros(p, bool) if free is None else np.asarray(free, bool)
    pen = np.flatnonzero(~free)
    pos = {int(j): i for i, j in enumerate(pen)}
    heredity = heredity or HeredityGraph.empty(p)
    for i, ps in heredity.parents.items():
        if i >= p or any(j >= p for j in ps):
            raise ValueError("heredity graph references a column outside X")
        if free[i] or any(free[j] for j in ps):
            raise ValueError("heredity constraints cannot involve unpenalized columns")
    full_rows = heredity.constraint_rows(p)
    hrows = full_rows[:, pen] if full_rows.size else np.zeros((0, pen.shape[0]))
    return X, bs, free, pen, hrows


def _assemble(theta_p, u, bs, free, pen, p):
    theta = np.zeros(p)
    theta[pen] = theta_p
    beta = np.zeros(p)
    beta[pen] = bs[pen] * theta_p
    beta[free] = u
    return theta, beta


def garotte_path(X, beta_star, target_mu, lambdas: Sequence[float],
                 heredity: Optional[HeredityGraph] = None, free=None,
                 family="gaussian", weights=None) -> GarottePath:
    """Garotte solutions at each constraint level in ``lambdas``.

    Levels are solved in increasing order with warm starts; within a stretch
    where the working set does not change the solution is affine in the
    level, so whole runs of grid points are accepted from one KKT solve.
    """
    fam = get_family(family)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas < 0):
        raise ValueError("constraint level must be non-negative")
    if fam.kind != "gaussian":
        return _glm_garotte_path(X, beta_star, target_mu, lambdas, heredity, free, fam, weights)

    X, bs, free, pen, hrows = _setup(X, beta_star, free, heredity)
    n, p = X.shape
    t = np.asarray(target_mu, dtype=float).reshape(-1)
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        X, t = X * sw[:, None], t * sw
    Z = X[:, pen] * bs[pen]
    if free.any():
        Qf, Rf = np.linalg.qr(X[:, free])
        Zr = Z - Qf @ (Qf.T @ Z)
        tr = t - Qf @ (Qf.T @ t)
    else:
        Zr, tr = Z, t
    m = pen.shape[0]
    Q = Zr.T @ Zr
    Q[np.diag_indices(m)] += _RIDGE * (1.0 + np.max(np.diag(Q), initial=0.0))
    q = Zr.T @ tr
    qp = _GarotteQP(m, 0, hrows, _PERTURB if hrows.size else 0.0)
    thetas = _qp_path(Q, q, qp, lambdas)

    th = np.maximum(thetas, 0.0)
    L = th.shape[0]
    if free.any():
        U = np.linalg.solve(Rf, Qf.T @ (t[:, None] - Z @ th.T)).T
    else:
        U = np.zeros((L, 0))
    theta = np.zeros((L, p))
    theta[:, pen] = th
    beta = np.zeros((L, p))
    beta[:, pen] = th * bs[pen]
    beta[:, free] = U
    r = t[None, :] - beta @ X.T
    return GarottePath(lambdas.copy(), theta, beta, 0.5 * np.einsum("ij,ij->i", r, r), U)


def _kkt_affine(Q, q, A, W, budget, b0):
    """KKT solution for working set ``W`` as an affine function of the level."""
    nv, k = Q.shape[0], len(W)
    K = np.zeros((nv + k, nv + k))
    K[:nv, :nv] = Q
    K[:nv, nv:] = A[W].T
    K[nv:, :nv] = A[W]
    rhs = np.zeros((nv + k, 2))
    rhs[:nv, 0] = q
    rhs[nv:, 0] = b0[W]
    rhs[nv + W.index(budget), 1] = 1.0
    uv = np.linalg.solve(K, rhs)
    if not np.all(np.isfinite(uv)):
        raise np.linalg.LinAlgError("degenerate working set")
    return uv[:nv], uv[nv:]


def _qp_path(Q, q, qp: _GarotteQP, lambdas):
    A, budget = qp.A, qp.budget
    nv = Q.shape[0]
    order = np.argsort(lambdas, kind="stable")
    lam_sorted = lambdas[order]
    L = lam_sorted.shape[0]
    sols = np.zeros((L, nv))
    # start from theta = 0 with every non-negativity row held; multipliers
    # then release the factors one at a time
    W0 = list(range(qp.m)) if qp.k == 0 else []
    x, W, _ = _qp_active_set(Q, q, A, qp.b(lam_sorted[0]), np.zeros(nv), W0)
    sols[0] = x
    lam_cur = float(lam_sorted[0])
    scale = 1.0 + float(np.max(np.abs(q))) + float(np.max(np.abs(np.diag(Q))))
    ftol = 1e-10 * max(1.0, float(lam_sorted[-1]))
    ntol = 1e-10 * scale
    e_b = np.zeros(A.shape[0])
    e_b[budget] = 1.0
    i, events = 1, 0
    max_events = 3
    while i < L:
        if budget not in W:
            sols[i:] = x
            break
        try:
            xa, na = _kkt_affine(Q, q, A, W, budget, qp.b0)
        except np.linalg.LinAlgError:
            xa = None
        if xa is not None:
            lam_rest = lam_sorted[i:]
            xs = xa[:, 0][None, :] + lam_rest[:, None] * xa[:, 1][None, :]
            nus = na[:, 0][None, :] + lam_rest[:, None] * na[:, 1][None, :]
            slack = qp.b0[None, :] + lam_rest[:, None] * e_b[None, :] - xs @ A.T
            ok = (slack.min(axis=1) >= -ftol) & (nus.min(axis=1) >= -ntol)
            n_ok = ok.shape[0] if ok.all() else int(np.argmin(ok))
            if n_ok:
                sols[i:i + n_ok] = xs[:n_ok]
                x = xs[n_ok - 1]
                lam_cur = float(lam_rest[n_ok - 1])
                i += n_ok
                events = 0
                if i >= L:
                    break
            event = _next_event(A, qp.b0, W, xa, na, e_b, lam_cur, float(lam_sorted[i]))
        else:
            event = None
        if event is not None and event[2] > lam_cur:
            lam_cur, events = event[2], 0
        events += 1
        if event is not None and events <= max_events:
            kind, r, lam_ev = event
            x = xa[:, 0] + lam_ev * xa[:, 1]
            if kind == "drop":
                W = [w for w in W if w != r]
                continue
            if not W or _residual_norm(A[W], A[r]) > 1e-9:
                W = W + [r]
                continue
        # degenerate or stuck: fall back to a full active-set solve
        lam = float(lam_sorted[i])
        b = qp.b(lam)
        x0 = np.clip(x, 0.0, None) if qp.k == 0 else x
        Wn = _still_active(A, b, x0, [w for w in W if w != budget])
        x, W, _ = _qp_active_set(Q, q, A, b, x0, Wn)
        sols[i] = x
        lam_cur = lam
        i += 1
        events = 0
    out = np.empty_like(sols)
    out[order] = sols
    return out


def _next_event(A, b0, W, xa, na, e_b, lam_lo, lam_hi):
    """First constraint or multiplier sign change of the affine KKT path after ``lam_lo``.

    Only rows that are violated at ``lam_hi`` are candidates; a row that is
    already violated at ``lam_lo`` gives an event at ``lam_lo``.
    """
    s0 = b0 - A @ xa[:, 0]
    s1 = e_b - A @ xa[:, 1]
    in_w = np.zeros(A.shape[0], bool)
    in_w[W] = True
    best, ev = np.inf, None
    for r in np.flatnonzero(~in_w & (s0 + lam_hi * s1 < 0)):
        lr = -s0[r] / s1[r] if s1[r] < 0 else lam_lo
        lr = max(lr, lam_lo)
        if lr < best:
            best, ev = lr, ("add", int(r), lr)
    for j, r in enumerate(W):
        if na[j, 0] + lam_hi * na[j, 1] < 0:
            lr = -na[j, 0] / na[j, 1] if na[j, 1] < 0 else lam_lo
            lr = max(lr, lam_lo)
            if lr < best:
                best, ev = lr, ("drop", int(r), lr)
    return ev


def _residual_norm(M, v):
    """Distance from ``v`` to the row space of ``M``."""
    c = np.linalg.lstsq(M.T, v, rcond=None)[0]
    return float(np.linalg.norm(M.T @ c - v))


def _still_active(A, b, x, W, tol=1e-12):
    return [r for r in W if b[r] - A[r] @ x <= tol * (1.0 + abs(b[r]))]


def garotte_fit(X, beta_star, target_mu, lam: float,
                heredity: Optional[HeredityGraph] = None, free=None,
                family="gaussian", weights=None) -> GarotteSolution:
    """Garotte projection at a single constraint level ``lam``."""
    if lam < 0:
        raise ValueError("constraint level must be non-negative")
    return garotte_path(X, beta_star, target_mu, [lam], heredity, free, family, weights)[0]


def _glm_garotte_path(X, beta_star, target_mu, lambdas, heredity, free, fam: Family, weights,
                      max_outer: int = 200, tol: float = 1e-11):
    X, bs, free, pen, hrows = _setup(X, beta_star, free, heredity)
    n, p = X.shape
    y = np.asarray(target_mu, dtype=float).reshape(-1)
    A_w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    Xf = X[:, free]
    Z = X[:, pen] * bs[pen]
    D = np.hstack([Xf, Z])
    k, m = Xf.shape[1], Z.shape[1]
    qp = _GarotteQP(m, k, hrows)

    def objective(v):
        eta = D @ v
        return float(np.sum(A_w * (fam.cumulant(eta) - y * eta)))

    order = np.argsort(lambdas, kind="stable")
    v = np.zeros(k + m)
    if k:
        # free coefficients at theta = 0 by Newton
        for _ in range(100):
            eta = D @ v
            g = -Xf.T @ (A_w * (y - fam.mean(eta)))
            H = Xf.T @ (Xf * (A_w * fam.variance(eta))[:, None])
            step = np.linalg.solve(H, g)
            v[:k] -= step
            if np.max(np.abs(step)) < 1e-12:
                break
    W: list = []
    L = len(lambdas)
    thetas, betas = np.zeros((L, p)), np.zeros((L, p))
    objs, us = np.zeros(L), np.zeros((L, k))
    for idx in order:
        lam = float(lambdas[idx])
        b = qp.b(lam)
        W = _still_active(qp.A, b, v, W)
        f_old = objective(v)
        for it in range(max_outer):
            eta = D @ v
            wts = A_w * fam.variance(eta)
            grad = -D.T @ (A_w * (y - fam.mean(eta)))
            H = D.T @ (D * wts[:, None])
            H[np.diag_indices(k + m)] += _RIDGE * (1.0 + np.max(np.diag(H)))
            # quadratic model in the step s: 0.5 s'Hs + grad's, i.e. QP in x = v + s
            qlin = H @ v - grad
            x_new, W, _ = _qp_active_set(H, qlin, qp.A, b, v, W)
            step = x_new - v
            t, f_new = 1.0, objective(x_new)
            while f_new > f_old + 1e-14 * (1 + abs(f_old)) and t > 1e-10:
                t *= 0.5
                f_new = objective(v + t * step)
            v = v + t * step
            W = _still_active(qp.A, b, v, W)
            done = np.max(np.abs(t * step)) < tol * (1 + np.max(np.abs(v)))
            f_old = f_new
            if done:
                break
        th = np.maximum(v[k:], 0.0)
        thetas[idx], betas[idx] = _assemble(th, v[:k], bs, free, pen, p)
        objs[idx], us[idx] = f_old, v[:k]
    return GarottePath(np.asarray(lambdas, dtype=float).copy(), thetas, betas, objs, us)
