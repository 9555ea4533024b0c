"""Weighted-lasso fits for binomial and poisson losses against pseudo-responses.

The loss is ``sum_i A_i [b(x_i'b) - mu_i x_i'b]``, the negative log-likelihood
of the fitted means ``mu`` up to a constant. Two engines are provided: an
exact predictor-corrector homotopy that tracks every change of active set,
and coordinate descent over iteratively reweighted least squares on a fixed
grid of penalty values (which also covers the elastic net).
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve
from scipy.optimize import brentq

from ..glm import Dataset, Family, get_family
from .base import PenaltySpec, SolutionPath, SolverError

_COND_LIMIT = 1e12


class _Loss:
    """Pseudo-likelihood loss and its derivatives on a column subset."""

    def __init__(self, X, mu, family: Family, weights=None):
        self.X = np.asarray(X, dtype=float)
        self.mu = np.asarray(mu, dtype=float).reshape(-1)
        self.fam = get_family(family)
        n = self.X.shape[0]
        self.A = np.ones(n) if weights is None else np.asarray(weights, dtype=float)

    def value(self, eta) -> float:
        return float(np.sum(self.A * (self.fam.cumulant(eta) - self.mu * eta)))

    def score(self, eta, cols=None):
        """Negative gradient ``X'A(mu - b'(eta))``."""
        Xc = self.X if cols is None else self.X[:, cols]
        return Xc.T @ (self.A * (self.mu - self.fam.mean(eta)))

    def hessian(self, eta, cols):
        Xc = self.X[:, cols]
        v = self.A * self.fam.variance(eta)
        return Xc.T @ (Xc * v[:, None])


def _newton_signed(loss: _Loss, E, beta_E, delta, ws_E, tol=1e-12, max_iter=100):
    """Minimize ``loss + delta * ws_E' beta_E`` over the columns ``E``.

    With ``ws_E`` holding ``w_j * sign_j`` on penalized columns and zero on
    free ones this is the lasso objective with the signs held fixed.
    """
    XE = loss.X[:, E]
    b = np.array(beta_E, dtype=float)
    eta = XE @ b
    f = loss.value(eta) + delta * float(ws_E @ b)
    for _ in range(max_iter):
        g = loss.score(eta, E) - delta * ws_E
        H = loss.hessian(eta, E)
        try:
            step = cho_solve(cho_factor(H, check_finite=False), g, check_finite=False)
        except LinAlgError:
            raise SolverError("singular information matrix on the active set")
        t = 1.0
        while True:
            bn = b + t * step
            en = XE @ bn
            fn = loss.value(en) + delta * float(ws_E @ bn)
            if np.isfinite(fn) and fn <= f + 1e-13 * (1.0 + abs(f)):
                break
            t *= 0.5
            if t < 1e-12:
                raise SolverError("line search failed in the Newton corrector")
        b, eta, f = bn, en, fn
        if np.max(np.abs(t * step)) <= tol * (1.0 + np.max(np.abs(b))):
            return b
    raise SolverError("Newton corrector did not converge")


def glm_lasso_path(X, target_mu, penalty: PenaltySpec, family="binomial", weights=None,
                   max_steps: Optional[int] = None, points_per_segment: int = 4) -> SolutionPath:
    """Exact weighted-lasso path for a GLM loss, from the null fit down to ``delta = 0``.

    Every active-set change is located to solver precision and recorded as a
    knot; extra points are stored inside each segment so that linear
    interpolation in the constraint value is accurate. Each stored point is
    an exact solution at its ``delta``.
    """
    loss = _Loss(X, target_mu, family, weights)
    n, p = loss.X.shape
    w = penalty.weights
    if w.shape[0] != p:
        raise ValueError("penalty has the wrong number of weights")
    free = np.flatnonzero(penalty.free)
    pen_mask = ~penalty.free & ~penalty.excluded
    warnings = []

    beta = np.zeros(p)
    if free.size:
        beta[free] = _newton_signed(loss, list(free), np.zeros(free.size), 0.0, np.zeros(free.size))
    eta = loss.X @ beta
    c = loss.score(eta)
    ratio = np.where(pen_mask, np.abs(c) / np.where(pen_mask, w, 1.0), -np.inf)
    deltas, betas = [], []

    def record(d, b):
        deltas.append(max(float(d), 0.0))
        betas.append(b.copy())

    delta = float(ratio.max()) if pen_mask.any() else 0.0
    record(delta, beta)
    scale = 1.0 + float(np.max(np.abs(c), initial=0.0))
    if delta <= 1e-13 * scale:
        return _finish(loss, w, deltas, betas, warnings)

    j0 = int(np.argmax(ratio))
    signs = np.zeros(p)
    signs[j0] = np.sign(c[j0])
    active = np.zeros(p, bool)
    active[j0] = True
    hmax = deltas[0] / max(points_per_segment, 1)
    max_steps = max_steps or 40 * p + 200
    ev_tol = 1e-9

    for _ in range(max_steps):
        E = np.concatenate([free, np.flatnonzero(active)])
        ws = w[E] * signs[E]
        eta = loss.X @ beta
        H = loss.hessian(eta, E)
        try:
            C = cho_factor(H, check_finite=False)
            dg = np.diag(C[0])
            if dg.min() ** 2 < dg.max() ** 2 / _COND_LIMIT:
                raise LinAlgError
        except LinAlgError:
            warnings.append(f"singular information on the active set at delta={delta:.6g}; path truncated")
            break
        d = cho_solve(C, ws, check_finite=False)
        # linear predictions of the next event as delta decreases by t
        Xd = loss.X[:, E] @ d
        a = loss.X.T @ (loss.A * loss.fam.variance(eta) * Xd)
        cand_t, cand = delta, ("end", -1)
        inact = np.flatnonzero(pen_mask & ~active)
        if inact.size:
            cj, aj, wj = c[inact], a[inact], w[inact]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (delta * wj - cj) / (wj - aj)
                t2 = (delta * wj + cj) / (wj + aj)
            for tt in (t1, t2):
                ok = np.isfinite(tt) & (tt > 0)
                if ok.any():
                    k = int(np.argmin(np.where(ok, tt, np.inf)))
                    if tt[k] < cand_t:
                        cand_t, cand = float(tt[k]), ("join", int(inact[k]))
        actp = np.flatnonzero(active)
        dA = d[free.size:]
        with np.errstate(divide="ignore", invalid="ignore"):
            td = -beta[actp] / dA
        ok = np.isfinite(td) & (td > 0)
        if ok.any():
            k = int(np.argmin(np.where(ok, td, np.inf)))
            if td[k] < cand_t:
                cand_t, cand = float(td[k]), ("drop", int(actp[k]))

        h = min(cand_t, hmax)
        new_delta = delta - h if h < delta else 0.0
        b_E = _newton_signed(loss, E, beta[E] + (delta - new_delta) * d, new_delta, ws)
        trial = np.zeros(p)
        trial[E] = b_E
        viol = _violations(loss, trial, new_delta, w, pen_mask, active, signs, ev_tol)
        if viol:
            new_delta, trial = _locate_event(loss, E, ws, beta, d, delta, new_delta, w,
                                             pen_mask, active, signs, ev_tol)
        beta = trial
        delta = new_delta
        c = loss.score(loss.X @ beta)
        # apply every event that is due at this delta
        changed = False
        was_active = np.flatnonzero(active)
        for j in np.flatnonzero(pen_mask & ~active):
            if abs(c[j]) >= delta * w[j] * (1 - ev_tol) - ev_tol * scale and delta > 0:
                if _joins(loss, beta, delta, w, j, np.sign(c[j]), free, active, signs):
                    active[j], signs[j], changed = True, np.sign(c[j]), True
        for j in was_active:
            if abs(beta[j]) <= ev_tol * (1.0 + np.max(np.abs(beta))):
                beta[j], active[j], signs[j], changed = 0.0, False, 0.0, True
        record(delta, beta)
        if delta <= 0:
            break
        if not active.any() and not changed:
            # every penalized coefficient left: restart from the null fit
            ratio = np.where(pen_mask, np.abs(c) / np.where(pen_mask, w, 1.0), -np.inf)
            j = int(np.argmax(ratio))
            active[j], signs[j] = True, np.sign(c[j]) or 1.0
    else:
        warnings.append("maximum number of homotopy steps reached")
    return _finish(loss, w, deltas, betas, warnings)


def _violations(loss, beta, delta, w, pen_mask, active, signs, tol):
    c = loss.score(loss.X @ beta)
    inact = pen_mask & ~active
    scale = 1.0 + np.max(np.abs(c))
    bad_join = inact & (np.abs(c) > delta * w * (1 + tol) + tol * scale)
    bad_sign = active & (signs * beta < -tol * (1.0 + np.max(np.abs(beta))))
    return bool(bad_join.any() or bad_sign.any())


def _locate_event(loss, E, ws, beta, direction, d_hi, d_lo, w, pen_mask, active, signs, tol):
    """Largest delta in ``(d_lo, d_hi)`` where the fixed-sign solution stops being optimal.

    The optimality margin (smallest slack over the subgradient bounds of
    inactive columns and the signs of active ones) is positive just below
    ``d_hi`` and negative at ``d_lo``; its crossing is found by Brent's method.
    """
    p = beta.shape[0]
    inact = np.flatnonzero(pen_mask & ~active)
    actp = np.flatnonzero(active)
    b_hi = beta[E].copy()

    def solve_at(dv):
        b_E = _newton_signed(loss, E, b_hi + (d_hi - dv) * direction, dv, ws)
        full = np.zeros(p)
        full[E] = b_E
        return full

    def margin(dv):
        b = solve_at(dv)
        c = loss.score(loss.X @ b)
        m = np.inf
        if inact.size:
            m = min(m, float(np.min(dv * w[inact] - np.abs(c[inact]))))
        if actp.size:
            m = min(m, float(np.min(signs[actp] * b[actp])))
        return m

    lo, hi = d_lo, d_hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if margin(mid) > 0:
            root = brentq(margin, lo, mid, xtol=1e-12 * (1.0 + d_hi), maxiter=200)
            return root, solve_at(root)
        lo = mid
    return hi, solve_at(hi)


def _joins(loss, beta, delta, w, j, s, free, active, signs):
    """Check that adding ``j`` with sign ``s`` moves it away from zero as delta decreases."""
    act = active.copy()
    act[j] = True
    E = np.concatenate([free, np.flatnonzero(act)])
    sg = signs.copy()
    sg[j] = s
    H = loss.hessian(loss.X @ beta, E)
    try:
        d = solve(H, w[E] * sg[E], assume_a="pos", check_finite=False)
    except LinAlgError:
        return False
    k = int(np.flatnonzero(E == j)[0])
    return bool(s * d[k] > 0)


def _finish(loss: _Loss, w, deltas, betas, warnings) -> SolutionPath:
    deltas = np.array(deltas, dtype=float)
    betas = np.array(betas, dtype=float).reshape(len(deltas), loss.X.shape[1])
    cv = np.sum(w * np.abs(betas), axis=1)
    eta = betas @ loss.X.T
    vals = np.sum(loss.A * (loss.fam.cumulant(eta) - loss.mu * eta), axis=1)
    return SolutionPath(deltas, betas, cv, vals + deltas * cv, loss.mu.copy(),
                        loss.fam.kind, warnings)


def glm_constrained_at(path: SolutionPath, X, penalty: PenaltySpec, lam: float,
                       weights=None, tol: float = 1e-12) -> np.ndarray:
    """Exact solution with weighted L1 norm ``lam`` on a GLM homotopy path.

    Starts from linear interpolation between the two stored points that
    bracket ``lam`` and solves the stationarity conditions together with
    ``sum_j w_j |b_j| = lam`` by Newton's method in ``(b, delta)``.
    """
    return glm_constrained_levels(path, X, penalty, [lam], weights, tol)[0]


def glm_constrained_levels(path: SolutionPath, X, penalty: PenaltySpec, lams: Sequence[float],
                           weights=None, tol: float = 1e-12) -> np.ndarray:
    """:func:`glm_constrained_at` for several levels, one row per level."""
    lams = np.asarray(lams, dtype=float).reshape(-1)
    if np.any(lams < 0):
        raise ValueError("constraint level must be non-negative")
    loss = _Loss(X, path.target, path.family, weights)
    out = np.empty((lams.shape[0], loss.X.shape[1]))
    for i, lam in enumerate(lams):
        out[i] = _constrained(loss, path, penalty, lam, tol)
    return out


def _constrained(loss: _Loss, path: SolutionPath, penalty: PenaltySpec, lam: float, tol):
    k, t = path.segment(lam)
    if t == 0.0 or t == 1.0:
        return path.betas[k + int(t == 1.0)].copy()
    b0 = (1 - t) * path.betas[k] + t * path.betas[k + 1]
    d0 = (1 - t) * path.deltas[k] + t * path.deltas[k + 1]
    w = penalty.weights
    nz = (path.betas[k] != 0) | (path.betas[k + 1] != 0)
    E = np.flatnonzero(penalty.free | nz)
    s = np.sign(np.where(path.betas[k + 1] != 0, path.betas[k + 1], path.betas[k]))[E]
    s[penalty.free[E]] = 0.0
    ws = w[E] * s
    b, dl = b0[E].copy(), float(d0)
    m = E.shape[0]
    XE = loss.X[:, E]
    J = np.zeros((m + 1, m + 1))
    rhs = np.empty(m + 1)
    for _ in range(50):
        eta = XE @ b
        v = loss.A * loss.fam.variance(eta)
        rhs[:m] = -(XE.T @ (loss.A * (loss.mu - loss.fam.mean(eta))) - dl * ws)
        rhs[m] = lam - float(ws @ b)
        J[:m, :m] = -(XE.T @ (XE * v[:, None]))
        J[:m, m] = -ws
        J[m, :m] = ws
        try:
            step = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError:
            break
        b += step[:m]
        dl += step[m]
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(b)) + abs(dl)):
            break
    out = np.zeros(loss.X.shape[1])
    out[E] = b
    if dl < -1e-8 or np.any(s * b < -1e-8 * (1 + np.max(np.abs(b)))) or not np.all(np.isfinite(b)):
        return b0
    return out


def default_delta_grid(dataset: Dataset, penalty: PenaltySpec, size: int = 100,
                       ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced grid from the smallest penalty giving the null fit down to ``ratio`` times it."""
    loss = _Loss(dataset.X, dataset.y, dataset.family, dataset.weights)
    free = np.flatnonzero(penalty.free)
    beta = np.zeros(dataset.p)
    if free.size:
        beta[free] = _newton_signed(loss, list(free), np.zeros(free.size), 0.0, np.zeros(free.size))
    c = loss.score(loss.X @ beta)
    pen = ~penalty.free & ~penalty.excluded
    dmax = float(np.max(np.abs(c[pen]) / penalty.weights[pen])) if pen.any() else 0.0
    if dmax <= 0:
        return np.zeros(1)
    return dmax * np.logspace(0.0, np.log10(ratio), size)


def _cd_weighted(G, cvec, beta, pen_w, ridge, delta, fixed, tol=1e-12, max_sweeps=5000):
    """Coordinate descent for ``0.5 b'Gb - c'b + delta * (sum w|b| + ridge * sum b^2)``."""
    b = beta.copy()
    Gb = G @ b
    idx = np.flatnonzero(~fixed)
    diag = np.diag(G)
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in idx:
            old = b[j]
            z = cvec[j] - Gb[j] + diag[j] * old
            thr = delta * pen_w[j]
            num = np.sign(z) * max(abs(z) - thr, 0.0)
            den = diag[j] + (2.0 * delta * ridge if pen_w[j] > 0 else 0.0)
            new = num / den if den > 0 else 0.0
            if new != old:
                Gb += G[:, j] * (new - old)
                b[j] = new
                biggest = max(biggest, abs(new - old))
        if biggest <= tol:
            break
    return b


def _penalized_objective(loss, beta, penalty, delta):
    return loss.value(loss.X @ beta) + delta * penalty.value(beta)


def glm_penalized_path(dataset: Dataset, penalty: PenaltySpec,
                       delta_grid: Optional[Sequence[float]] = None,
                       max_outer: int = 500, tol: float = 1e-8) -> SolutionPath:
    """Coordinate descent over IRLS on a decreasing grid of penalty values.

    The response of ``dataset`` may be fitted means. Each grid point is warm
    started from the previous one. A grid point whose objective rises for
    five consecutive outer iterations is recorded as a failure in the path
    warnings and keeps its last iterate.
    """
    loss = _Loss(dataset.X, dataset.y, dataset.family, dataset.weights)
    n, p = dataset.X.shape
    if penalty.p != p:
        raise ValueError("penalty has the wrong number of weights")
    grid = default_delta_grid(dataset, penalty) if delta_grid is None else np.asarray(delta_grid, float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 0):
        raise ValueError("delta grid must be a non-empty vector of non-negative values")
    order = np.argsort(-grid, kind="stable")
    w = penalty.weights
    fixed = penalty.excluded
    fam = loss.fam
    beta = np.zeros(p)
    out = np.zeros((grid.size, p))
    warnings = []
    for idx in order:
        delta = float(grid[idx])
        f_old = _penalized_objective(loss, beta, penalty, delta)
        rises = 0
        for it in range(max_outer):
            eta = loss.X @ beta
            v = loss.A * fam.variance(eta)
            z = eta + (loss.mu - fam.mean(eta)) / fam.variance(eta)
            G = loss.X.T @ (loss.X * v[:, None])
            cvec = loss.X.T @ (v * z)
            new = _cd_weighted(G, cvec, beta, w, penalty.ridge, delta, fixed)
            f_new = _penalized_objective(loss, new, penalty, delta)
            if not np.isfinite(f_new) or f_new > f_old + 1e-12 * (1.0 + abs(f_old)):
                rises += 1
                if rises >= 5:
                    warnings.append(f"divergence at delta={delta:.6g}: objective rose 5 times")
                    break
                # damp toward the current iterate
                t = 0.5
                while t > 1e-6:
                    trial = beta + t * (new - beta)
                    ft = _penalized_objective(loss, trial, penalty, delta)
                    if np.isfinite(ft) and ft <= f_old:
                        new, f_new = trial, ft
                        break
                    t *= 0.5
            else:
                rises = 0
            change = np.max(np.abs(new - beta))
            beta, f_old = new, min(f_new, f_old) if np.isfinite(f_new) else f_old
            if change < tol:
                break
        out[idx] = beta
    cv = np.sum(w * np.abs(out), axis=1)
    eta = out @ loss.X.T
    vals = np.sum(loss.A * (fam.cumulant(eta) - loss.mu * eta), axis=1)
    objs = vals + grid * (cv + penalty.ridge * np.sum(out**2, axis=1))
    return SolutionPath(grid[order], out[order], cv[order], objs[order], loss.mu.copy(),
                        fam.kind, warnings)


def elastic_net_fit(dataset: Dataset, penalty: PenaltySpec, delta: float) -> np.ndarray:
    """Penalized solution of ``loss + delta * (sum w|b| + ridge * sum b^2)`` at one penalty pair."""
    return glm_penalized_path(dataset, penalty, [delta]).betas[0]


def elastic_net_at_constraint(dataset: Dataset, penalty: PenaltySpec, lam: float,
                              xtol: float = 1e-10) -> np.ndarray:
    """Elastic-net solution whose penalty value ``sum w|b| + ridge * sum b^2`` equals ``lam``.

    The penalty value decreases monotonically in ``delta``, so the matching
    ``delta`` is found by bracketing root search. Beyond the unpenalized
    fit's value the unpenalized fit is returned.
    """
    if lam < 0:
        raise ValueError("constraint level must be non-negative")
    full = glm_penalized_path(dataset, penalty, [0.0]).betas[0]
    if penalty.value(full) <= lam:
        return full
    dmax = float(default_delta_grid(dataset, penalty, size=1)[0])
    if lam == 0 or dmax == 0:
        return glm_penalized_path(dataset, penalty, [max(dmax, 0.0)]).betas[0]
    cache = {}

    def fit(d):
        if d not in cache:
            cache[d] = glm_penalized_path(dataset, penalty, [d]).betas[0]
        return cache[d]

    hi = dmax
    d = brentq(lambda d: penalty.value(fit(d)) - lam, 0.0, hi, xtol=xtol * max(1.0, hi))
    return fit(d)
