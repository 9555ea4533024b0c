"""Optimality checks for penalized and garotte fits against pseudo-responses.

Scores are taken in the normalized form ``n**-0.5 * X'A(mu - b'(X beta))``
and compared with the penalty subgradient scaled the same way.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.optimize import nnls

from ..glm import get_family
from .base import GarottePath, GarotteSolution, HeredityGraph, PenaltySpec, SolutionPath


@dataclass
class KKTReport:
    passed: bool
    violations: List[str] = field(default_factory=list)
    max_violation: float = 0.0

    def __bool__(self):
        return self.passed


def _score(X, target, beta, fam, A):
    eta = X @ beta
    return X.T @ (A * (target - fam.mean(eta)))


def _check_penalized(X, target, beta, delta, penalty, fam, A, tol, label, out):
    n = X.shape[0]
    rn = 1.0 / np.sqrt(n)
    sc = _score(X, target, beta, fam, A) * rn
    w = penalty.weights
    worst = 0.0
    for j in range(X.shape[1]):
        if penalty.excluded[j]:
            if beta[j] != 0:
                out.append(f"{label}: coordinate {j} is excluded but nonzero")
                worst = max(worst, abs(beta[j]))
            continue
        ridge = 2.0 * delta * penalty.ridge * beta[j] * rn if w[j] > 0 else 0.0
        g = sc[j] - ridge
        bound = delta * w[j] * rn
        if w[j] == 0:
            err = abs(g)
            kind = "unpenalized score"
        elif beta[j] != 0:
            err = abs(g - bound * np.sign(beta[j]))
            kind = "active stationarity"
        else:
            err = max(abs(g) - bound, 0.0)
            kind = "inactive subgradient"
        worst = max(worst, err)
        if err > tol:
            out.append(f"{label}: coordinate {j} fails {kind} by {err:.3g}")
    return worst


def _check_garotte(X, target, sol: GarotteSolution, beta_star, heredity, free, fam, A, tol,
                   label, out):
    n, p = X.shape
    rn = 1.0 / np.sqrt(n)
    free = np.zeros(p, bool) if free is None else np.asarray(free, bool)
    pen = np.flatnonzero(~free)
    theta = np.asarray(sol.theta, dtype=float)[pen]
    bs = np.asarray(beta_star, dtype=float)
    sc = _score(X, target, sol.beta, fam, A) * rn
    worst = 0.0
    for j in np.flatnonzero(free):
        err = abs(sc[j])
        worst = max(worst, err)
        if err > tol:
            out.append(f"{label}: coordinate {j} fails unpenalized score by {err:.3g}")
    # gradient of the loss in theta
    g = -(sc[pen] * bs[pen])
    heredity = heredity or HeredityGraph.empty(p)
    hrows = heredity.constraint_rows(p)
    hrows = hrows[:, pen] if hrows.size else np.zeros((0, pen.size))
    m = pen.size
    A_rows = np.vstack([-np.eye(m), hrows, np.ones((1, m))])
    b = np.zeros(A_rows.shape[0])
    b[-1] = sol.lam
    slack = b - A_rows @ theta
    feas_tol = 1e-8 * (1.0 + sol.lam)
    if slack.min() < -feas_tol:
        r = int(np.argmin(slack))
        what = "non-negativity" if r < m else ("budget" if r == A_rows.shape[0] - 1 else "heredity")
        out.append(f"{label}: {what} constraint violated by {-slack.min():.3g}")
        worst = max(worst, -slack.min())
    tight = np.flatnonzero(slack <= feas_tol)
    if tight.size:
        nu, res = nnls(A_rows[tight].T, -g)
    else:
        res = float(np.linalg.norm(g))
    worst = max(worst, res)
    if res > tol:
        out.append(f"{label}: no non-negative multipliers fit the tight constraints (residual {res:.3g})")
    return worst


def kkt_check(result: Union[SolutionPath, GarotteSolution, GarottePath, np.ndarray], X, target_mu,
              penalty: Optional[PenaltySpec] = None, family="gaussian", weights=None,
              delta: Optional[float] = None, beta_star=None,
              heredity: Optional[HeredityGraph] = None, free=None,
              tol: float = 1e-6) -> KKTReport:
    """Check first-order optimality of a fitted path or solution.

    ``result`` may be a lasso-type :class:`SolutionPath` (every stored point
    is checked), a single coefficient vector with its ``delta``, or garotte
    output (which needs ``beta_star`` and the heredity graph it was fit with).
    """
    X = np.asarray(X, dtype=float)
    t = np.asarray(target_mu, dtype=float).reshape(-1)
    fam = get_family(family)
    A = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    out: List[str] = []
    worst = 0.0
    if isinstance(result, (GarotteSolution, GarottePath)):
        if beta_star is None:
            raise ValueError("garotte checks need beta_star")
        sols = [result] if isinstance(result, GarotteSolution) else list(result)
        for sol in sols:
            worst = max(worst, _check_garotte(X, t, sol, beta_star, heredity, free, fam, A, tol,
                                              f"lambda={sol.lam:.6g}", out))
    elif isinstance(result, SolutionPath):
        if penalty is None:
            raise ValueError("penalized checks need the penalty")
        for k in range(len(result)):
            worst = max(worst, _check_penalized(X, t, result.betas[k], result.deltas[k], penalty,
                                                fam, A, tol, f"knot {k}", out))
    else:
        if penalty is None or delta is None:
            raise ValueError("a bare coefficient vector needs the penalty and delta")
        beta = np.asarray(result, dtype=float).reshape(-1)
        worst = _check_penalized(X, t, beta, float(delta), penalty, fam, A, tol, "solution", out)
    return KKTReport(not out, out, float(worst))
