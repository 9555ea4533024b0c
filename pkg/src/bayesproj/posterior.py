"""Posterior samplers for the encompassing model.

Three regimes are covered: the gaussian linear model under the reference
prior ``p(beta, sigma2) ~ 1/sigma2`` (exact draws), logistic regression with
a normal prior (random-walk Metropolis) and the Bayesian lasso (Gibbs).
All randomness comes from a counter-based Philox stream keyed by the seed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr, solve_triangular

from .glm import Dataset

log = logging.getLogger(__name__)

_LATENT_FLOOR = 1e-12


class SamplerError(RuntimeError):
    """Sampler could not produce a valid chain; ``diagnostics`` explains why."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularDesignError(ValueError):
    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        super().__init__("design is rank deficient; dependent columns: " + ", ".join(self.columns))


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for ``seed``; ``key`` selects an independent sub-stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class PriorSpec:
    """Prior for the encompassing model.

    ``kind`` is ``gaussian_normal_noninformative``, ``logistic_normal`` or
    ``bayesian_lasso``. The normal prior uses ``mean`` and ``cov`` (scalars
    are broadcast to ``mean * 1`` and ``cov * I`` once ``p`` is known).
    """

    kind: str
    mean: object = 0.0
    cov: object = 3.0
    lam: float = 10.0
    ig_shape: float = 0.01
    ig_rate: float = 0.01

    KINDS = ("gaussian_normal_noninformative", "logistic_normal", "bayesian_lasso")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if not (self.lam > 0 and self.ig_shape > 0 and self.ig_rate > 0):
            raise ValueError("lasso rate and inverse-gamma parameters must be positive")
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            if not cov > 0:
                raise ValueError("prior variance must be positive")
        else:
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
                raise ValueError("prior covariance must be a symmetric matrix")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("prior covariance must be positive definite")

    @classmethod
    def noninformative(cls) -> "PriorSpec":
        return cls("gaussian_normal_noninformative")

    @classmethod
    def logistic(cls, variance=3.0, mean=0.0) -> "PriorSpec":
        return cls("logistic_normal", mean=mean, cov=variance)

    @classmethod
    def bayesian_lasso(cls, lam: float = 10.0, shape: float = 0.01, rate: float = 0.01) -> "PriorSpec":
        return cls("bayesian_lasso", lam=lam, ig_shape=shape, ig_rate=rate)

    def normal_moments(self, p: int):
        m = np.broadcast_to(np.asarray(self.mean, dtype=float), (p,)).copy()
        cov = np.asarray(self.cov, dtype=float)
        V = cov * np.eye(p) if cov.ndim == 0 else cov
        if V.shape != (p, p):
            raise ValueError(f"prior covariance must be {p} x {p}")
        return m, V


@dataclass(frozen=True)
class PosteriorSample:
    """Ordered posterior draws of ``beta`` (and ``phi`` for gaussian models).

    ``diagnostics`` always holds ``sampler``, ``seed``, ``burn_in`` and
    ``thinning``; Metropolis chains add ``acceptance_rate``.
    """

    draws: np.ndarray
    phi_draws: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)
    names: Optional[Sequence[str]] = None

    def __post_init__(self):
        d = np.array(self.draws, dtype=float, copy=True)
        if d.ndim == 1:
            d = d[None, :]
        if d.ndim != 2 or d.shape[0] < 1:
            raise ValueError("need at least one draw")
        if not np.all(np.isfinite(d)):
            raise ValueError("draws must be finite")
        d.flags.writeable = False
        object.__setattr__(self, "draws", d)
        if self.phi_draws is not None:
            ph = np.array(self.phi_draws, dtype=float, copy=True).reshape(-1)
            if ph.shape[0] != d.shape[0] or np.any(~(ph > 0)):
                raise ValueError("phi draws must be positive, one per draw")
            ph.flags.writeable = False
            object.__setattr__(self, "phi_draws", ph)
        names = [f"x{j}" for j in range(d.shape[1])] if self.names is None else list(self.names)
        if len(names) != d.shape[1]:
            raise ValueError("one name per coefficient")
        object.__setattr__(self, "names", tuple(names))
        object.__setattr__(self, "diagnostics", dict(self.diagnostics))

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def p(self) -> int:
        return self.draws.shape[1]

    def phi(self, i: int) -> float:
        return 1.0 if self.phi_draws is None else float(self.phi_draws[i])

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def subset(self, index) -> "PosteriorSample":
        index = np.asarray(index)
        ph = None if self.phi_draws is None else self.phi_draws[index]
        return PosteriorSample(self.draws[index], ph, self.diagnostics, self.names)


def _check_rank(Xw: np.ndarray, names) -> tuple:
    Q, R, piv = qr(Xw, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = max(Xw.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0)
    rank = int(np.sum(d > tol))
    if rank < Xw.shape[1]:
        raise SingularDesignError([names[j] for j in sorted(piv[rank:])])
    return Q, R, piv


def sample_gaussian_noninformative(dataset: Dataset, n_draws: int, seed: int) -> PosteriorSample:
    """Exact draws under ``p(beta, sigma2) ~ 1/sigma2``.

    ``sigma2 = RSS / chi2_{n-p}`` and ``beta | sigma2 ~ N(beta_hat, sigma2 (X'AX)^{-1})``.
    """
    if dataset.family.kind != "gaussian":
        raise ValueError("the reference-prior sampler needs a gaussian dataset")
    n, p = dataset.n, dataset.p
    if n <= p:
        raise ValueError(f"need n > p (got n={n}, p={p})")
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    sw = np.sqrt(dataset.weights)
    Xw, yw = dataset.X * sw[:, None], dataset.y * sw
    Q, R, piv = _check_rank(Xw, dataset.names)
    inv = np.argsort(piv)
    coef_p = solve_triangular(R, Q.T @ yw)
    resid = yw - Xw[:, piv] @ coef_p
    rss = float(resid @ resid)
    rng = make_rng(seed)
    sigma2 = rss / rng.chisquare(n - p, size=n_draws)
    z = rng.standard_normal((n_draws, p))
    dev = solve_triangular(R, z.T).T * np.sqrt(sigma2)[:, None]
    draws = (coef_p[None, :] + dev)[:, inv]
    diag = {"sampler": "gaussian_noninformative", "seed": int(seed), "burn_in": 0,
            "thinning": 1, "n_draws": int(n_draws), "rss": rss}
    return PosteriorSample(draws, sigma2, diag, dataset.names)


def _logistic_logpost(X, y, A, m, Vinv, beta):
    eta = X @ beta
    d = beta - m
    return float(np.sum(A * (y * eta - np.logaddexp(0.0, eta))) - 0.5 * d @ Vinv @ d)


def _logistic_mode(X, y, A, m, Vinv, max_iter=200):
    beta = m.copy()
    f = _logistic_logpost(X, y, A, m, Vinv, beta)
    for _ in range(max_iter):
        eta = X @ beta
        pr = 1.0 / (1.0 + np.exp(-eta))
        g = X.T @ (A * (y - pr)) - Vinv @ (beta - m)
        H = X.T @ (X * (A * pr * (1 - pr))[:, None]) + Vinv
        step = cho_solve(cho_factor(H), g)
        t = 1.0
        while t > 1e-10:
            fn = _logistic_logpost(X, y, A, m, Vinv, beta + t * step)
            if fn >= f - 1e-12 * abs(f):
                break
            t *= 0.5
        beta, f = beta + t * step, fn
        if np.max(np.abs(t * step)) < 1e-10 * (1 + np.max(np.abs(beta))):
            break
    eta = X @ beta
    pr = 1.0 / (1.0 + np.exp(-eta))
    H = X.T @ (X * (A * pr * (1 - pr))[:, None]) + Vinv
    return beta, H


def sample_logistic_normal(dataset: Dataset, prior: PriorSpec, burn_in: int = 1000,
                           n_draws: int = 10000, seed: int = 0, thinning: int = 1,
                           target_acceptance: float = 0.3) -> PosteriorSample:
    """Random-walk Metropolis for logistic regression with a normal prior.

    The proposal covariance starts at the inverse curvature of the log
    posterior at its mode times ``2.38**2 / p``; its scale is adapted every
    50 burn-in iterations toward ``target_acceptance`` and frozen afterwards.
    """
    if dataset.family.kind != "binomial":
        raise ValueError("the logistic sampler needs a binomial dataset")
    if prior.kind != "logistic_normal":
        raise ValueError("expected a logistic_normal prior")
    if burn_in < 0 or n_draws < 1 or thinning < 1:
        raise ValueError("burn_in >= 0, n_draws >= 1 and thinning >= 1 required")
    X, y, A = dataset.X, dataset.y, dataset.weights
    p = dataset.p
    m, V = prior.normal_moments(p)
    Vinv = np.linalg.inv(V)
    mode, H = _logistic_mode(X, y, A, m, Vinv)
    L = np.linalg.cholesky(np.linalg.inv(H))
    rng = make_rng(seed)
    log_scale = np.log(2.38 / np.sqrt(p))
    beta = mode.copy()
    cur = _logistic_logpost(X, y, A, m, Vinv, beta)
    total = burn_in + n_draws * thinning
    draws = np.empty((n_draws, p))
    window_acc = 0
    kept_acc = 0
    k = 0
    for it in range(total):
        prop = beta + np.exp(log_scale) * (L @ rng.standard_normal(p))
        lp = _logistic_logpost(X, y, A, m, Vinv, prop)
        accept = np.log(rng.uniform()) < lp - cur
        if accept:
            beta, cur = prop, lp
        if it < burn_in:
            window_acc += accept
            if (it + 1) % 50 == 0:
                rate = window_acc / 50.0
                log_scale += 1.5 * (rate - target_acceptance) * min(1.0, 10.0 / np.sqrt((it + 1) / 50))
                window_acc = 0
        else:
            kept_acc += accept
            if (it - burn_in) % thinning == thinning - 1:
                draws[k] = beta
                k += 1
    acc = kept_acc / float(n_draws * thinning)
    diag = {"sampler": "logistic_rw_metropolis", "seed": int(seed), "burn_in": int(burn_in),
            "thinning": int(thinning), "n_draws": int(n_draws), "acceptance_rate": acc,
            "proposal_scale": float(np.exp(log_scale))}
    if not 0.05 <= acc <= 0.9:
        raise SamplerError(f"acceptance rate {acc:.3f} outside [0.05, 0.9] after adaptation", diag)
    return PosteriorSample(draws, None, diag, dataset.names)


def sample_bayesian_lasso(dataset: Dataset, prior: PriorSpec, burn_in: int = 1000,
                          n_draws: int = 10000, seed: int = 0, thinning: int = 1) -> PosteriorSample:
    """Gibbs sampler for the Bayesian lasso.

    Coefficients have the conditional Laplace prior
    ``(lam / (2 sqrt(sigma2))) exp(-lam |b_j| / sqrt(sigma2))`` written as a
    normal scale mixture, and ``sigma2 ~ IG(shape, rate)``. Flagged intercept
    columns get a flat prior: the sampler runs on centered data and the
    intercept is drawn afterwards from its conditional normal.
    """
    if dataset.family.kind != "gaussian":
        raise ValueError("the Bayesian lasso needs a gaussian dataset")
    if prior.kind != "bayesian_lasso":
        raise ValueError("expected a bayesian_lasso prior")
    if not np.all(dataset.weights == 1.0):
        raise ValueError("the Bayesian lasso sampler assumes unit observation weights")
    if burn_in < 0 or n_draws < 1 or thinning < 1:
        raise ValueError("burn_in >= 0, n_draws >= 1 and thinning >= 1 required")
    icpt = np.flatnonzero(dataset.intercept)
    if icpt.size > 1:
        raise ValueError("at most one intercept column is supported")
    cols = dataset.predictors
    X, y = dataset.X[:, cols], dataset.y
    n, p = X.shape
    if icpt.size:
        xbar, ybar = X.mean(axis=0), y.mean()
        X, y = X - xbar, y - ybar
        n_eff = n - 1
    else:
        n_eff = n
    XtX, Xty = X.T @ X, X.T @ y
    lam2 = prior.lam**2
    a, b = prior.ig_shape, prior.ig_rate
    rng = make_rng(seed)
    beta = np.zeros(p)
    sigma2 = float(np.var(y)) if np.var(y) > 0 else 1.0
    inv_tau2 = np.ones(p)
    total = burn_in + n_draws * thinning
    out_beta = np.empty((n_draws, dataset.p))
    out_sigma2 = np.empty(n_draws)
    guards = 0
    k = 0
    for it in range(total):
        Amat = XtX + np.diag(inv_tau2)
        C = cho_factor(Amat, lower=False, check_finite=False)
        mean = cho_solve(C, Xty, check_finite=False)
        z = rng.standard_normal(p)
        beta = mean + np.sqrt(sigma2) * solve_triangular(C[0], z, lower=False, check_finite=False)
        resid = y - X @ beta
        shape = 0.5 * (n_eff + p) + a
        rate = 0.5 * (resid @ resid + beta @ (inv_tau2 * beta)) + b
        sigma2 = rate / rng.gamma(shape)
        with np.errstate(divide="ignore"):
            mu_ig = np.sqrt(lam2 * sigma2 / beta**2)
        mu_ig = np.minimum(mu_ig, 1.0 / _LATENT_FLOOR)
        draw = rng.wald(mu_ig, lam2)
        bad = ~np.isfinite(draw) | (draw <= 0) | (draw > 1.0 / _LATENT_FLOOR)
        if bad.any():
            guards += int(bad.sum())
            draw = np.where(bad, np.clip(np.nan_to_num(draw, nan=1.0, posinf=1.0 / _LATENT_FLOOR),
                                         _LATENT_FLOOR, 1.0 / _LATENT_FLOOR), draw)
        inv_tau2 = draw
        if it >= burn_in and (it - burn_in) % thinning == thinning - 1:
            full = np.zeros(dataset.p)
            full[cols] = beta
            if icpt.size:
                full[icpt[0]] = ybar - xbar @ beta + np.sqrt(sigma2 / n) * rng.standard_normal()
            out_beta[k] = full
            out_sigma2[k] = sigma2
            k += 1
    if guards:
        log.info("Bayesian lasso: %d latent scale draws hit the %.0e floor", guards, _LATENT_FLOOR)
    diag = {"sampler": "bayesian_lasso_gibbs", "seed": int(seed), "burn_in": int(burn_in),
            "thinning": int(thinning), "n_draws": int(n_draws), "latent_floor_hits": guards,
            "lambda": float(prior.lam)}
    return PosteriorSample(out_beta, out_sigma2, diag, dataset.names)


def batch_means_se(chain: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """Monte Carlo standard error of the mean of each column by batch means."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    s = chain.shape[0]
    nb = max(2, min(n_batches, s // 2))
    size = s // nb
    means = chain[: nb * size].reshape(nb, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(nb)


def split_half_z(sample: PosteriorSample) -> np.ndarray:
    """Difference of first- and second-half means in units of the chain's Monte Carlo error."""
    d = sample.draws
    h = d.shape[0] // 2
    diff = d[:h].mean(axis=0) - d[h:2 * h].mean(axis=0)
    se = np.sqrt(batch_means_se(d[:h]) ** 2 + batch_means_se(d[h:2 * h]) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(se > 0, np.abs(diff) / se, 0.0)
