"""Exponential-family GLM pieces: families, datasets, means and KL divergences.

Only canonical links are supported, so the natural parameter of observation
``i`` is the linear predictor ``x_i' beta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

MU_CLAMP = 1e-10
_ETA_OVERFLOW = 700.0


class DegenerateDrawError(ValueError):
    """Raised when a parameter value produces a non-finite mean."""

    def __init__(self, message: str, draw_index: Optional[int] = None):
        if draw_index is not None:
            message = f"draw {draw_index}: {message}"
        super().__init__(message)
        self.draw_index = draw_index


@dataclass(frozen=True)
class Family:
    """A one-parameter exponential family with its canonical link.

    ``kind`` is one of ``gaussian``, ``binomial`` or ``poisson``. The
    dispersion is free only for the gaussian family; the other two fix
    ``phi = 1`` and carry any known scale in the observation weights.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in ("gaussian", "binomial", "poisson"):
            raise ValueError(f"unknown family {self.kind!r}")

    @property
    def free_dispersion(self) -> bool:
        return self.kind == "gaussian"

    def cumulant(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "gaussian":
            return 0.5 * theta**2
        if self.kind == "binomial":
            return np.logaddexp(0.0, theta)
        return np.exp(theta)

    def mean(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "gaussian":
            return theta.copy()
        if self.kind == "binomial":
            return expit(theta)
        return np.exp(theta)

    def variance(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "gaussian":
            return np.ones_like(theta)
        if self.kind == "binomial":
            m = expit(theta)
            return m * (1.0 - m)
        return np.exp(theta)

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind == "gaussian":
            return mu.copy()
        if self.kind == "binomial":
            m = np.clip(mu, MU_CLAMP, 1.0 - MU_CLAMP)
            return np.log(m) - np.log1p(-m)
        return np.log(mu)

    def inverse_link(self, eta):
        return self.mean(eta)

    def valid_response(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        if self.kind == "binomial":
            return bool(np.all((y >= 0.0) & (y <= 1.0)))
        if self.kind == "poisson":
            return bool(np.all(y >= 0.0))
        return True


GAUSSIAN = Family("gaussian")
BINOMIAL = Family("binomial")
POISSON = Family("poisson")


def get_family(family) -> Family:
    if isinstance(family, Family):
        return family
    return Family(str(family).lower())


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Design matrix, response, family and known observation weights.

    ``intercept`` flags columns that are never penalized (typically a column
    of ones). The response may be any value in the family's mean domain, so
    fitted means can stand in for data.
    """

    X: np.ndarray
    y: np.ndarray
    family: Family = GAUSSIAN
    weights: Optional[np.ndarray] = None
    names: Optional[Sequence[str]] = None
    intercept: Optional[np.ndarray] = None
    standardized: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("X must be a non-empty n x p matrix")
        n, p = X.shape
        if y.shape[0] != n:
            raise ValueError(f"y has length {y.shape[0]}, expected {n}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        family = get_family(self.family)
        if not family.valid_response(y):
            raise ValueError(f"responses outside the {family.kind} mean domain")
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (n,) or np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be a positive n-vector")
        names = [f"x{j}" for j in range(p)] if self.names is None else [str(s) for s in self.names]
        if len(names) != p:
            raise ValueError("names must have one entry per column")
        icpt = np.zeros(p, bool) if self.intercept is None else np.asarray(self.intercept, bool)
        if icpt.shape != (p,):
            raise ValueError("intercept mask must have length p")
        icpt = icpt.copy()
        icpt.flags.writeable = False
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "names", tuple(names))
        object.__setattr__(self, "intercept", icpt)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def predictors(self) -> np.ndarray:
        """Indices of the non-intercept columns."""
        return np.flatnonzero(~self.intercept)

    @property
    def predictor_names(self) -> tuple:
        return tuple(self.names[j] for j in self.predictors)

    def with_response(self, y) -> "Dataset":
        """Copy of this dataset with the response replaced (e.g. by fitted means)."""
        return Dataset(self.X, y, self.family, self.weights, self.names,
                       self.intercept, self.standardized)


@dataclass(frozen=True)
class ParamPoint:
    beta: np.ndarray
    phi: float = 1.0

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise ValueError("phi must be a positive real")
        object.__setattr__(self, "beta", _readonly(beta))
        object.__setattr__(self, "phi", float(self.phi))


def linear_predictor(dataset: Dataset, beta, draw_index: Optional[int] = None) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape[-1] != dataset.p:
        raise ValueError(f"beta has length {beta.shape[-1]}, expected {dataset.p}")
    return dataset.X @ beta if beta.ndim == 1 else beta @ dataset.X.T


def mean_response(dataset: Dataset, beta, draw_index: Optional[int] = None) -> np.ndarray:
    """Fitted means ``g^{-1}(X beta)``; binomial means are clamped away from 0 and 1."""
    eta = linear_predictor(dataset, beta)
    fam = dataset.family
    if fam.kind == "poisson" and np.any(eta > _ETA_OVERFLOW):
        raise DegenerateDrawError("linear predictor overflows the poisson mean", draw_index)
    mu = fam.mean(eta)
    if not np.all(np.isfinite(mu)):
        raise DegenerateDrawError("non-finite fitted mean", draw_index)
    if fam.kind == "binomial":
        mu = np.clip(mu, MU_CLAMP, 1.0 - MU_CLAMP)
    return mu


def log_likelihood(dataset: Dataset, beta, phi: float = 1.0) -> float:
    """Log-likelihood of the (possibly non-integer) response at ``beta``.

    For binomial and poisson families the term ``c(y; phi/A)`` is dropped, so
    the value is defined for pseudo-responses and is correct up to a constant
    in ``beta``. The gaussian value is the full normal log-density.
    """
    eta = linear_predictor(dataset, beta)
    A, y, fam = dataset.weights, dataset.y, dataset.family
    if fam.kind == "gaussian":
        var = phi / A
        return float(-0.5 * np.sum(np.log(2 * np.pi * var) + (y - eta) ** 2 / var))
    return float(np.sum(A * (y * eta - fam.cumulant(eta))) / phi)


def kl_from_linear_predictors(family, eta_full, eta_sub, weights=None,
                              phi_full=1.0, phi_sub=None) -> np.ndarray:
    """KL divergence ``KL(f(.; eta_full) || f(.; eta_sub))`` summed over observations.

    Broadcasts over leading axes, so ``eta_*`` may be stacks of linear
    predictors (one row per parameter value).
    """
    fam = get_family(family)
    ef = np.asarray(eta_full, dtype=float)
    es = np.asarray(eta_sub, dtype=float)
    A = 1.0 if weights is None else np.asarray(weights, dtype=float)
    if fam.kind == "gaussian":
        s2 = np.asarray(phi_full, dtype=float)
        s2s = s2 if phi_sub is None else np.asarray(phi_sub, dtype=float)
        n = ef.shape[-1]
        ratio = s2s / s2
        resid = np.sum(A * (ef - es) ** 2, axis=-1)
        return 0.5 * n * (np.log(ratio) - 1.0) + 0.5 * n / ratio + 0.5 * resid / s2s
    mu = fam.mean(ef)
    terms = mu * (ef - es) - fam.cumulant(ef) + fam.cumulant(es)
    return np.sum(A * terms, axis=-1) / np.asarray(phi_full, dtype=float)


def kl_divergence(dataset: Dataset, full: ParamPoint, sub: ParamPoint) -> float:
    """KL divergence between the sampling distributions at ``full`` and ``sub``.

    The gaussian case includes the variance terms; binomial and poisson use
    ``phi = 1`` from ``full``.
    """
    eta_f = linear_predictor(dataset, full.beta)
    eta_s = linear_predictor(dataset, sub.beta)
    fam = dataset.family
    if not (np.all(np.isfinite(eta_f)) and np.all(np.isfinite(eta_s))):
        raise ValueError("natural parameter out of domain")
    if fam.kind == "poisson" and max(eta_f.max(), eta_s.max()) > _ETA_OVERFLOW:
        raise ValueError("natural parameter out of domain")
    if fam.free_dispersion:
        return float(kl_from_linear_predictors(fam, eta_f, eta_s, dataset.weights,
                                               full.phi, sub.phi))
    return float(kl_from_linear_predictors(fam, eta_f, eta_s, dataset.weights, 1.0))


def project_sigma(sigma2: float, mu_full, mu_sub, weights=None) -> float:
    """Variance of the gaussian KL projection given the projected mean.

    Equal to ``sigma2 + sum(A * (mu_full - mu_sub)**2) / n``; plugging it back
    into the gaussian KL leaves ``(n/2) log(sigma2_proj / sigma2)``.
    """
    mu_full = np.asarray(mu_full, dtype=float)
    mu_sub = np.asarray(mu_sub, dtype=float)
    if mu_full.shape != mu_sub.shape:
        raise ValueError("mean vectors must have equal length")
    n = mu_full.shape[-1]
    if n == 0:
        raise ValueError("need at least one observation")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    A = 1.0 if weights is None else np.asarray(weights, dtype=float)
    return sigma2 + np.sum(A * (mu_full - mu_sub) ** 2, axis=-1) / n
