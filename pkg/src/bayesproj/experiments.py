"""Seeded simulation studies: heredity-constrained garotte, large-p adaptive lasso,
empirical selection consistency and plug-in versus ensemble preconditioning.

Every replicate draws its randomness from a counter-based generator keyed by
the master seed, a scenario code and the replicate index, so replicates can
be run in any order or in parallel. Replicate metrics are averaged with
``math.fsum``, which makes averages independent of replicate order.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .glm import Dataset, mean_response
from .posterior import (PosteriorSample, PriorSpec, make_rng, sample_bayesian_lasso,
                        sample_gaussian_noninformative, sample_logistic_normal)
from .projection import ConstraintSpec, WORKERS_ENV, project_sample
from .solvers import HeredityGraph, PenaltySpec, glm_penalized_path

SCENARIOS = ("heredity_7_2", "large_p_7_3_ex1", "large_p_7_3_ex2", "consistency_thm1")
_CODES = {s: i for i, s in enumerate(SCENARIOS)}
SECOND_ORDER_NAMES = ("x1", "x2", "x3", "x1^2", "x2^2", "x3^2", "x1:x2", "x1:x3", "x2:x3")


@dataclass(frozen=True)
class SimConfig:
    """Settings for one simulation study.

    ``covariance`` is ``"ar"`` (``rho**|i-j|``), ``"cs"`` (compound symmetry
    with off-diagonal ``rho``) or ``"identity"``. For the consistency study
    ``ladder`` lists the sample sizes and the penalty is
    ``n**gamma_exponent`` (zero when ``gamma_exponent`` is None).
    """

    scenario: str
    replicates: int = 100
    n: int = 50
    p: int = 9
    beta: Tuple[float, ...] = ()
    sigma: float = 3.0
    rho: float = 0.0
    covariance: str = "ar"
    seed: int = 2010
    draws: int = 1000
    burn_in: int = 1000
    thinning: int = 1
    grid_size: int = 100
    grid_max: Optional[float] = None
    lam_bl: float = 10.0
    prior_variance: float = 3.0
    intercept: float = 0.0
    ladder: Tuple[int, ...] = (50, 200, 800, 3200)
    gamma_exponent: Optional[float] = 0.25

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.covariance not in ("ar", "cs", "identity"):
            raise ValueError(f"unknown covariance {self.covariance!r}")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "ladder", tuple(int(m) for m in self.ladder))
        if self.scenario != "heredity_7_2" and len(self.beta) != self.p:
            raise ValueError("beta must have one entry per predictor")
        np.linalg.cholesky(self.predictor_cov(self.base_dim))

    @property
    def base_dim(self) -> int:
        return 3 if self.scenario == "heredity_7_2" else self.p

    def predictor_cov(self, d: int) -> np.ndarray:
        if self.covariance == "identity":
            return np.eye(d)
        if self.covariance == "ar":
            i = np.arange(d)
            return self.rho ** np.abs(i[:, None] - i[None, :])
        return np.full((d, d), self.rho) + (1.0 - self.rho) * np.eye(d)

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, float(self.grid_max if self.grid_max is not None else self.p),
                           self.grid_size)

    @classmethod
    def heredity(cls, rho: float = 0.0, replicates: int = 100, seed: int = 2010, **kw) -> "SimConfig":
        return cls("heredity_7_2", replicates=replicates, n=50, p=9,
                   beta=(3.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0), sigma=3.0, rho=rho,
                   covariance="ar", seed=seed, **{"draws": 1000, "grid_max": 9.0, **kw})

    @classmethod
    def large_p(cls, example: int = 1, replicates: int = 100, seed: int = 2010, **kw) -> "SimConfig":
        if example == 1:
            beta = tuple(2.0 if (10 <= j < 20 or 30 <= j < 40) else 0.0 for j in range(40))
            cov, rho = "identity", 0.0
        elif example == 2:
            beta = tuple(4.0 if j < 5 else 0.0 for j in range(40))
            cov, rho = "cs", 0.5
        else:
            raise ValueError("example must be 1 or 2")
        kw.setdefault("draws", 1000)
        return cls(f"large_p_7_3_ex{example}", replicates=replicates, n=20, p=40, beta=beta,
                   sigma=5.0, rho=rho, covariance=cov, seed=seed, **{"grid_max": 40.0, **kw})

    @classmethod
    def consistency(cls, replicates: int = 100, seed: int = 2010,
                    gamma_exponent: Optional[float] = 0.25, **kw) -> "SimConfig":
        kw.setdefault("draws", 200)
        kw.setdefault("burn_in", 500)
        kw.setdefault("thinning", 2)
        return cls("consistency_thm1", replicates=replicates, n=kw.pop("n", 3200), p=3,
                   beta=kw.pop("beta", (1.0, -1.0, 0.0)), sigma=1.0, covariance="identity",
                   seed=seed, intercept=kw.pop("intercept", 0.5), gamma_exponent=gamma_exponent,
                   **kw)


@dataclass
class SimMetrics:
    """Replicate-averaged metric curves over the constraint grid.

    Curves that do not apply to a study are None. ``fdr_undefined`` flags
    grid points where nothing is selected on average, where the false
    discovery rate is reported as 0.
    """

    scenario: str
    label: str
    lambdas: np.ndarray
    expected_size: np.ndarray
    loss: Optional[np.ndarray] = None
    encompassing: Optional[np.ndarray] = None
    fdr: Optional[np.ndarray] = None
    fdr_undefined: Optional[np.ndarray] = None
    recovery: Optional[np.ndarray] = None
    ns: Optional[np.ndarray] = None
    replicates: int = 1
    extras: Dict[str, object] = field(default_factory=dict)

    def at_size(self, name: str, sizes) -> np.ndarray:
        """Interpolate the curve ``name`` at given expected model sizes."""
        return interpolate_at_size(self.expected_size, getattr(self, name), sizes)

    def columns(self) -> Dict[str, np.ndarray]:
        out = {"lambda": self.lambdas, "expected_size": self.expected_size}
        for k in ("loss", "encompassing", "fdr", "fdr_undefined", "recovery", "ns"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out


def interpolate_at_size(sizes, values, targets) -> np.ndarray:
    """Linear interpolation of a curve parameterized by expected model size.

    Points are ordered by size first; targets outside the size range get NaN.
    """
    s = np.asarray(sizes, dtype=float)
    v = np.asarray(values, dtype=float)
    order = np.argsort(s, kind="stable")
    s, v = s[order], v[order]
    s, first = np.unique(s, return_index=True)
    v = v[first]
    t = np.atleast_1d(np.asarray(targets, dtype=float))
    out = np.interp(t, s, v)
    out[(t < s[0]) | (t > s[-1])] = np.nan
    return out


def replicate_mean(rows: Sequence[np.ndarray]) -> np.ndarray:
    """Column means computed with exactly rounded sums (order independent)."""
    arr = np.asarray(rows, dtype=float)
    flat = arr.reshape(arr.shape[0], -1)
    m = np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])]) / arr.shape[0]
    return m.reshape(arr.shape[1:])


def _rng(config: SimConfig, *key: int) -> np.random.Generator:
    return make_rng(config.seed, _CODES[config.scenario], *key)


def _sub_seed(config: SimConfig, *key: int) -> int:
    return int(_rng(config, *key, 1).integers(2**62))


def correlated_design(rng: np.random.Generator, n: int, cov: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    return rng.standard_normal((n, cov.shape[0])) @ L.T


def second_order_expand(X3: np.ndarray) -> np.ndarray:
    """Main effects, squares and pairwise products of three predictors."""
    x1, x2, x3 = X3.T
    return np.column_stack([x1, x2, x3, x1**2, x2**2, x3**2, x1 * x2, x1 * x3, x2 * x3])


def second_order_heredity(mode: str = "strong") -> HeredityGraph:
    """Each square and product term has its constituent main effects as parents."""
    return HeredityGraph({3: (0,), 4: (1,), 5: (2,), 6: (0, 1), 7: (0, 2), 8: (1, 2)}, mode, 9)


def heredity_dataset(config: SimConfig, rep: int) -> Dataset:
    rng = _rng(config, rep, 0)
    X3 = correlated_design(rng, config.n, config.predictor_cov(3))
    X = second_order_expand(X3)
    y = X @ np.array(config.beta) + config.sigma * rng.standard_normal(config.n)
    return Dataset(X, y, "gaussian", names=SECOND_ORDER_NAMES)


def large_p_dataset(config: SimConfig, rep: int, center: bool = False) -> Dataset:
    """Linear-model data; with ``center`` the intercept is removed by centering."""
    rng = _rng(config, rep, 0)
    X = correlated_design(rng, config.n, config.predictor_cov(config.p))
    y = X @ np.array(config.beta) + config.sigma * rng.standard_normal(config.n)
    if center:
        X = X - X.mean(axis=0)
        y = y - y.mean()
    return Dataset(X, y, "gaussian", names=[f"x{j + 1}" for j in range(config.p)])


def consistency_dataset(config: SimConfig, n: int, rep: int) -> Dataset:
    rng = _rng(config, rep, n)
    Xc = rng.standard_normal((n, config.p))
    X = np.column_stack([np.ones(n), Xc])
    eta = config.intercept + Xc @ np.array(config.beta)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    mask = np.zeros(config.p + 1, bool)
    mask[0] = True
    return Dataset(X, y, "binomial", names=["(Intercept)"] + [f"x{j + 1}" for j in range(config.p)],
                   intercept=mask)


def _workers(workers: Optional[int]) -> int:
    if workers is None:
        try:
            workers = int(os.environ.get(WORKERS_ENV, "1"))
        except ValueError:
            workers = 1
    return max(1, workers)


def _map(fn, items, workers):
    nw = min(_workers(workers), len(items))
    if nw <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(nw) as ex:
        return list(ex.map(fn, items))


# heredity study ---------------------------------------------------------------

def _heredity_replicate(args):
    config, rep = args
    ds = heredity_dataset(config, rep)
    sample = sample_gaussian_noninformative(ds, config.draws, _sub_seed(config, rep))
    truth = np.flatnonzero(np.array(config.beta) != 0)
    out = []
    for mode in ("strong", None):
        spec = ConstraintSpec("garotte", heredity=second_order_heredity() if mode else None)
        ens = project_sample(ds, sample, spec, config.grid(), workers=1)
        g = ens.gamma
        out.append((g.sum(axis=2).mean(axis=0), ens.losses(), g[:, :, truth].all(axis=2).mean(axis=0)))
    return out


def run_heredity_sim(config: SimConfig, workers: Optional[int] = None) -> Tuple[SimMetrics, SimMetrics]:
    """Garotte projections with and without strong heredity on second-order designs.

    Returns ``(strong, unconstrained)`` metrics: expected model size,
    explanatory loss and the probability that the projection contains every
    true term, each averaged over replicates. Per-replicate size and
    encompassing curves are kept in ``extras``.
    """
    if config.scenario != "heredity_7_2":
        raise ValueError("run_heredity_sim needs the heredity_7_2 scenario")
    reps = _map(_heredity_replicate, [(config, r) for r in range(config.replicates)], workers)
    out = []
    for k, label in enumerate(("strong", "unconstrained")):
        out.append(SimMetrics(
            config.scenario, label, config.grid(),
            expected_size=replicate_mean([r[k][0] for r in reps]),
            loss=replicate_mean([r[k][1] for r in reps]),
            encompassing=replicate_mean([r[k][2] for r in reps]),
            replicates=config.replicates,
            extras={"rho": config.rho,
                    "replicate_size": np.array([r[k][0] for r in reps]),
                    "replicate_encompassing": np.array([r[k][2] for r in reps])}))
    return out[0], out[1]


# large-p study ----------------------------------------------------------------

def _bl_sample(config: SimConfig, ds: Dataset, rep: int) -> PosteriorSample:
    return sample_bayesian_lasso(ds, PriorSpec.bayesian_lasso(config.lam_bl), config.burn_in,
                                 config.draws, _sub_seed(config, rep), config.thinning)


def _selection_curves(ens, truth_mask):
    g = ens.gamma
    size = g.sum(axis=2).mean(axis=0)
    false = g[:, :, ~truth_mask].sum(axis=2).mean(axis=0)
    return size, false


def _separation_check(ens, truth_mask, target_loss=0.2):
    """Inclusion probabilities at the level whose loss is closest to ``target_loss``."""
    loss = ens.losses()
    k = int(np.argmin(np.abs(loss - target_loss)))
    incl = ens.gamma[:, k, :].mean(axis=0)
    act = float(incl[truth_mask].mean()) if truth_mask.any() else float("nan")
    inact = float(incl[~truth_mask].mean()) if (~truth_mask).any() else float("nan")
    return act > inact, act, inact, float(loss[k]), float(ens.expected_sizes()[k])


def _large_p_replicate(args):
    config, rep = args
    ds = large_p_dataset(config, rep)
    sample = _bl_sample(config, ds, rep)
    ens = project_sample(ds, sample, ConstraintSpec("adaptive_lasso"), config.grid(), workers=1)
    truth = np.array(config.beta) != 0
    size, false = _selection_curves(ens, truth)
    return size, false, ens.losses(), _separation_check(ens, truth)


def _fdr(size, false):
    undefined = size <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        fdr = np.where(undefined, 0.0, false / np.where(undefined, 1.0, size))
    return np.clip(fdr, 0.0, 1.0), undefined


def run_large_p_sim(config: SimConfig, workers: Optional[int] = None) -> SimMetrics:
    """Bayesian-lasso posterior with adaptive-lasso projections when predictors outnumber observations.

    The false discovery rate at each level is the replicate-averaged number
    of inactive predictors selected over the replicate-averaged number
    selected. ``extras["separation"]`` holds, per replicate, whether the mean
    inclusion probability of active predictors exceeds that of inactive ones
    at about 20% explanatory loss.
    """
    if not config.scenario.startswith("large_p"):
        raise ValueError("run_large_p_sim needs a large_p scenario")
    reps = _map(_large_p_replicate, [(config, r) for r in range(config.replicates)], workers)
    size = replicate_mean([r[0] for r in reps])
    false = replicate_mean([r[1] for r in reps])
    fdr, undefined = _fdr(size, false)
    return SimMetrics(config.scenario, "adaptive_lasso", config.grid(), size,
                      loss=replicate_mean([r[2] for r in reps]), fdr=fdr, fdr_undefined=undefined,
                      replicates=config.replicates,
                      extras={"separation": [r[3] for r in reps],
                              "false_selected": false})


# consistency ------------------------------------------------------------------

def penalty_level(config: SimConfig, n: int) -> float:
    e = config.gamma_exponent
    return 0.0 if e is None else float(n) ** e


def _consistency_replicate(args):
    config, n, rep = args
    ds = consistency_dataset(config, n, rep)
    prior = PriorSpec.logistic(config.prior_variance)
    sample = sample_logistic_normal(ds, prior, config.burn_in, config.draws,
                                    _sub_seed(config, rep, n), config.thinning)
    truth = np.array(config.beta) != 0
    gam = penalty_level(config, n)
    hits = 0
    for b in sample.draws:
        target = ds.with_response(mean_response(ds, b))
        pen = PenaltySpec.adaptive(b, [0])
        bs = glm_penalized_path(target, pen, [gam]).betas[0]
        hits += bool(np.array_equal(bs[1:] != 0, truth))
    return hits / sample.n_draws


def run_consistency_check(config: SimConfig, workers: Optional[int] = None) -> SimMetrics:
    """Fraction of projected draws whose support equals the true support, along a ladder of n.

    Each draw ``b`` is projected with the penalized adaptive lasso
    ``loss + gamma_n * sum_j |s_j| / |b_j|`` (intercept unpenalized).
    """
    if config.scenario != "consistency_thm1":
        raise ValueError("run_consistency_check needs the consistency_thm1 scenario")
    jobs = [(config, n, r) for n in config.ladder for r in range(config.replicates)]
    res = np.array(_map(_consistency_replicate, jobs, workers)).reshape(len(config.ladder),
                                                                         config.replicates)
    rec = np.array([math.fsum(row) / row.size for row in res])
    ns = np.array(config.ladder, dtype=float)
    gam = np.array([penalty_level(config, n) for n in config.ladder])
    return SimMetrics(config.scenario, "adaptive_lasso", gam, np.full(ns.size, np.nan),
                      recovery=rec, ns=ns, replicates=config.replicates,
                      extras={"per_replicate": res,
                              "se": res.std(axis=1, ddof=1) / np.sqrt(res.shape[1])
                              if res.shape[1] > 1 else np.zeros(ns.size)})


# preconditioning ----------------------------------------------------------------

def plug_in_sample(sample: PosteriorSample) -> PosteriorSample:
    """Single-draw sample at the posterior mean (variance at its posterior mean)."""
    phi = None if sample.phi_draws is None else [float(np.mean(sample.phi_draws))]
    return PosteriorSample(sample.mean()[None, :], phi, {"sampler": "plug_in"}, sample.names)


def _precond_replicate(args):
    config, rep = args
    ds = large_p_dataset(config, rep)
    sample = _bl_sample(config, ds, rep)
    truth = np.array(config.beta) != 0
    spec = ConstraintSpec("adaptive_lasso")
    out = []
    for smp in (plug_in_sample(sample), sample):
        ens = project_sample(ds, smp, spec, config.grid(), workers=1)
        size, false = _selection_curves(ens, truth)
        out.append((size, false, ens.losses(), ens.gamma.mean(axis=0)))
    return out


def run_preconditioning_contrast(config: SimConfig,
                                 workers: Optional[int] = None) -> Tuple[SimMetrics, SimMetrics]:
    """Project the posterior-mean fit once (plug-in) versus every posterior draw (ensemble).

    Returns ``(plug_in, ensemble)``. ``extras["inclusion"]`` holds the
    replicate-averaged inclusion probabilities (levels by predictors) and
    ``extras["inclusion_first"]`` those of the first replicate.
    """
    if not config.scenario.startswith("large_p"):
        raise ValueError("run_preconditioning_contrast needs a large_p scenario")
    reps = _map(_precond_replicate, [(config, r) for r in range(config.replicates)], workers)
    out = []
    for k, label in enumerate(("plug_in", "ensemble")):
        size = replicate_mean([r[k][0] for r in reps])
        false = replicate_mean([r[k][1] for r in reps])
        fdr, undefined = _fdr(size, false)
        out.append(SimMetrics(config.scenario, label, config.grid(), size,
                              loss=replicate_mean([r[k][2] for r in reps]), fdr=fdr,
                              fdr_undefined=undefined, replicates=config.replicates,
                              extras={"inclusion": replicate_mean([r[k][3] for r in reps]),
                                      "inclusion_first": reps[0][k][3]}))
    return out[0], out[1]
