"""Kullback-Leibler projections of posterior draws onto constrained subspaces.

Each draw is projected by refitting the constrained model with the draw's
fitted means as the response. For a draw ``beta`` the projection at level
``lam`` minimizes the KL divergence from ``beta`` over

* ``lasso``: ``sum_j |b_j| <= lam``
* ``adaptive_lasso``: ``sum_j |b_j| / |beta*_j| <= lam``
* ``elastic_net``: ``sum_j |b_j| + ridge * sum_j b_j**2 <= lam``
* ``garotte``: ``b = beta* * theta`` with ``theta >= 0``, ``sum theta <= lam``
  and optional heredity inequalities.

Intercept columns of the dataset are never penalized. By default
``beta* = beta``, the draw itself.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .glm import Dataset, DegenerateDrawError, ParamPoint, kl_from_linear_predictors, \
    mean_response, project_sigma
from .posterior import PosteriorSample
from .solvers import (ZERO_TOL, HeredityGraph, PenaltySpec, SolverError, elastic_net_at_constraint,
                      garotte_path, glm_constrained_levels, glm_lasso_path, lasso_path_gaussian)

KINDS = ("lasso", "adaptive_lasso", "elastic_net", "garotte")
WORKERS_ENV = "BAYESPROJ_WORKERS"
MAX_EXCLUDED_FRACTION = 0.01


class ProjectionError(RuntimeError):
    """A projection failed; ``draw_index`` names the draw when known."""

    def __init__(self, message: str, draw_index: Optional[int] = None, diagnostics=None):
        super().__init__(message if draw_index is None else f"draw {draw_index}: {message}")
        self.draw_index = draw_index
        self.diagnostics = diagnostics or {}


class UndefinedLossError(ZeroDivisionError):
    pass


class CalibrationError(ValueError):
    def __init__(self, message: str, best: float):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class ConstraintSpec:
    """Which constrained subspace to project onto.

    ``beta_star`` fixes the adaptive / garotte reference vector for every
    draw; when it is None each draw supplies its own. ``heredity`` applies
    to the garotte only and ``ridge`` to the elastic net only.
    """

    kind: str
    heredity: Optional[HeredityGraph] = None
    ridge: float = 0.0
    beta_star: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.heredity is not None and self.kind != "garotte":
            raise ValueError("heredity constraints apply to the garotte only")
        if self.ridge < 0 or (self.ridge > 0 and self.kind != "elastic_net"):
            raise ValueError("ridge must be non-negative and is only used by elastic_net")
        if self.beta_star is not None:
            b = np.array(self.beta_star, dtype=float).reshape(-1)
            b.flags.writeable = False
            object.__setattr__(self, "beta_star", b)

    def reference(self, beta) -> np.ndarray:
        return np.asarray(beta, dtype=float) if self.beta_star is None else self.beta_star

    def penalty(self, dataset: Dataset, beta) -> PenaltySpec:
        free = np.flatnonzero(dataset.intercept)
        if self.kind == "adaptive_lasso":
            return PenaltySpec.adaptive(self.reference(beta), free)
        if self.kind == "elastic_net":
            return PenaltySpec.elastic_net(dataset.p, self.ridge, free)
        return PenaltySpec.lasso(dataset.p, free)

    def size(self, dataset: Dataset, beta) -> float:
        """Constraint value of ``beta`` itself: levels at or above it leave the draw unchanged."""
        if self.kind == "garotte":
            ref = self.reference(beta)
            pen = ~np.asarray(dataset.intercept)
            b = np.asarray(beta, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                th = np.where(ref != 0, b / ref, 0.0)
            return float(np.sum(th[pen]))
        return self.penalty(dataset, beta).value(beta)


@dataclass
class DrawProjection:
    """Projections of one draw at each constraint level."""

    betas: np.ndarray
    sigma2: Optional[np.ndarray]
    kl: np.ndarray
    null_kl: float
    path_models: List[Tuple[int, ...]]


def _gaussian_path(dataset: Dataset, mu, penalty):
    if dataset.weights is None or np.all(dataset.weights == 1.0):
        return lasso_path_gaussian(dataset.X, mu, penalty)
    sw = np.sqrt(dataset.weights)
    return lasso_path_gaussian(dataset.X * sw[:, None], mu * sw, penalty)


def _solve_levels(dataset: Dataset, beta, spec: ConstraintSpec, levels) -> Tuple[np.ndarray, list]:
    """Constrained solutions at each level, plus the distinct models met on the path."""
    fam = dataset.family
    mu = mean_response(dataset, beta)
    p = dataset.p
    if spec.kind == "garotte":
        gp = garotte_path(dataset.X, spec.reference(beta), mu, levels, spec.heredity,
                          dataset.intercept, fam.kind, dataset.weights)
        out = gp.betas
        return out, _distinct(out)
    penalty = spec.penalty(dataset, beta)
    if spec.kind == "elastic_net":
        target = dataset.with_response(mu)
        out = np.array([elastic_net_at_constraint(target, penalty, lam) for lam in levels])
        return out.reshape(len(levels), p), _distinct(out)
    if fam.kind == "gaussian":
        path = _gaussian_path(dataset, mu, penalty)
        out = np.array([path.at_constraint(lam) for lam in levels])
    else:
        path = glm_lasso_path(dataset.X, mu, penalty, fam.kind, dataset.weights)
        out = glm_constrained_levels(path, dataset.X, penalty, levels, dataset.weights)
    out = out.reshape(len(levels), p)
    return out, path.models()


def _distinct(betas) -> list:
    nz = np.abs(betas) > ZERO_TOL
    _, first = np.unique(nz, axis=0, return_index=True)
    return [tuple(int(j) for j in np.flatnonzero(nz[k])) for k in np.sort(first)]


def _project(dataset: Dataset, beta, phi, spec: ConstraintSpec, lambdas) -> DrawProjection:
    lambdas = np.asarray(lambdas, dtype=float)
    levels = np.concatenate([[0.0], lambdas])
    betas, models = _solve_levels(dataset, beta, spec, levels)
    if not np.all(np.isfinite(betas)):
        raise SolverError("non-finite projected coefficients")
    betas[np.abs(betas) <= ZERO_TOL] = 0.0
    fam = dataset.family
    eta_f = dataset.X @ beta
    eta_s = betas @ dataset.X.T
    if fam.free_dispersion:
        s2 = project_sigma(phi, np.broadcast_to(eta_f, eta_s.shape), eta_s, dataset.weights)
        kl = 0.5 * dataset.n * np.log(s2 / phi)
    else:
        s2 = None
        kl = kl_from_linear_predictors(fam, eta_f[None, :], eta_s, dataset.weights)
    kl = np.maximum(kl, 0.0)
    null = kl[0]
    kl = kl[1:]
    pen = ~np.asarray(dataset.intercept)
    keep = np.flatnonzero(pen)
    remap = {int(j): k for k, j in enumerate(keep)}
    pm = []
    for m in models:
        t = tuple(remap[j] for j in m if pen[j])
        if t not in pm:
            pm.append(t)
    return DrawProjection(betas[1:], None if s2 is None else s2[1:], kl, float(null), pm)


def project_draw(dataset: Dataset, draw: ParamPoint, spec: ConstraintSpec, lam: float):
    """Project one draw at constraint level ``lam``.

    Returns ``(projected ParamPoint, gamma, kl)`` where ``gamma`` marks the
    nonzero projected coefficients.
    """
    if lam < 0:
        raise ValueError("constraint level must be non-negative")
    beta = np.asarray(draw.beta, dtype=float)
    if beta.shape != (dataset.p,):
        raise ValueError(f"draw has length {beta.shape[0]}, expected {dataset.p}")
    try:
        r = _project(dataset, beta, draw.phi, spec, [lam])
    except (SolverError, DegenerateDrawError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise ProjectionError(str(exc)) from exc
    phi = float(r.sigma2[0]) if r.sigma2 is not None else draw.phi
    return ParamPoint(r.betas[0], phi), r.betas[0] != 0, float(r.kl[0])


@dataclass
class ProjectionEnsemble:
    """Per-draw projections on a grid of constraint levels.

    ``betas`` has shape (draws, levels, p). ``kl`` and ``null_kl`` are the
    per-draw divergences to the projection and to the null model (free
    columns only). ``predictors`` indexes the penalized columns that define
    a model.
    """

    lambdas: np.ndarray
    betas: np.ndarray
    kl: np.ndarray
    null_kl: np.ndarray
    predictors: np.ndarray
    names: Tuple[str, ...]
    kind: str
    family: str
    sigma2: Optional[np.ndarray] = None
    path_models: Optional[List[List[Tuple[int, ...]]]] = None
    draw_index: Optional[np.ndarray] = None
    excluded: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.betas.shape[0]

    @property
    def gamma(self) -> np.ndarray:
        """Sparsity indicators over predictors, shape (draws, levels, predictors)."""
        return self.betas[:, :, self.predictors] != 0

    @property
    def predictor_names(self) -> Tuple[str, ...]:
        return tuple(self.names[j] for j in self.predictors)

    def level(self, lam: float) -> int:
        """Index of ``lam`` in the grid (to 1e-9 relative)."""
        d = np.abs(self.lambdas - lam)
        k = int(np.argmin(d))
        if d[k] > 1e-9 * max(1.0, abs(lam)):
            raise KeyError(f"constraint level {lam} is not on the grid")
        return k

    def expected_sizes(self) -> np.ndarray:
        return self.gamma.sum(axis=2).mean(axis=0)

    def losses(self) -> np.ndarray:
        den = float(np.mean(self.null_kl))
        if not den > 0:
            raise UndefinedLossError("null model equals the full model for every draw")
        return np.clip(self.kl.mean(axis=0) / den, 0.0, 1.0)

    def subset(self, index) -> "ProjectionEnsemble":
        index = np.asarray(index)
        pm = None if self.path_models is None else [self.path_models[i] for i in np.arange(self.n_draws)[index]]
        return ProjectionEnsemble(self.lambdas, self.betas[index], self.kl[index], self.null_kl[index],
                                  self.predictors, self.names, self.kind, self.family,
                                  None if self.sigma2 is None else self.sigma2[index], pm,
                                  None if self.draw_index is None else self.draw_index[index],
                                  list(self.excluded))


def default_grid(dataset: Dataset, sample: PosteriorSample, spec: ConstraintSpec,
                 size: int = 100) -> np.ndarray:
    """Equally spaced levels from 0 to the 99th percentile of the draws' own constraint values.

    Garotte and adaptive-lasso grids span ``[0, number of penalized columns]``.
    """
    npen = int(np.sum(~np.asarray(dataset.intercept)))
    if spec.kind == "garotte" or (spec.kind == "adaptive_lasso" and spec.beta_star is None):
        top = float(npen)
    else:
        top = float(np.percentile([spec.size(dataset, b) for b in sample.draws], 99))
    return np.linspace(0.0, top, size)


def _worker_count(workers: Optional[int]) -> int:
    if workers is None:
        try:
            workers = int(os.environ.get(WORKERS_ENV, "1"))
        except ValueError:
            workers = 1
    return max(1, workers)


def _project_chunk(args):
    dataset, draws, phis, spec, lambdas, start = args
    out = []
    for k, (b, ph) in enumerate(zip(draws, phis)):
        try:
            out.append(_project(dataset, b, ph, spec, lambdas))
        except (SolverError, DegenerateDrawError, np.linalg.LinAlgError, FloatingPointError,
                ValueError) as exc:
            out.append((start + k, f"{type(exc).__name__}: {exc}"))
    return out


def project_sample(dataset: Dataset, sample: PosteriorSample, spec: ConstraintSpec,
                   lambda_grid: Optional[Sequence[float]] = None,
                   workers: Optional[int] = None) -> ProjectionEnsemble:
    """Project every draw at every level of ``lambda_grid``.

    Draws whose projection fails are dropped and listed in ``excluded``;
    if 1% or more of the draws fail the whole operation fails. With several
    workers (argument or the ``BAYESPROJ_WORKERS`` variable) draws are split
    into contiguous chunks and results are reassembled in draw order, so the
    ensemble does not depend on scheduling.
    """
    if sample.p != dataset.p:
        raise ValueError(f"sample has {sample.p} coefficients, dataset has {dataset.p}")
    lambdas = default_grid(dataset, sample, spec) if lambda_grid is None else \
        np.asarray(lambda_grid, dtype=float).reshape(-1)
    if lambdas.size == 0:
        raise ValueError("empty constraint grid")
    if np.any(lambdas < 0):
        raise ValueError("constraint levels must be non-negative")
    s = sample.n_draws
    phis = sample.phi_draws if sample.phi_draws is not None else np.ones(s)
    if dataset.family.free_dispersion and sample.phi_draws is None:
        raise ValueError("gaussian projections need variance draws")
    nw = min(_worker_count(workers), s)
    if nw == 1:
        results = _project_chunk((dataset, sample.draws, phis, spec, lambdas, 0))
    else:
        bounds = np.linspace(0, s, nw + 1).astype(int)
        jobs = [(dataset, sample.draws[a:b], phis[a:b], spec, lambdas, int(a))
                for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(nw) as ex:
            results = [r for chunk in ex.map(_project_chunk, jobs) for r in chunk]
    excluded = [r for r in results if isinstance(r, tuple)]
    good = [(i, r) for i, r in enumerate(results) if not isinstance(r, tuple)]
    if len(excluded) >= MAX_EXCLUDED_FRACTION * s or not good:
        raise ProjectionError(f"{len(excluded)} of {s} draws failed to project",
                              diagnostics={"excluded": excluded})
    idx = np.array([i for i, _ in good])
    rs = [r for _, r in good]
    sig = None if rs[0].sigma2 is None else np.array([r.sigma2 for r in rs])
    return ProjectionEnsemble(
        lambdas=lambdas.copy(),
        betas=np.array([r.betas for r in rs]),
        kl=np.array([r.kl for r in rs]),
        null_kl=np.array([r.null_kl for r in rs]),
        predictors=np.flatnonzero(~np.asarray(dataset.intercept)),
        names=tuple(dataset.names),
        kind=spec.kind,
        family=dataset.family.kind,
        sigma2=sig,
        path_models=[r.path_models for r in rs],
        draw_index=idx,
        excluded=excluded,
    )


def explanatory_loss(ensemble: ProjectionEnsemble, lam: float) -> float:
    """Relative loss of explanatory power: mean KL to the projection over mean KL to the null model.

    Numerator and denominator average over the same draws. A value below
    ``c`` means the projection keeps at least ``100 * (1 - c)`` percent of
    the full model's explanatory power.
    """
    k = ensemble.level(lam)
    den = math.fsum(ensemble.null_kl) / ensemble.n_draws
    if not den > 0:
        raise UndefinedLossError("null model equals the full model for every draw")
    num = math.fsum(ensemble.kl[:, k]) / ensemble.n_draws
    return float(min(max(num / den, 0.0), 1.0))


def calibrate_lambda(ensemble: ProjectionEnsemble, loss_bound: Optional[float] = None,
                     target_size: Optional[float] = None) -> float:
    """Choose a grid level from a loss bound ``c`` or a target expected model size ``k``.

    With ``loss_bound`` the smallest level whose loss is below ``c`` is
    returned. With ``target_size`` the level whose expected model size is
    closest to ``k`` is returned, ties going to the smaller level.
    """
    if (loss_bound is None) == (target_size is None):
        raise ValueError("give exactly one of loss_bound and target_size")
    lam = ensemble.lambdas
    order = np.argsort(lam, kind="stable")
    if loss_bound is not None:
        if not 0 < loss_bound <= 1:
            raise ValueError("loss bound must lie in (0, 1]")
        d = np.array([explanatory_loss(ensemble, l) for l in lam])
        ok = order[d[order] < loss_bound]
        if ok.size == 0:
            raise CalibrationError(f"no level reaches loss < {loss_bound}; minimum is {d.min():.6g}",
                                   float(d.min()))
        return float(lam[ok[0]])
    npred = ensemble.predictors.size
    if not 0 <= target_size <= npred:
        raise ValueError(f"target size must lie in [0, {npred}]")
    sizes = ensemble.expected_sizes()
    gap = np.abs(sizes[order] - target_size)
    return float(lam[order[int(np.argmin(gap))]])
