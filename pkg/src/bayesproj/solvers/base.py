from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

WEIGHT_CAP = 1e8
ZERO_TOL = 1e-8


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PenaltySpec:
    """Weighted L1 (optionally plus ridge) penalty ``sum_j w_j |b_j| + ridge * sum_j b_j**2``.

    A zero weight leaves the coefficient unpenalized. Weights at the cap are
    treated as "always excluded": the coefficient is pinned to zero.
    """

    kind: str
    weights: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lasso", "adaptive_lasso", "elastic_net"):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("penalty weights must be finite and non-negative")
        if not np.any(w > 0):
            raise ValueError("at least one coefficient must be penalized")
        if self.ridge < 0 or (self.kind != "elastic_net" and self.ridge != 0):
            raise ValueError("ridge coefficient only allowed (and >= 0) for elastic_net")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def lasso(cls, p: int, unpenalized: Iterable[int] = ()) -> "PenaltySpec":
        w = np.ones(p)
        w[list(unpenalized)] = 0.0
        return cls("lasso", w)

    @classmethod
    def adaptive(cls, beta_star, unpenalized: Iterable[int] = (),
                 cap: float = WEIGHT_CAP) -> "PenaltySpec":
        b = np.abs(np.asarray(beta_star, dtype=float))
        with np.errstate(divide="ignore"):
            w = np.minimum(1.0 / b, cap)
        w[list(unpenalized)] = 0.0
        return cls("adaptive_lasso", w)

    @classmethod
    def elastic_net(cls, p: int, ridge: float, unpenalized: Iterable[int] = ()) -> "PenaltySpec":
        w = np.ones(p)
        w[list(unpenalized)] = 0.0
        return cls("elastic_net", w, float(ridge))

    @property
    def p(self) -> int:
        return self.weights.shape[0]

    @property
    def free(self) -> np.ndarray:
        return self.weights == 0

    @property
    def excluded(self) -> np.ndarray:
        return self.weights >= WEIGHT_CAP

    def value(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        return float(np.sum(self.weights * np.abs(beta)) + self.ridge * np.sum(beta**2))

    def l1(self, beta):
        return np.sum(self.weights * np.abs(beta), axis=-1)


def nonzero_set(beta, tol: float = 0.0) -> Tuple[int, ...]:
    return tuple(int(j) for j in np.flatnonzero(np.abs(beta) > tol))


@dataclass
class SolutionPath:
    """Piecewise solution path indexed by a decreasing penalty multiplier.

    Row ``k`` of ``betas`` solves the penalized problem at ``deltas[k]``.
    ``constraint_values[k]`` is the weighted L1 norm at that knot.
    """

    deltas: np.ndarray
    betas: np.ndarray
    constraint_values: np.ndarray
    objectives: np.ndarray
    target: np.ndarray
    family: str = "gaussian"
    warnings: List[str] = field(default_factory=list)

    @property
    def active_sets(self) -> List[Tuple[int, ...]]:
        return [nonzero_set(b) for b in self.betas]

    def __len__(self):
        return self.deltas.shape[0]

    def models(self) -> List[Tuple[int, ...]]:
        """Distinct nonzero patterns met along the path, in path order.

        Segment midpoints are included so that models living strictly
        between two knots are not missed.
        """
        seen, out = set(), []
        pats = []
        for k in range(len(self)):
            pats.append(nonzero_set(self.betas[k]))
            if k + 1 < len(self):
                pats.append(nonzero_set(0.5 * (self.betas[k] + self.betas[k + 1])))
        for s in pats:
            if s not in seen:
                seen.add(s)
                out.append(s)
        return out

    def segment(self, lam: float) -> Tuple[int, float]:
        """Knot index ``k`` and fraction ``t`` with ``lam`` between knots ``k`` and ``k+1``."""
        cv = self.constraint_values
        if lam <= cv[0]:
            return 0, 0.0
        if lam >= cv[-1]:
            return len(cv) - 1, 0.0
        k = int(np.searchsorted(cv, lam, side="right")) - 1
        k = min(max(k, 0), len(cv) - 2)
        span = cv[k + 1] - cv[k]
        t = 0.0 if span <= 0 else (lam - cv[k]) / span
        return k, float(min(max(t, 0.0), 1.0))

    def at_constraint(self, lam: float) -> np.ndarray:
        """Solution with weighted L1 norm ``lam`` by interpolating between knots.

        Exact for the gaussian homotopy, where coefficients are linear in the
        penalty between knots. Beyond the last knot the last solution is returned.
        """
        k, t = self.segment(lam)
        if t == 0.0:
            return self.betas[k].copy()
        return (1 - t) * self.betas[k] + t * self.betas[k + 1]

    def at_delta(self, delta: float) -> np.ndarray:
        d = self.deltas
        if delta >= d[0]:
            return self.betas[0].copy()
        if delta <= d[-1]:
            return self.betas[-1].copy()
        k = int(np.searchsorted(-d, -delta, side="right")) - 1
        k = min(max(k, 0), len(d) - 2)
        t = (d[k] - delta) / (d[k] - d[k + 1])
        return (1 - t) * self.betas[k] + t * self.betas[k + 1]


@dataclass(frozen=True)
class HeredityGraph:
    """Parent sets over predictors with a strong, weak or absent heredity rule.

    Strong heredity requires ``theta_i <= theta_j`` for each parent ``j`` of
    ``i``; weak heredity requires ``theta_i <= sum_{j in parents(i)} theta_j``.
    """

    parents: Dict[int, Tuple[int, ...]]
    mode: str = "strong"
    p: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("none", "strong", "weak"):
            raise ValueError(f"unknown heredity mode {self.mode!r}")
        parents = {int(i): tuple(int(j) for j in ps) for i, ps in dict(self.parents).items() if ps}
        for i, ps in parents.items():
            for j in (i,) + ps:
                if j < 0 or (self.p is not None and j >= self.p):
                    raise ValueError(f"parent index {j} out of range")
            if i in ps:
                raise ValueError(f"predictor {i} lists itself as a parent")
        _check_acyclic(parents)
        object.__setattr__(self, "parents", parents)

    @classmethod
    def empty(cls, p: Optional[int] = None) -> "HeredityGraph":
        return cls({}, "none", p)

    def constraint_rows(self, p: int) -> np.ndarray:
        """Rows ``a`` such that heredity reads ``a @ theta <= 0``."""
        rows = []
        if self.mode == "none":
            return np.zeros((0, p))
        for i, ps in sorted(self.parents.items()):
            if self.mode == "strong":
                for j in ps:
                    r = np.zeros(p)
                    r[i], r[j] = 1.0, -1.0
                    rows.append(r)
            else:
                r = np.zeros(p)
                r[i] = 1.0
                r[list(ps)] -= 1.0
                rows.append(r)
        return np.array(rows).reshape(-1, p)

    def satisfied(self, theta, tol: float = 1e-8) -> bool:
        theta = np.asarray(theta, dtype=float)
        rows = self.constraint_rows(theta.shape[0])
        return bool(np.all(rows @ theta <= tol)) if rows.size else True


def _check_acyclic(parents: Dict[int, Tuple[int, ...]]) -> None:
    state: Dict[int, int] = {}

    def visit(i):
        s = state.get(i, 0)
        if s == 1:
            raise ValueError(f"heredity graph has a cycle through predictor {i}")
        if s == 2:
            return
        state[i] = 1
        for j in parents.get(i, ()):
            visit(j)
        state[i] = 2

    for i in list(parents):
        visit(i)


@dataclass
class GarotteSolution:
    theta: np.ndarray
    lam: float
    beta: np.ndarray
    objective: float
    free_coef: Optional[np.ndarray] = None

    @property
    def active_set(self) -> Tuple[int, ...]:
        return nonzero_set(self.theta, ZERO_TOL)


@dataclass
class GarottePath:
    """Garotte solutions on a grid of constraint levels, stored as arrays.

    Indexing or iterating yields :class:`GarotteSolution` objects.
    """

    lambdas: np.ndarray
    thetas: np.ndarray
    betas: np.ndarray
    objectives: np.ndarray
    free_coefs: np.ndarray

    def __len__(self):
        return self.lambdas.shape[0]

    def __getitem__(self, k) -> GarotteSolution:
        return GarotteSolution(self.thetas[k].copy(), float(self.lambdas[k]), self.betas[k].copy(),
                               float(self.objectives[k]), self.free_coefs[k].copy())

    def __iter__(self):
        return (self[k] for k in range(len(self)))
