"""Induced posterior over models: frequency tables, inclusion probabilities and predictive mixtures."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .glm import get_family
from .projection import ProjectionEnsemble


@dataclass(frozen=True, order=False)
class ModelId:
    """Inclusion pattern over ``p`` predictors stored as an integer bitset (bit ``j`` = predictor ``j``)."""

    bits: int
    p: int

    def __post_init__(self):
        if self.p < 0 or self.bits < 0 or self.bits >> self.p:
            raise ValueError("bitset inconsistent with the number of predictors")

    @classmethod
    def from_indices(cls, indices: Iterable[int], p: int) -> "ModelId":
        bits = 0
        for j in indices:
            if not 0 <= j < p:
                raise ValueError(f"predictor index {j} out of range")
            bits |= 1 << int(j)
        return cls(bits, p)

    @classmethod
    def from_mask(cls, mask) -> "ModelId":
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        return cls.from_indices(np.flatnonzero(mask), mask.shape[0])

    @property
    def size(self) -> int:
        return bin(self.bits).count("1")

    @property
    def indices(self) -> Tuple[int, ...]:
        return tuple(j for j in range(self.p) if self.bits >> j & 1)

    def mask(self) -> np.ndarray:
        return np.array([bool(self.bits >> j & 1) for j in range(self.p)])

    def pattern(self) -> str:
        """0/1 string in predictor order."""
        return "".join("1" if self.bits >> j & 1 else "0" for j in range(self.p))

    def __str__(self):
        return self.pattern()


@dataclass(frozen=True)
class ModelRow:
    model: ModelId
    count: int
    frequency: float
    within_size: float


@dataclass
class ModelTable:
    """Model counts sorted by size, then descending frequency, then pattern.

    ``within_size`` divides each count by the total count of its size class.
    """

    rows: List[ModelRow]
    total: int
    provenance: str
    names: Tuple[str, ...] = ()

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def by_size(self, size: int) -> List[ModelRow]:
        return [r for r in self.rows if r.model.size == size]

    def modal(self, size: int) -> Optional[ModelRow]:
        rows = self.by_size(size)
        return rows[0] if rows else None

    def top(self, k: int) -> "ModelTable":
        """Keep the ``k`` most frequent models of each size class."""
        keep, seen = [], Counter()
        for r in self.rows:
            if seen[r.model.size] < k:
                keep.append(r)
                seen[r.model.size] += 1
        return ModelTable(keep, self.total, self.provenance, self.names)

    def labels(self, row: ModelRow) -> Tuple[str, ...]:
        return tuple(self.names[j] for j in row.model.indices) if self.names else \
            tuple(str(j) for j in row.model.indices)


def _table(counts: Counter, p: int, provenance: str, names) -> ModelTable:
    total = sum(counts.values())
    size_tot = Counter()
    for m, c in counts.items():
        size_tot[m.size] += c
    rows = [ModelRow(m, c, c / total, c / size_tot[m.size]) for m, c in counts.items()]
    rows.sort(key=lambda r: (r.model.size, -r.count, r.model.pattern()))
    return ModelTable(rows, total, provenance, tuple(names or ()))


def model_frequencies(source, pooling: str = "at_lambda", lam: Optional[float] = None,
                      names: Optional[Sequence[str]] = None) -> ModelTable:
    """Tabulate the models visited by the projected draws.

    ``source`` is a :class:`ProjectionEnsemble`, a boolean array of
    inclusion patterns (draws by predictors, for ``at_lambda``) or one
    sequence of index tuples per draw (for ``along_path``). With
    ``at_lambda`` each draw contributes its pattern at ``lam``; with
    ``along_path`` each draw contributes every distinct model on its path
    once.
    """
    if pooling not in ("at_lambda", "along_path"):
        raise ValueError("pooling must be 'at_lambda' or 'along_path'")
    counts: Counter = Counter()
    if isinstance(source, ProjectionEnsemble):
        p = source.predictors.size
        names = source.predictor_names if names is None else names
        if pooling == "at_lambda":
            if lam is None:
                raise ValueError("at_lambda pooling needs a constraint level")
            pats = source.gamma[:, source.level(lam), :]
            prov = f"lambda={lam:.17g}"
        else:
            if source.path_models is None:
                raise ValueError("ensemble carries no path models")
            pats = source.path_models
            prov = "pooled over path"
    else:
        pats = source
        prov = f"lambda={lam:.17g}" if (pooling == "at_lambda" and lam is not None) else \
            ("pooled over path" if pooling == "along_path" else "patterns")
        p = None
    if pooling == "at_lambda":
        arr = np.asarray(pats, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("need a non-empty draws-by-predictors pattern array")
        p = arr.shape[1] if p is None else p
        packed = Counter(map(bytes, np.packbits(arr, axis=1, bitorder="little")))
        for key, c in packed.items():
            bits = int.from_bytes(key, "little")
            counts[ModelId(bits, p)] += c
    else:
        pats = list(pats)
        if not pats:
            raise ValueError("need at least one path")
        if p is None:
            p = max((max(m) + 1 for path in pats for m in path if m), default=0)
            p = len(names) if names is not None else p
        for path in pats:
            for m in {ModelId.from_indices(s, p) for s in path}:
                counts[m] += 1
    return _table(counts, p, prov, names)


def inclusion_probabilities(ensemble: ProjectionEnsemble, lam: float) -> np.ndarray:
    """Fraction of draws whose projection keeps each predictor."""
    g = ensemble.gamma[:, ensemble.level(lam), :]
    return g.sum(axis=0) / g.shape[0]


def expected_model_size(ensemble: ProjectionEnsemble, lam: float) -> float:
    """Posterior mean number of nonzero projected predictors (the sum of inclusion probabilities)."""
    return float(math.fsum(inclusion_probabilities(ensemble, lam)))


@dataclass
class PredictiveMixture:
    """Equal-weight mixture of per-draw predictive distributions at new design rows.

    ``component_means`` and ``component_vars`` have one row per draw.
    ``mean`` and ``variance`` are the mixture moments per new row. For the
    binomial family ``mean`` is the mixture success probability.
    """

    family: str
    component_means: np.ndarray
    component_vars: np.ndarray
    weights: np.ndarray
    trials: float = 1.0

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.component_means

    @property
    def variance(self) -> np.ndarray:
        second = self.weights @ (self.component_vars + self.component_means**2)
        return np.maximum(second - self.mean**2, 0.0)

    def density(self, y) -> np.ndarray:
        """Mixture density (or mass) of ``y`` at each new row."""
        y = np.broadcast_to(np.asarray(y, dtype=float), self.component_means.shape[1:])
        m = self.component_means
        if self.family == "gaussian":
            d = stats.norm.pdf(y, m, np.sqrt(self.component_vars))
        elif self.family == "binomial":
            d = stats.binom.pmf(y, self.trials, m)
        else:
            d = stats.poisson.pmf(y, m)
        return self.weights @ d


def predictive_mixture(ensemble: ProjectionEnsemble, lam: float, new_rows,
                       draws: Optional[np.ndarray] = None) -> PredictiveMixture:
    """Average the predictive distributions implied by each projected draw.

    ``new_rows`` are full design rows (including any intercept column).
    Gaussian components use the projected variance of their draw.
    """
    Xn = np.atleast_2d(np.asarray(new_rows, dtype=float))
    k = ensemble.level(lam)
    B = ensemble.betas[:, k, :]
    if Xn.shape[1] != B.shape[1]:
        raise ValueError(f"new rows have {Xn.shape[1]} columns, expected {B.shape[1]}")
    idx = np.arange(B.shape[0]) if draws is None else np.asarray(draws)
    if idx.size == 0:
        raise ValueError("empty mixture")
    fam = get_family(ensemble.family)
    eta = B[idx] @ Xn.T
    m = fam.mean(eta)
    if fam.kind == "gaussian":
        v = np.repeat(ensemble.sigma2[idx, k][:, None], Xn.shape[0], axis=1)
    elif fam.kind == "binomial":
        v = m * (1.0 - m)
    else:
        v = m.copy()
    return PredictiveMixture(fam.kind, m, v, np.full(idx.size, 1.0 / idx.size))


def mixture_by_model(ensemble: ProjectionEnsemble, lam: float,
                     new_rows) -> Dict[ModelId, Tuple[float, PredictiveMixture]]:
    """Split the predictive mixture by projected model: ``{model: (posterior weight, mixture)}``."""
    k = ensemble.level(lam)
    g = ensemble.gamma[:, k, :]
    groups: Dict[ModelId, List[int]] = {}
    for i, row in enumerate(g):
        groups.setdefault(ModelId.from_mask(row), []).append(i)
    s = g.shape[0]
    return {m: (len(ix) / s, predictive_mixture(ensemble, lam, new_rows, np.array(ix)))
            for m, ix in groups.items()}


def recombine(parts: Dict[ModelId, Tuple[float, PredictiveMixture]]) -> PredictiveMixture:
    """Weighted union of per-model mixtures."""
    ms, vs, ws = [], [], []
    fam = None
    for wt, mix in parts.values():
        fam = mix.family
        ms.append(mix.component_means)
        vs.append(mix.component_vars)
        ws.append(wt * mix.weights)
    return PredictiveMixture(fam, np.vstack(ms), np.vstack(vs), np.concatenate(ws))
