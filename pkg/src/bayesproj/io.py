"""Delimited-text persistence for samples, ensembles, model tables and metric curves.

Every file starts with ``#`` header lines carrying the schema version, the
artifact kind, the master seed, the configuration hash and a JSON metadata
record, followed by a CSV table. Floats are written with 17 significant
digits, so numeric arrays survive a round trip bitwise.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .experiments import SimMetrics
from .model_space import ModelId, ModelRow, ModelTable
from .posterior import PosteriorSample
from .projection import ProjectionEnsemble

SCHEMA = "bayesproj/1"
FLOAT_FMT = "%.17g"


class ArtifactError(ValueError):
    pass


def config_hash(text: str) -> str:
    """SHA-256 of the configuration text (first 16 hex digits)."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT % float(v)


def write_table(path, kind: str, columns: List[str], rows, meta: Optional[dict] = None,
                seed: Optional[int] = None, chash: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema: {SCHEMA}\n# artifact: {kind}\n")
        fh.write(f"# seed: {'' if seed is None else int(seed)}\n# config_hash: {chash}\n")
        fh.write("# meta: " + json.dumps(meta or {}, default=_jsonable, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_artifact(path, kind: Optional[str] = None) -> Tuple[dict, List[str], List[List[str]]]:
    """Return ``(header, columns, rows)``; ``header`` holds the parsed ``#`` fields."""
    path = Path(path)
    header: Dict[str, object] = {}
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ArtifactError(f"{path}: {exc}")
    body = 0
    for line in lines:
        if not line.startswith("# "):
            break
        key, _, value = line[2:].partition(": ")
        header[key] = value
        body += 1
    if header.get("schema") != SCHEMA:
        raise ArtifactError(f"{path}: not a {SCHEMA} file")
    if kind is not None and header.get("artifact") != kind:
        raise ArtifactError(f"{path}: expected a {kind} artifact, found {header.get('artifact')}")
    header["meta"] = json.loads(header.get("meta") or "{}")
    header["seed"] = int(header["seed"]) if header.get("seed") else None
    rows = list(csv.reader(lines[body:]))
    if not rows:
        raise ArtifactError(f"{path}: missing column header")
    return header, rows[0], rows[1:]


def artifact_seed(path) -> Optional[int]:
    """Master seed recorded in an artifact header."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(": ")
            if key == "seed":
                return int(value) if value else None
    return None


def _floats(rows, cols) -> np.ndarray:
    return np.array([[float(r[c]) for c in cols] for r in rows], dtype=float).reshape(len(rows), len(cols))


# posterior samples --------------------------------------------------------------

def save_sample(sample: PosteriorSample, path, chash: str = "") -> Path:
    cols = list(sample.names) + (["phi"] if sample.phi_draws is not None else [])
    data = sample.draws if sample.phi_draws is None else np.column_stack([sample.draws, sample.phi_draws])
    meta = {"names": list(sample.names), "phi": sample.phi_draws is not None,
            "diagnostics": sample.diagnostics}
    return write_table(path, "posterior_sample", cols, data.tolist(), meta,
                       sample.diagnostics.get("seed"), chash)


def load_sample(path) -> PosteriorSample:
    h, cols, rows = read_artifact(path, "posterior_sample")
    meta = h["meta"]
    arr = _floats(rows, range(len(cols)))
    p = len(meta["names"])
    phi = arr[:, p] if meta["phi"] else None
    return PosteriorSample(arr[:, :p], phi, meta["diagnostics"], meta["names"])


# projection ensembles -------------------------------------------------------------

def save_ensemble(ens: ProjectionEnsemble, path, seed: Optional[int] = None, chash: str = "") -> Path:
    """Long table with one row per (draw, level): KL, projected variance and coefficients."""
    s, L, p = ens.betas.shape
    has_sig = ens.sigma2 is not None
    cols = ["draw", "level", "kl"] + (["sigma2"] if has_sig else []) + list(ens.names)
    meta = {"lambdas": ens.lambdas, "null_kl": ens.null_kl, "predictors": ens.predictors,
            "names": list(ens.names), "kind": ens.kind, "family": ens.family,
            "draw_index": ens.draw_index, "excluded": [list(e) for e in ens.excluded],
            "path_models": None if ens.path_models is None
            else [[list(m) for m in pm] for pm in ens.path_models]}

    def rows():
        for i in range(s):
            for k in range(L):
                r = [i, k, ens.kl[i, k]]
                if has_sig:
                    r.append(ens.sigma2[i, k])
                r.extend(ens.betas[i, k])
                yield r
    return write_table(path, "projection_ensemble", cols, rows(), meta, seed, chash)


def load_ensemble(path) -> ProjectionEnsemble:
    h, cols, rows = read_artifact(path, "projection_ensemble")
    m = h["meta"]
    L, p = len(m["lambdas"]), len(m["names"])
    arr = _floats(rows, range(len(cols)))
    s = arr.shape[0] // L
    if s * L != arr.shape[0]:
        raise ArtifactError(f"{path}: row count is not a multiple of the grid size")
    has_sig = "sigma2" in cols
    off = 4 if has_sig else 3
    pm = None if m["path_models"] is None else [[tuple(x) for x in d] for d in m["path_models"]]
    return ProjectionEnsemble(
        lambdas=np.array(m["lambdas"], dtype=float),
        betas=arr[:, off:off + p].reshape(s, L, p),
        kl=arr[:, 2].reshape(s, L),
        null_kl=np.array(m["null_kl"], dtype=float),
        predictors=np.array(m["predictors"], dtype=int),
        names=tuple(m["names"]), kind=m["kind"], family=m["family"],
        sigma2=arr[:, 3].reshape(s, L) if has_sig else None,
        path_models=pm,
        draw_index=None if m["draw_index"] is None else np.array(m["draw_index"], dtype=int),
        excluded=[tuple(e) for e in m["excluded"]])


def ensemble_summary_rows(ens: ProjectionEnsemble):
    """Per level: lambda, expected size, loss and inclusion probabilities."""
    loss = ens.losses()
    size = ens.expected_sizes()
    incl = ens.gamma.mean(axis=0)
    cols = ["lambda", "expected_size", "loss"] + [f"incl_{n}" for n in ens.predictor_names]
    return cols, [[ens.lambdas[k], size[k], loss[k], *incl[k]] for k in range(ens.lambdas.size)]


def pattern_rows(ens: ProjectionEnsemble):
    """Per (draw, level) 0/1 sparsity patterns over predictors."""
    g = ens.gamma
    cols = ["draw", "level"] + list(ens.predictor_names)
    return cols, ([i, k, *g[i, k].astype(int)] for i in range(g.shape[0]) for k in range(g.shape[1]))


# model tables ----------------------------------------------------------------

def save_model_table(table: ModelTable, path, seed: Optional[int] = None, chash: str = "") -> Path:
    p = table.rows[0].model.p if table.rows else len(table.names)
    names = list(table.names) if table.names else [f"x{j}" for j in range(p)]
    cols = ["size"] + names + ["count", "prob", "prob_size"]
    rows = [[r.model.size, *r.model.mask().astype(int), r.count, r.frequency, r.within_size]
            for r in table.rows]
    meta = {"total": table.total, "provenance": table.provenance, "names": list(table.names), "p": p}
    return write_table(path, "model_table", cols, rows, meta, seed, chash)


def load_model_table(path) -> ModelTable:
    h, cols, rows = read_artifact(path, "model_table")
    m = h["meta"]
    p = m["p"]
    out = []
    for r in rows:
        mask = [c == "1" for c in r[1:1 + p]]
        out.append(ModelRow(ModelId.from_mask(np.array(mask, dtype=bool).reshape(p)),
                            int(r[1 + p]), float(r[2 + p]), float(r[3 + p])))
    return ModelTable(out, int(m["total"]), m["provenance"], tuple(m["names"]))


# simulation metrics ------------------------------------------------------------

_METRIC_FIELDS = ("expected_size", "loss", "encompassing", "fdr", "fdr_undefined", "recovery", "ns")


def save_metrics(metrics: SimMetrics, path, seed: Optional[int] = None, chash: str = "") -> Path:
    """Rows keyed by (scenario, lambda); extras that serialize to JSON go in the header."""
    present = [f for f in _METRIC_FIELDS if getattr(metrics, f) is not None]
    cols = ["scenario", "label", "lambda"] + present
    rows = [[metrics.scenario, metrics.label, metrics.lambdas[k]]
            + [getattr(metrics, f)[k] for f in present] for k in range(metrics.lambdas.size)]
    extras = {}
    for k, v in metrics.extras.items():
        try:
            json.dumps(v, default=_jsonable)
            extras[k] = v
        except TypeError:
            continue
    meta = {"replicates": metrics.replicates, "extras": extras}
    return write_table(path, "sim_metrics", cols, rows, meta, seed, chash)


def load_metrics(path) -> SimMetrics:
    h, cols, rows = read_artifact(path, "sim_metrics")
    if not rows:
        raise ArtifactError(f"{path}: no metric rows")
    arr = {c: np.array([float(r[j]) for r in rows]) for j, c in enumerate(cols) if j >= 2}
    kw = {f: arr.get(f) for f in _METRIC_FIELDS}
    if kw["fdr_undefined"] is not None:
        kw["fdr_undefined"] = kw["fdr_undefined"].astype(bool)
    return SimMetrics(rows[0][0], rows[0][1], arr["lambda"], replicates=int(h["meta"]["replicates"]),
                      extras=h["meta"]["extras"], **kw)
