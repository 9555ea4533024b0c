"""Reading delimited data into :class:`~bayesproj.glm.Dataset` objects."""
from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .glm import Dataset, get_family

INTERCEPT = "(Intercept)"
BIRTHWEIGHT_PREDICTORS = ("age", "lwt", "raceblack", "raceother", "smoke", "ptd", "ht", "ui",
                          "ftv1", "ftv2")


class IngestionError(ValueError):
    pass


def read_table(path, sep: str = ",") -> pd.DataFrame:
    """Read a UTF-8 delimited file with a header row; missing values are rejected."""
    path = Path(path)
    try:
        df = pd.read_csv(path, sep=sep, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise IngestionError(f"{path}: file is empty")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise IngestionError(f"{path}: {exc}")
    if df.shape[0] == 0:
        raise IngestionError(f"{path}: no data rows")
    if df.isna().any().any():
        bad = [c for c in df.columns if df[c].isna().any()]
        raise IngestionError(f"{path}: missing values in columns {', '.join(bad)}")
    return df


def is_binary(values) -> bool:
    v = np.unique(np.asarray(values, dtype=float))
    return bool(np.all(np.isin(v, (0.0, 1.0))))


def scaling(df: pd.DataFrame, columns: Sequence[str],
            binary: Optional[Sequence[str]] = None) -> Dict[str, Tuple[float, float]]:
    """Mean and sample standard deviation of each non-binary column.

    Columns listed in ``binary``, or detected as 0/1 when ``binary`` is None,
    are skipped.
    """
    missing = [c for c in columns if c not in df]
    if missing:
        raise IngestionError(f"columns not found: {', '.join(missing)}")
    out = {}
    for c in columns:
        try:
            v = df[c].to_numpy(dtype=float)
        except ValueError as exc:
            raise IngestionError(f"non-numeric column {c!r}: {exc}")
        if (binary is not None and c in binary) or (binary is None and is_binary(v)):
            continue
        sd = v.std(ddof=1) if v.size > 1 else 0.0
        if not sd > 0:
            raise IngestionError(f"column {c!r} is constant and cannot be standardized")
        out[c] = (float(v.mean()), float(sd))
    return out


def apply_scaling(df: pd.DataFrame, params: Dict[str, Tuple[float, float]]) -> pd.DataFrame:
    out = df.copy()
    for c, (m, sd) in params.items():
        out[c] = (out[c].to_numpy(dtype=float) - m) / sd
    return out


def standardize(df: pd.DataFrame, columns: Sequence[str],
                binary: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Center and scale non-binary columns to mean 0 and variance 1 (sample variance)."""
    return apply_scaling(df, scaling(df, columns, binary))


def to_dataset(df: pd.DataFrame, response: str, covariates: Sequence[str], family="binomial",
               intercept: bool = True, weights: Optional[str] = None,
               standardized: bool = False) -> Dataset:
    """Design matrix from named columns, optionally with a leading intercept column."""
    missing = [c for c in [response, *covariates] + ([weights] if weights else []) if c not in df]
    if missing:
        raise IngestionError(f"columns not found: {', '.join(missing)}")
    try:
        Xc = df[list(covariates)].to_numpy(dtype=float)
        y = df[response].to_numpy(dtype=float)
    except ValueError as exc:
        raise IngestionError(f"non-numeric data: {exc}")
    names = list(covariates)
    if intercept:
        Xc = np.column_stack([np.ones(len(df)), Xc])
        names = [INTERCEPT] + names
    w = None if weights is None else df[weights].to_numpy(dtype=float)
    mask = np.zeros(len(names), bool)
    mask[0] = intercept
    try:
        return Dataset(Xc, y, get_family(family), w, names, mask, standardized)
    except ValueError as exc:
        raise IngestionError(str(exc))


def birthweight_path() -> Path:
    return Path(str(resources.files("bayesproj") / "data" / "birthwt.csv"))


def load_birthweight(intercept: bool = True) -> Dataset:
    """Low-birthweight data: binary response ``low``, age and lwt standardized."""
    df = read_table(birthweight_path())
    df = standardize(df, BIRTHWEIGHT_PREDICTORS)
    return to_dataset(df, "low", BIRTHWEIGHT_PREDICTORS, "binomial", intercept, standardized=True)
