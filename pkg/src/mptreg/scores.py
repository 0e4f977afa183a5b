"""Out-of-distribution scores over one energy-table row; higher means more in-distribution."""

import math
from enum import Enum

import numpy as np

from .objectives import logsumexp


class ScoreKind(str, Enum):
    ENERGY = "energy"
    MAX_ENERGY = "max_energy"
    SOFTMAX = "softmax"


def _check_row(row) -> np.ndarray:
    v = np.asarray(row, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"score expects a nonempty 1-D row of label energies, got shape {v.shape}")
    return v


def energy_score(row) -> float:
    """logsumexp of the label energies at temperature 1."""
    return logsumexp(_check_row(row), 1.0)


def max_energy_score(row) -> float:
    """Maximum label energy; small values flag likely out-distribution inputs."""
    return float(_check_row(row).max())


def softmax_score(row) -> float:
    """Maximum softmax probability over labels, in (0, 1]."""
    v = _check_row(row)
    hi = float(v.max())
    return math.exp(hi - logsumexp(v, 1.0))


def score_table(energies, kind: ScoreKind) -> np.ndarray:
    """Apply one score to every row of an m-by-K energy table."""
    e = np.asarray(energies, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
        raise ValueError(f"energy table must be a nonempty 2-D matrix, got shape {e.shape}")
    kind = ScoreKind(kind)
    hi = e.max(axis=1)
    if kind is ScoreKind.MAX_ENERGY:
        return hi
    lse = hi + np.log(np.exp(e - hi[:, None]).sum(axis=1))
    if kind is ScoreKind.ENERGY:
        return lse
    return np.exp(hi - lse)
