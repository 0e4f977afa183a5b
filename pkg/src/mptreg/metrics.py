"""Classification accuracy, tie-aware AUROC, and robustness-curve aggregation."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ScoreSample:
    """Scores from the in-distribution and out-distribution sides of an OOD test."""

    in_scores: np.ndarray
    out_scores: np.ndarray

    def __post_init__(self):
        for name in ("in_scores", "out_scores"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim != 1 or v.size == 0:
                raise ValueError(f"{name} must be a nonempty 1-D sequence")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class RobustnessCurve:
    """Test accuracy measured at strictly increasing noise levels."""

    levels: np.ndarray
    accuracies: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        accs = np.asarray(self.accuracies, dtype=np.float64)
        if levels.ndim != 1 or levels.size == 0 or levels.shape != accs.shape:
            raise ValueError("levels and accuracies must be nonempty 1-D sequences of equal length")
        if (np.diff(levels) <= 0).any():
            raise ValueError("noise levels must be strictly increasing")
        if (accs < 0).any() or (accs > 1).any():
            raise ValueError("accuracies must lie in [0, 1]")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "accuracies", accs)


def accuracy(energies, labels) -> float:
    """Fraction of rows whose argmax column equals the label; ties go to the lowest index."""
    e = np.asarray(energies, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 1:
        raise ValueError(f"energy table must be a nonempty 2-D matrix, got shape {e.shape}")
    y = np.asarray(labels)
    if y.shape != (e.shape[0],):
        raise ValueError(f"labels must be a length-{e.shape[0]} sequence, got shape {y.shape}")
    return float((e.argmax(axis=1) == y).mean())


def auroc(sample: ScoreSample) -> float:
    """Probability a random in-score exceeds a random out-score, ties counted half.

    Computed from mid-ranks in O(n log n); agrees exactly with the brute-force
    pairwise count.
    """
    n_in, n_out = sample.in_scores.size, sample.out_scores.size
    ranks = rankdata(np.concatenate([sample.in_scores, sample.out_scores]), method="average")
    u = float(ranks[:n_in].sum()) - n_in * (n_in + 1) / 2.0
    return u / (n_in * n_out)


def mean_auroc(per_dataset) -> float:
    """Arithmetic mean of per-out-dataset AUROC values."""
    v = np.asarray(per_dataset, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("mean_auroc needs at least one AUROC value")
    return float(v.mean())


def robustness_auc(curve: RobustnessCurve) -> float:
    """Level-averaged accuracy (the robustness area-under-curve convention)."""
    return float(curve.accuracies.mean())
