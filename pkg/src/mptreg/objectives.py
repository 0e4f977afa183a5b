"""Maximum-probability regularization and the three training objectives.

Two layers of machinery live here.  The exact finite-distribution operations
work on explicit probability vectors: the min-ratio probability bound
``min_z P(z) / P(z|model)``, its smooth softmin lower bound parameterized by
``alpha``, and the objective chain that orders the intersection objective, its
softmin relaxation, and cross entropy plus regularizer.  The batch operations
apply the same structure to an energy table, approximating the regularizer's
sum over the full support by the current batch's inputs crossed with all
labels.  Every batch objective is expressed as a value to MAXIMIZE; trainers
ascend it (or descend its negation).
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

SUM_TOLERANCE = 1e-12


class Objective(str, Enum):
    """The three objective kinds: per-example conditional, joint, and intersection."""

    CCE = "CCE"
    JCE = "JCE"
    JI = "JI"


class DivergedError(RuntimeError):
    """Signal that an energy table contains non-finite entries (training blew up)."""


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: Objective
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "kind", Objective(self.kind))
        object.__setattr__(self, "alpha", float(self.alpha))
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be a positive finite real, got {self.alpha}")


@dataclass(frozen=True)
class DiscreteModelPair:
    """Explicit finite distributions: prior P(z), oracle P(z|true model), model P(z|fit)."""

    prior: np.ndarray
    oracle: np.ndarray
    model: np.ndarray

    def __post_init__(self):
        for name in ("prior", "oracle", "model"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim != 1 or v.size == 0:
                raise ValueError(f"{name} must be a nonempty 1-D probability vector")
            if (v < 0).any():
                raise ValueError(f"{name} has negative entries")
            if abs(float(v.sum()) - 1.0) > SUM_TOLERANCE:
                raise ValueError(f"{name} sums to {v.sum()!r}, expected 1 within {SUM_TOLERANCE}")
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if not (self.prior.size == self.oracle.size == self.model.size):
            raise ValueError("prior, oracle, and model must have equal lengths")


@dataclass(frozen=True)
class LossValue:
    """Objective value split into its data-fit and regularizer parts (value = fit + reg)."""

    value: float
    fit_part: float
    regularizer_part: float


def logsumexp(values, alpha: float = 1.0) -> float:
    """(1/alpha) * ln sum_i exp(alpha * v_i), shifted by max(v) so it never overflows."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"logsumexp expects a 1-D sequence, got shape {v.shape}")
    if v.size == 0:
        raise ValueError("logsumexp of an empty sequence")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    hi = float(v.max())
    return hi + math.log(float(np.exp(alpha * (v - hi)).sum())) / alpha


def _log_ratios(pair: DiscreteModelPair) -> np.ndarray:
    """log(prior/model) per outcome; entries with prior = model = 0 are dropped.

    Conventions: model(z) = 0 with prior(z) > 0 gives +inf (contributes nothing
    to the softmin sum); prior(z) = 0 with model(z) > 0 gives -inf (ratio 0).
    """
    keep = (pair.prior > 0) | (pair.model > 0)
    with np.errstate(divide="ignore"):
        return np.log(pair.prior[keep]) - np.log(pair.model[keep])


def mpt_bound_exact(pair: DiscreteModelPair) -> float:
    """The probability upper bound: min over outcomes of prior(z) / model(z)."""
    log_r = _log_ratios(pair)
    lo = float(log_r.min()) if log_r.size else math.inf
    if lo == math.inf:
        raise ValueError("model assigns probability nowhere the prior does; bound is infinite")
    return math.exp(lo)


def p_alpha_exact(pair: DiscreteModelPair, alpha: float) -> float:
    """Softmin lower bound (sum_z (prior/model)^-alpha)^(-1/alpha).

    Always <= mpt_bound_exact(pair), with equality approached as alpha grows.
    Evaluated in log space so extreme ratios and large alpha stay finite.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    log_r = _log_ratios(pair)
    lo = float(log_r.min()) if log_r.size else math.inf
    if lo == math.inf:
        raise ValueError("model assigns probability nowhere the prior does; bound is infinite")
    if lo == -math.inf:
        return 0.0
    # exp terms are <= 1 with at least one exactly 1, so log(total) >= 0 and
    # the result can never exceed the min bound, even in floating point.
    with np.errstate(invalid="ignore"):
        total = float(np.exp(-alpha * (log_r - lo)).sum())
    return math.exp(lo - math.log(total) / alpha)


class ObjectiveChain(NamedTuple):
    l_perp: float
    l_alpha_perp: float
    cross_plus_reg: float


def exact_objective_chain(pair: DiscreteModelPair, alpha: float) -> ObjectiveChain:
    """Evaluate the three exact objectives; they satisfy l_perp >= l_alpha_perp >= cross_plus_reg.

    ``l_perp`` is ln sum_z oracle(z) model(z) plus the log of the exact min bound;
    ``l_alpha_perp`` swaps in the softmin bound; ``cross_plus_reg`` replaces the
    log-of-sum with the cross entropy sum_z oracle(z) ln model(z) (Jensen).  A
    model that puts zero mass on an oracle-supported outcome yields -inf cross
    entropy, reported explicitly.
    """
    overlap = float(pair.oracle @ pair.model)
    log_overlap = math.log(overlap) if overlap > 0 else -math.inf
    bound = mpt_bound_exact(pair)
    log_bound = math.log(bound) if bound > 0 else -math.inf
    p_alpha = p_alpha_exact(pair, alpha)
    log_p_alpha = math.log(p_alpha) if p_alpha > 0 else -math.inf
    supported = pair.oracle > 0
    if (pair.model[supported] == 0).any():
        cross = -math.inf
    else:
        cross = float(pair.oracle[supported] @ np.log(pair.model[supported]))
    return ObjectiveChain(
        l_perp=log_overlap + log_bound,
        l_alpha_perp=log_overlap + log_p_alpha,
        cross_plus_reg=cross + log_p_alpha,
    )


def _check_batch(energies, labels) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(energies, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
        raise ValueError(f"energy table must be a nonempty 2-D matrix, got shape {e.shape}")
    if not np.isfinite(e).all():
        raise DivergedError("energy table contains non-finite entries")
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != e.shape[0]:
        raise ValueError(f"labels must be a length-{e.shape[0]} sequence, got shape {y.shape}")
    if y.dtype.kind not in "iu":
        raise ValueError(f"labels must be integers, got dtype {y.dtype}")
    if y.size and (int(y.min()) < 0 or int(y.max()) >= e.shape[1]):
        raise ValueError(f"labels must lie in [0, {e.shape[1]}), got range [{y.min()}, {y.max()}]")
    return e, y.astype(np.int64)


def _rowwise_logsumexp(e: np.ndarray, alpha: float) -> np.ndarray:
    hi = e.max(axis=1, keepdims=True)
    return hi[:, 0] + np.log(np.exp(alpha * (e - hi)).sum(axis=1)) / alpha


def _global_softmax(e: np.ndarray, alpha: float) -> np.ndarray:
    z = np.exp(alpha * (e - e.max()))
    return z / z.sum()


def batch_loss(cfg: ObjectiveConfig, energies, labels) -> LossValue:
    """Batch-approximated objective value (to be maximized).

    With e_i the true-label energy of example i, m examples, and K labels:

    * CCE: mean e_i minus the mean per-row alpha-tempered logsumexp.
    * JCE: mean e_i minus the alpha-tempered logsumexp over all m*K entries
      (shifted by (1/alpha) ln(mK) so the value is batch-size comparable).
    * JI: log of the batch-mean exponentiated e_i, same regularizer as JCE.

    The regularizer's sum over the full prior support is approximated by the
    batch's inputs crossed with every label.
    """
    e, y = _check_batch(energies, labels)
    m, num_labels = e.shape
    picked = e[np.arange(m), y]
    if cfg.kind is Objective.CCE:
        fit = float(picked.mean())
        reg = -float(_rowwise_logsumexp(e, cfg.alpha).mean())
    elif cfg.kind is Objective.JCE:
        fit = float(picked.mean())
        reg = -(logsumexp(e.ravel(), cfg.alpha) - math.log(m * num_labels) / cfg.alpha)
    else:
        fit = logsumexp(picked, 1.0) - math.log(m)
        reg = -(logsumexp(e.ravel(), cfg.alpha) - math.log(m * num_labels) / cfg.alpha)
    return LossValue(value=fit + reg, fit_part=fit, regularizer_part=reg)


def batch_loss_gradient(cfg: ObjectiveConfig, energies, labels) -> np.ndarray:
    """Closed-form d(batch_loss value)/dE[i, y], an m-by-K matrix.

    For CCE and JCE the fit gradient is a uniform 1/m on true-label entries;
    for JI it is softmax-weighted across the batch, so high-energy examples
    dominate.  The regularizer gradient is the (per-row or global) softmax of
    the alpha-scaled energies, negated.
    """
    e, y = _check_batch(energies, labels)
    m, _ = e.shape
    rows = np.arange(m)
    grad = np.zeros_like(e)
    if cfg.kind is Objective.CCE:
        hi = e.max(axis=1, keepdims=True)
        z = np.exp(cfg.alpha * (e - hi))
        grad -= z / z.sum(axis=1, keepdims=True) / m
        grad[rows, y] += 1.0 / m
    elif cfg.kind is Objective.JCE:
        grad -= _global_softmax(e, cfg.alpha)
        grad[rows, y] += 1.0 / m
    else:
        picked = e[rows, y]
        w = np.exp(picked - picked.max())
        grad[rows, y] += w / w.sum()
        grad -= _global_softmax(e, cfg.alpha)
    return grad


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    passed: bool
    detail: str


def _random_pair(rng: np.random.Generator) -> DiscreteModelPair:
    n = int(rng.integers(2, 13))
    prior, oracle, model = rng.dirichlet(np.ones(n), size=3)
    return DiscreteModelPair(prior=prior, oracle=oracle, model=model)


def verify_exact_properties(
    num_pairs: int = 1000,
    seed: int = 0,
    alpha_grid: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0),
) -> list[PropertyCheck]:
    """Property suite over random distribution triples: the softmin bound never
    exceeds the min bound, grows monotonically in alpha, approaches the min
    bound at large alpha, and the objective chain keeps its ordering."""
    rng = np.random.default_rng(seed)
    alphas = tuple(sorted(alpha_grid))
    slack = 1e-12
    bound_bad = monotone_bad = chain_bad = limit_bad = 0
    limit_checked = 0
    limit_alpha = 2.0**10
    for _ in range(num_pairs):
        pair = _random_pair(rng)
        bound = mpt_bound_exact(pair)
        p_values = [p_alpha_exact(pair, a) for a in alphas]
        if any(p > bound for p in p_values):
            bound_bad += 1
        if any(b < a - slack for a, b in zip(p_values, p_values[1:])):
            monotone_bad += 1
        for a in alphas:
            chain = exact_objective_chain(pair, a)
            if not (
                chain.l_perp >= chain.l_alpha_perp - slack
                and chain.l_alpha_perp >= chain.cross_plus_reg - slack
            ):
                chain_bad += 1
                break
        ratios = np.sort(np.exp(_log_ratios(pair)))
        gap = ratios[0] / ratios[1]
        if gap < 0.999:  # strict unique minimizer only
            limit_checked += 1
            tol = bound * (ratios.size - 1) * gap**limit_alpha / limit_alpha + 1e-15
            if abs(p_alpha_exact(pair, limit_alpha) - bound) > tol:
                limit_bad += 1
    return [
        PropertyCheck(
            "softmin lower bound (p_alpha <= min bound)",
            bound_bad == 0,
            f"{num_pairs - bound_bad}/{num_pairs} pairs",
        ),
        PropertyCheck(
            "p_alpha monotone non-decreasing in alpha",
            monotone_bad == 0,
            f"{num_pairs - monotone_bad}/{num_pairs} pairs",
        ),
        PropertyCheck(
            "objective chain ordering",
            chain_bad == 0,
            f"{num_pairs - chain_bad}/{num_pairs} pairs",
        ),
        PropertyCheck(
            "large-alpha limit reaches the min bound",
            limit_bad == 0,
            f"{limit_checked - limit_bad}/{limit_checked} pairs with a strict minimizer",
        ),
    ]
