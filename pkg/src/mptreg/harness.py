"""Training loop, divergence accounting, experiment grid execution, and reports.

Training is plain stochastic gradient ascent on the configured objective with
a fixed learning rate.  A run whose loss or parameters go non-finite is
flagged diverged and scores 0 in every aggregate (the divergence convention);
grids derive per-cell seeds from axis values, so adding a value to one axis
never changes any other cell's results.
"""

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    NoiseSpec,
    STANDARD_NOISE_LEVELS,
    dataset_from_config,
    perturb,
    split,
)
from .metrics import RobustnessCurve, ScoreSample, accuracy, auroc, mean_auroc, robustness_auc
from .netcore import NetworkSpec, forward, backward, init_parameters, spec_from_config
from .objectives import (
    DivergedError,
    Objective,
    ObjectiveConfig,
    batch_loss,
    batch_loss_gradient,
)
from .scores import ScoreKind, score_table

DEFAULT_ALPHA_GRID = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)

_OBJECTIVE_CODES = {Objective.CCE: 0, Objective.JCE: 1, Objective.JI: 2}


@dataclass(frozen=True)
class TrainConfig:
    objective: ObjectiveConfig
    spec: NetworkSpec
    batch_size: int
    epochs: int
    seed: int
    learning_rate: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive and finite, got {self.learning_rate}")


def train(cfg: TrainConfig, train_set: Dataset) -> tuple[np.ndarray, bool]:
    """SGD ascent on the objective; returns (parameters, diverged flag).

    Deterministic given the config seed: initialization and the per-epoch
    shuffles draw from seed-derived streams.  Training stops at the first
    non-finite loss or parameter value.
    """
    n = len(train_set)
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    params = init_parameters(cfg.spec, cfg.seed)
    shuffle_rng = np.random.default_rng([int(cfg.seed) % (1 << 64), 1])
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = train_set.inputs[idx], train_set.labels[idx]
            energies = forward(cfg.spec, params, xb)
            try:
                loss = batch_loss(cfg.objective, energies, yb)
                upstream = batch_loss_gradient(cfg.objective, energies, yb)
            except DivergedError:
                return params, True
            params = params + cfg.learning_rate * backward(cfg.spec, params, xb, upstream)
            if not (math.isfinite(loss.value) and np.isfinite(params).all()):
                return params, True
    return params, False


@dataclass(frozen=True)
class RunRecord:
    """One trained model's metric row; diverged runs carry zeros everywhere."""

    run_id: str
    objective: str
    alpha: float
    batch_size: int
    seed: int
    learning_rate: float
    epochs: int
    diverged: bool
    train_acc: float
    test_acc: float
    robustness_auc: float
    auroc: dict[str, dict[str, float]] = field(default_factory=dict)
    auroc_mean: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0


def _level_seed(noise_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([int(noise_seed) % (1 << 64), index])
    return int(ss.generate_state(1, np.uint64)[0])


def robustness_curve(
    params, spec: NetworkSpec, test_set: Dataset, noise_levels, noise_seed: int = 0
) -> RobustnessCurve:
    """Test accuracy at each noise level, with per-level derived noise seeds."""
    accs = []
    for i, level in enumerate(noise_levels):
        noisy = perturb(test_set, NoiseSpec(level, _level_seed(noise_seed, i)))
        accs.append(accuracy(forward(spec, params, noisy.inputs), noisy.labels))
    return RobustnessCurve(np.asarray(noise_levels, dtype=np.float64), np.asarray(accs))


def ood_aurocs(
    params, spec: NetworkSpec, in_set: Dataset, out_sets, score_kinds
) -> tuple[dict[str, dict[str, float]], dict[str, float]]:
    """Per-(score, out-dataset) AUROC plus the per-score mean over out-datasets."""
    kinds = [ScoreKind(k) for k in score_kinds]
    out_sets = list(out_sets)
    if not out_sets:
        return {}, {}
    in_energies = forward(spec, params, in_set.inputs)
    in_scores = {k: score_table(in_energies, k) for k in kinds}
    table: dict[str, dict[str, float]] = {k.value: {} for k in kinds}
    for out_set in out_sets:
        out_energies = forward(spec, params, out_set.inputs)
        for k in kinds:
            sample = ScoreSample(in_scores[k], score_table(out_energies, k))
            table[k.value][out_set.name] = auroc(sample)
    means = {k.value: mean_auroc(list(table[k.value].values())) for k in kinds}
    return table, means


def evaluate(
    params,
    spec: NetworkSpec,
    test_set: Dataset,
    out_sets,
    score_kinds,
    noise_levels,
    *,
    diverged: bool = False,
    train_set: Dataset | None = None,
    config: TrainConfig | None = None,
    run_id: str = "run",
    noise_seed: int = 0,
    wall_time: float = 0.0,
) -> RunRecord:
    """Fill a full metric row: accuracies, robustness AUC, and OOD AUROCs.

    A diverged run (flagged, or detected from non-finite parameters) records 0
    for every accuracy and AUROC field.  With no out-datasets the AUROC fields
    are absent rather than zero.
    """
    kinds = [ScoreKind(k) for k in score_kinds]
    out_sets = list(out_sets)
    names = [ds.name for ds in out_sets]
    if len(set(names)) != len(names):
        raise ValueError(f"out-dataset names must be unique, got {names}")
    if any(name == "mean" for name in names):
        raise ValueError('out-dataset name "mean" collides with the per-score mean column')
    diverged = diverged or not bool(np.isfinite(np.asarray(params, dtype=np.float64)).all())
    if diverged:
        table = {k.value: {name: 0.0 for name in names} for k in kinds} if out_sets else {}
        means = {k.value: 0.0 for k in kinds} if out_sets else {}
        train_acc = test_acc = rob_auc = 0.0
    else:
        test_acc = accuracy(forward(spec, params, test_set.inputs), test_set.labels)
        train_acc = (
            accuracy(forward(spec, params, train_set.inputs), train_set.labels)
            if train_set is not None
            else 0.0
        )
        rob_auc = robustness_auc(robustness_curve(params, spec, test_set, noise_levels, noise_seed))
        table, means = ood_aurocs(params, spec, test_set, out_sets, kinds)
    return RunRecord(
        run_id=run_id,
        objective=config.objective.kind.value if config else "",
        alpha=config.objective.alpha if config else 0.0,
        batch_size=config.batch_size if config else 0,
        seed=config.seed if config else 0,
        learning_rate=config.learning_rate if config else 0.0,
        epochs=config.epochs if config else 0,
        diverged=diverged,
        train_acc=train_acc,
        test_acc=test_acc,
        robustness_auc=rob_auc,
        auroc=table,
        auroc_mean=means,
        wall_time=wall_time,
    )


@dataclass(frozen=True)
class GridSpec:
    """Axes and shared settings for one experiment grid."""

    objectives: tuple[Objective, ...]
    alpha_grid: tuple[float, ...]
    batch_sizes: tuple[int, ...]
    seed_count: int
    spec: NetworkSpec
    epochs: int
    dataset: object
    out_datasets: tuple = ()
    learning_rate: float = 0.01
    base_seed: int = 0
    train_fraction: float = 0.8
    split_seed: int = 0
    noise_levels: tuple[float, ...] = STANDARD_NOISE_LEVELS
    score_kinds: tuple[ScoreKind, ...] = tuple(ScoreKind)

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(Objective(o) for o in self.objectives))
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        object.__setattr__(self, "batch_sizes", tuple(int(b) for b in self.batch_sizes))
        object.__setattr__(self, "noise_levels", tuple(float(x) for x in self.noise_levels))
        object.__setattr__(self, "score_kinds", tuple(ScoreKind(k) for k in self.score_kinds))
        object.__setattr__(self, "out_datasets", tuple(self.out_datasets))
        for axis in ("objectives", "alpha_grid", "batch_sizes", "score_kinds"):
            if not getattr(self, axis):
                raise ValueError(f"grid axis {axis} must be nonempty")
        if self.seed_count < 1:
            raise ValueError(f"seed_count must be positive, got {self.seed_count}")

    @property
    def total_runs(self) -> int:
        return (
            len(self.objectives) * len(self.alpha_grid) * len(self.batch_sizes) * self.seed_count
        )


def _cell_seeds(base_seed, objective, alpha, batch_size, replicate) -> tuple[int, int]:
    # Value-based entropy: inserting new axis values leaves other cells' seeds intact.
    entropy = [
        int(base_seed) % (1 << 64),
        _OBJECTIVE_CODES[objective],
        int(np.float64(alpha).view(np.uint64)),
        int(batch_size),
        int(replicate),
    ]
    state = np.random.SeedSequence(entropy).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


@dataclass(frozen=True)
class _Cell:
    run_id: str
    config: TrainConfig
    noise_seed: int


def _grid_cells(grid: GridSpec) -> list[_Cell]:
    cells = []
    for objective in grid.objectives:
        for alpha in grid.alpha_grid:
            for batch_size in grid.batch_sizes:
                for rep in range(grid.seed_count):
                    train_seed, noise_seed = _cell_seeds(
                        grid.base_seed, objective, alpha, batch_size, rep
                    )
                    cfg = TrainConfig(
                        objective=ObjectiveConfig(objective, alpha),
                        spec=grid.spec,
                        batch_size=batch_size,
                        epochs=grid.epochs,
                        seed=train_seed,
                        learning_rate=grid.learning_rate,
                    )
                    run_id = f"{objective.value}_a{alpha:g}_b{batch_size}_r{rep}"
                    cells.append(_Cell(run_id, cfg, noise_seed))
    return cells


def _execute_cell(cell: _Cell, train_set, test_set, out_sets, noise_levels, score_kinds):
    try:
        started = time.perf_counter()
        params, diverged = train(cell.config, train_set)
        record = evaluate(
            params,
            cell.config.spec,
            test_set,
            out_sets,
            score_kinds,
            noise_levels,
            diverged=diverged,
            train_set=train_set,
            config=cell.config,
            run_id=cell.run_id,
            noise_seed=cell.noise_seed,
            wall_time=time.perf_counter() - started,
        )
        return record, None
    except Exception as exc:  # infrastructure failure: record it, keep the grid going
        return None, f"{type(exc).__name__}: {exc}"


@dataclass(frozen=True)
class GridResult:
    records: tuple[RunRecord, ...]
    report: dict
    score_kinds: tuple[ScoreKind, ...]
    out_names: tuple[str, ...]


def _materialize(ref) -> Dataset:
    return ref if isinstance(ref, Dataset) else dataset_from_config(ref)


def run_grid(grid: GridSpec, jobs: int = 1) -> GridResult:
    """Execute every grid cell and aggregate the results.

    Cells are independent; ``jobs > 1`` runs them in worker processes.  A
    cell's infrastructure failure is recorded in the report and the grid
    continues.
    """
    dataset = _materialize(grid.dataset)
    out_sets = [_materialize(ref) for ref in grid.out_datasets]
    train_set, test_set = split(dataset, grid.train_fraction, grid.split_seed)
    cells = _grid_cells(grid)
    runner = partial(
        _execute_cell,
        train_set=train_set,
        test_set=test_set,
        out_sets=out_sets,
        noise_levels=grid.noise_levels,
        score_kinds=grid.score_kinds,
    )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(runner, cells))
    else:
        outcomes = [runner(cell) for cell in cells]
    records = []
    failures = []
    for cell, (record, error) in zip(cells, outcomes):
        if record is not None:
            records.append(record)
        else:
            failures.append({"run_id": cell.run_id, "error": error})
    report = aggregate_report(records, failures)
    return GridResult(
        records=tuple(records),
        report=report,
        score_kinds=grid.score_kinds,
        out_names=tuple(ds.name for ds in out_sets),
    )


def _stats(values) -> dict[str, float]:
    v = np.asarray(values, dtype=np.float64)
    return {"max": float(v.max()), "mean": float(v.mean()), "std": float(v.std())}


def _group_entry(records: list[RunRecord]) -> dict:
    entry = {
        "runs": len(records),
        "diverged": sum(r.diverged for r in records),
        "train_acc": _stats([r.train_acc for r in records]),
        "test_acc": _stats([r.test_acc for r in records]),
        "robustness_auc": _stats([r.robustness_auc for r in records]),
    }
    kinds = [k.value for k in ScoreKind if any(k.value in r.auroc_mean for r in records)]
    entry["auroc"] = {
        kind: _stats([r.auroc_mean.get(kind, 0.0) for r in records]) for kind in kinds
    }
    return entry


def aggregate_report(records, failures=()) -> dict:
    """Per-(objective, alpha) and per-objective max/mean/std tables, diverged counts included.

    Diverged runs enter every mean as 0, mirroring their zeroed records; the
    diverged counts make that convention auditable.
    """
    records = list(records)
    by_pair: dict[tuple[str, float], list[RunRecord]] = {}
    by_objective: dict[str, list[RunRecord]] = {}
    for r in records:
        by_pair.setdefault((r.objective, r.alpha), []).append(r)
        by_objective.setdefault(r.objective, []).append(r)
    report = {
        "total_runs": len(records),
        "diverged_runs": sum(r.diverged for r in records),
        "per_objective_alpha": [
            {"objective": obj, "alpha": alpha, **_group_entry(group)}
            for (obj, alpha), group in sorted(by_pair.items())
        ],
        "per_objective": [
            {"objective": obj, **_group_entry(group)}
            for obj, group in sorted(by_objective.items())
        ],
        "failures": list(failures),
    }
    return report


def render_report(report: dict) -> str:
    """Plain-text rendering of an aggregate report."""
    lines = [
        f"runs: {report['total_runs']}   diverged: {report['diverged_runs']}"
        f"   failures: {len(report['failures'])}"
    ]
    for scope, key in (("objective x alpha", "per_objective_alpha"), ("objective", "per_objective")):
        lines.append(f"-- by {scope} --")
        for entry in report[key]:
            head = entry["objective"]
            if "alpha" in entry:
                head += f" alpha={entry['alpha']:g}"
            test = entry["test_acc"]
            lines.append(
                f"{head:24s} runs={entry['runs']:3d} div={entry['diverged']:2d} "
                f"test_acc max={test['max']:.3f} mean={test['mean']:.3f} std={test['std']:.3f} "
                f"rob_auc mean={entry['robustness_auc']['mean']:.3f}"
            )
            for kind, stats in entry["auroc"].items():
                lines.append(
                    f"{'':24s} auroc[{kind}] mean={stats['mean']:.3f} "
                    f"std={stats['std']:.3f} max={stats['max']:.3f}"
                )
    for failure in report["failures"]:
        lines.append(f"FAILED {failure['run_id']}: {failure['error']}")
    return "\n".join(lines)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def csv_columns(score_kinds, out_names) -> list[str]:
    kinds = [ScoreKind(k).value for k in score_kinds]
    cols = [
        "run_id",
        "objective",
        "alpha",
        "batch_size",
        "seed",
        "learning_rate",
        "epochs",
        "diverged",
        "train_acc",
        "test_acc",
        "robustness_auc",
    ]
    cols += [f"auroc_{kind}_{name}" for kind in kinds for name in out_names]
    cols += [f"auroc_{kind}_mean" for kind in kinds]
    cols.append("wall_time")
    return cols


def write_results_csv(records, path, score_kinds, out_names) -> None:
    """Write the results table; floats carry 6 decimal places, diverged is 0/1."""
    kinds = [ScoreKind(k).value for k in score_kinds]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_columns(kinds, out_names))
        for r in records:
            row = [
                r.run_id,
                r.objective,
                _fmt(r.alpha),
                str(r.batch_size),
                str(r.seed),
                _fmt(r.learning_rate),
                str(r.epochs),
                "1" if r.diverged else "0",
                _fmt(r.train_acc),
                _fmt(r.test_acc),
                _fmt(r.robustness_auc),
            ]
            row += [_fmt(r.auroc.get(kind, {}).get(name, 0.0)) for kind in kinds for name in out_names]
            row += [_fmt(r.auroc_mean.get(kind, 0.0)) for kind in kinds]
            row.append(_fmt(r.wall_time))
            writer.writerow(row)


def read_results_csv(path) -> list[RunRecord]:
    """Parse a results CSV back into records (floats as printed, 6 decimals)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    kind_names = sorted((k.value for k in ScoreKind), key=len, reverse=True)
    records = []
    for row in rows:
        table: dict[str, dict[str, float]] = {}
        means: dict[str, float] = {}
        for col, raw in row.items():
            if not col.startswith("auroc_"):
                continue
            rest = col[len("auroc_") :]
            for kind in kind_names:
                if rest == f"{kind}_mean":
                    means[kind] = float(raw)
                    break
                if rest.startswith(f"{kind}_"):
                    table.setdefault(kind, {})[rest[len(kind) + 1 :]] = float(raw)
                    break
        records.append(
            RunRecord(
                run_id=row["run_id"],
                objective=row["objective"],
                alpha=float(row["alpha"]),
                batch_size=int(row["batch_size"]),
                seed=int(row["seed"]),
                learning_rate=float(row["learning_rate"]),
                epochs=int(row["epochs"]),
                diverged=row["diverged"] == "1",
                train_acc=float(row["train_acc"]),
                test_acc=float(row["test_acc"]),
                robustness_auc=float(row["robustness_auc"]),
                auroc=table,
                auroc_mean=means,
                wall_time=float(row["wall_time"]),
            )
        )
    return records


def train_config_from_dict(d: dict) -> TrainConfig:
    """Build a TrainConfig from its JSON dict form."""
    return TrainConfig(
        objective=ObjectiveConfig(d["objective"]["kind"], d["objective"]["alpha"]),
        spec=spec_from_config(d["spec"]),
        batch_size=d["batch_size"],
        epochs=d["epochs"],
        seed=d["seed"],
        learning_rate=d.get("learning_rate", 0.01),
    )


def grid_spec_from_dict(d: dict) -> GridSpec:
    """Build a GridSpec from its JSON dict form; dataset references stay as dicts."""
    return GridSpec(
        objectives=tuple(Objective(o) for o in d["objectives"]),
        alpha_grid=tuple(d.get("alpha_grid", DEFAULT_ALPHA_GRID)),
        batch_sizes=tuple(d["batch_sizes"]),
        seed_count=d["seed_count"],
        spec=spec_from_config(d["spec"]),
        epochs=d["epochs"],
        dataset=d["dataset"],
        out_datasets=tuple(d.get("out_datasets", ())),
        learning_rate=d.get("learning_rate", 0.01),
        base_seed=d.get("base_seed", 0),
        train_fraction=d.get("train_fraction", 0.8),
        split_seed=d.get("split_seed", 0),
        noise_levels=tuple(d.get("noise_levels", STANDARD_NOISE_LEVELS)),
        score_kinds=tuple(ScoreKind(k) for k in d.get("score_kinds", [k.value for k in ScoreKind])),
    )
