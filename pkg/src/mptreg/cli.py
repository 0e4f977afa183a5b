"""Command-line entry points: train, evaluate, ood, robustness, grid, report, verify."""

import argparse
import json
import sys
from pathlib import Path

from .data import STANDARD_NOISE_LEVELS, dataset_from_config, split
from .harness import (
    evaluate,
    grid_spec_from_dict,
    read_results_csv,
    render_report,
    aggregate_report,
    robustness_curve,
    ood_aurocs,
    run_grid,
    train,
    train_config_from_dict,
    write_results_csv,
)
from .metrics import robustness_auc
from .netcore import load_checkpoint, save_checkpoint
from .objectives import verify_exact_properties
from .scores import ScoreKind


def _load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _in_test_split(cfg: dict):
    """Resolve the in-distribution dataset and its test side from a config dict."""
    dataset = dataset_from_config(cfg["dataset"])
    fraction = cfg.get("train_fraction")
    if fraction is None:
        return None, dataset
    return split(dataset, fraction, cfg.get("split_seed", 0))


def _write_json(out_dir, name, payload) -> None:
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / name, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    train_cfg = train_config_from_dict(cfg["train"])
    if args.seed is not None:
        train_cfg = train_config_from_dict({**cfg["train"], "seed": args.seed})
    train_set, test_set = _in_test_split(cfg)
    if train_set is None:
        print("train requires a train_fraction in the config", file=sys.stderr)
        return 2
    params, diverged = train(train_cfg, train_set)
    record = evaluate(
        params,
        train_cfg.spec,
        test_set,
        out_sets=(),
        score_kinds=tuple(ScoreKind),
        noise_levels=cfg.get("noise_levels", STANDARD_NOISE_LEVELS),
        diverged=diverged,
        train_set=train_set,
        config=train_cfg,
        run_id=cfg.get("run_id", "train"),
        noise_seed=cfg.get("noise_seed", 0),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "checkpoint.mptf"
    save_checkpoint(checkpoint, train_cfg.spec, params)
    summary = {
        "run_id": record.run_id,
        "diverged": record.diverged,
        "train_acc": record.train_acc,
        "test_acc": record.test_acc,
        "robustness_auc": record.robustness_auc,
        "checkpoint": str(checkpoint),
    }
    _write_json(out_dir, "train_summary.json", summary)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    spec, params = load_checkpoint(args.checkpoint)
    train_set, test_set = _in_test_split(cfg)
    out_sets = [dataset_from_config(ref) for ref in cfg.get("out_datasets", [])]
    score_kinds = [ScoreKind(k) for k in cfg.get("score_kinds", [k.value for k in ScoreKind])]
    train_cfg = train_config_from_dict(cfg["train"]) if "train" in cfg else None
    record = evaluate(
        params,
        spec,
        test_set,
        out_sets,
        score_kinds,
        cfg.get("noise_levels", STANDARD_NOISE_LEVELS),
        train_set=train_set,
        config=train_cfg,
        run_id=cfg.get("run_id", "evaluate"),
        noise_seed=cfg.get("noise_seed", 0),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(
        [record], out_dir / "results.csv", score_kinds, [ds.name for ds in out_sets]
    )
    print(f"test_acc={record.test_acc:.6f} robustness_auc={record.robustness_auc:.6f}")
    for kind, per_out in record.auroc.items():
        for name, value in per_out.items():
            print(f"auroc[{kind}][{name}]={value:.6f}")
    for kind, value in record.auroc_mean.items():
        print(f"auroc[{kind}][mean]={value:.6f}")
    return 0


def _cmd_ood(args) -> int:
    cfg = _load_config(args.config)
    spec, params = load_checkpoint(args.checkpoint)
    _, test_set = _in_test_split(cfg)
    out_sets = [dataset_from_config(ref) for ref in cfg["out_datasets"]]
    score_kinds = [ScoreKind(k) for k in cfg.get("score_kinds", [k.value for k in ScoreKind])]
    table, means = ood_aurocs(params, spec, test_set, out_sets, score_kinds)
    payload = {"auroc": table, "auroc_mean": means}
    _write_json(args.out, "ood.json", payload)
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_robustness(args) -> int:
    cfg = _load_config(args.config)
    spec, params = load_checkpoint(args.checkpoint)
    _, test_set = _in_test_split(cfg)
    levels = cfg.get("noise_levels", STANDARD_NOISE_LEVELS)
    noise_seed = args.seed if args.seed is not None else cfg.get("noise_seed", 0)
    curve = robustness_curve(params, spec, test_set, levels, noise_seed)
    payload = {
        "levels": [float(x) for x in curve.levels],
        "accuracies": [float(x) for x in curve.accuracies],
        "robustness_auc": robustness_auc(curve),
    }
    _write_json(args.out, "robustness.json", payload)
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_grid(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["base_seed"] = args.seed
    grid = grid_spec_from_dict(cfg)
    result = run_grid(grid, jobs=args.jobs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(result.records, out_dir / "results.csv", result.score_kinds, result.out_names)
    _write_json(out_dir, "report.json", result.report)
    print(render_report(result.report))
    return 1 if result.report["failures"] else 0


def _cmd_report(args) -> int:
    records = read_results_csv(args.results_csv)
    report = aggregate_report(records)
    _write_json(args.out, "report.json", report)
    print(render_report(report))
    return 0


def _cmd_verify(args) -> int:
    checks = verify_exact_properties(num_pairs=args.pairs, seed=args.seed or 0)
    ok = True
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        ok &= check.passed
        print(f"[{status}] {check.name}: {check.detail}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mptreg",
        description="Maximum-probability regularized energy-based classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, *, config=True, out_required=False, checkpoint=False):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", required=True, help="JSON config file")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint file (.mptf)")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")
        else:
            p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.set_defaults(fn=fn)
        return p

    add("train", _cmd_train, "train one model and save a checkpoint", out_required=True)
    add(
        "evaluate",
        _cmd_evaluate,
        "full metric row for a checkpoint",
        out_required=True,
        checkpoint=True,
    )
    add("ood", _cmd_ood, "OOD AUROC table for a checkpoint", checkpoint=True)
    add("robustness", _cmd_robustness, "noise robustness curve for a checkpoint", checkpoint=True)
    add("grid", _cmd_grid, "run an experiment grid", out_required=True)
    report_p = add("report", _cmd_report, "aggregate a results CSV", config=False)
    report_p.add_argument("results_csv", help="results CSV produced by grid/evaluate")
    verify_p = add("verify", _cmd_verify, "exact-distribution property suite", config=False)
    verify_p.add_argument("--pairs", type=int, default=1000, help="random distribution triples")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
