"""Command-line entry point: ``labelmend <command> ...``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import metrics, segnet
from .data import ConfigError, LoadError, load_dataset, load_masks, parse_config
from .pipeline import (PipelineReport, correction_round, evaluation_rows,
                       run_pipeline, save_correction, save_round, train_round)
from .synth import NoiseSpec, write_synthetic

log = logging.getLogger("labelmend")

SWEEP_PARAMS = {"beta": float, "num_passes": int, "tau": float}
ABLATIONS = (
    ("full", {}),
    ("w/o pixel weights", {"ablate_pixel_weights": True}),
    ("w/o image weights", {"ablate_image_weights": True}),
    ("w/o retraining", {"ablate_retrain": True}),
)


class UsageError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0 or h % 4 or w % 4:
        raise argparse.ArgumentTypeError(f"size {text} must be positive and divisible by 4")
    return h, w


def _run_dir(args) -> Path:
    return Path(args.runs_root) / args.run


def _config(args):
    config = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.replace(seed=args.seed)
    if getattr(args, "tau", None) is not None:
        config = config.replace(tau=args.tau)
    return config


def _datasets(args, k):
    train = load_dataset(args.data, k)
    test = load_dataset(args.test, k) if getattr(args, "test", None) else None
    return train, test


def final_stage(report: PipelineReport) -> str:
    return "pred_corrected" if "pred_corrected" in report.stages else "pred_noisy"


def _final_rows(report: PipelineReport):
    stage = final_stage(report)
    rows = [r for r in report.rows if r["stage"] == stage]
    if not rows:
        raise LoadError("no ground truth available to score the final model")
    return rows


def _print_rows(rows):
    for r in rows:
        cells = " ".join(f"{c}={metrics._fmt(r[c])}" for c in metrics.METRIC_COLUMNS[1:])
        print(f"{r['stage']:>15} {cells}")


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    h, w = args.size
    spec = NoiseSpec(severity=args.severity, severe_fraction=args.severe_frac)
    out = Path(args.out)
    write_synthetic(out, args.n, h, w, args.seed, spec, stream=0, prefix="s")
    if args.test_n:
        write_synthetic(out / "test", args.test_n, h, w, args.seed, spec,
                        stream=1, prefix="t")
    print(f"wrote {args.n} samples to {out}")


def cmd_pipeline(args):
    config = _config(args)
    train, test = _datasets(args, config.k)
    report = run_pipeline(train, config, _run_dir(args), test, args.clean_baseline)
    _print_rows(report.rows)


def cmd_train(args):
    config = _config(args)
    dataset = load_dataset(args.data, config.k)
    labels = {s.id: s.pseudo for s in dataset.samples}
    if args.labels:
        labels = load_masks(args.labels, dataset.ids, config.k, "pseudo")
    run_dir = _run_dir(args)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(config.to_text())
    params, history = train_round(dataset, labels, config, 0)
    save_round(run_dir, 0, params, history)
    print(f"saved {run_dir / 'model_round0.bin'}")


def _round_labels(run_dir, dataset, config, r):
    if r == 1:
        return {s.id: s.pseudo for s in dataset.samples}
    return load_masks(run_dir / "corrected_labels", dataset.ids, config.k, "corrected")


def cmd_correct(args):
    config = _config(args)
    dataset = load_dataset(args.data, config.k)
    run_dir = _run_dir(args)
    r = args.round
    params = segnet.load_params(run_dir / f"model_round{r - 1}.bin")
    labels = _round_labels(run_dir, dataset, config, r)
    new_labels, confidences, entries = correction_round(params, dataset, labels, config, r)
    save_correction(run_dir, new_labels, confidences, entries, append=r > 1)
    total = sum(e.corrected for e in entries)
    print(f"corrected {total} pixels over {len(entries)} images")


def cmd_retrain(args):
    config = _config(args)
    dataset = load_dataset(args.data, config.k)
    run_dir = _run_dir(args)
    labels = load_masks(run_dir / "corrected_labels", dataset.ids, config.k, "corrected")
    params, history = train_round(dataset, labels, config, args.round)
    save_round(run_dir, args.round, params, history)
    print(f"saved {run_dir / f'model_round{args.round}.bin'}")


def cmd_eval(args):
    dataset = load_dataset(args.data, args.k)
    if not dataset.has_ground_truth:
        log.warning("%s has no ground_truth/: nothing to evaluate", args.data)
        return
    gts = [s.ground_truth for s in dataset.samples]
    if args.model:
        rows = evaluation_rows(args.stage, segnet.load_params(args.model), dataset)
    else:
        cands = load_masks(args.labels, dataset.ids, args.k, "prediction")
        rows = metrics.stage_rows(args.stage, [cands[i] for i in dataset.ids], gts)
    if args.out:
        metrics.write_rows(rows, args.out)
    _print_rows(rows)


def cmd_sweep(args):
    config = _config(args)
    train, test = _datasets(args, config.k)
    cast = SWEEP_PARAMS[args.param]
    try:
        values = [(v.strip(), cast(v)) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values: cannot parse {args.values!r}") from None
    if not values:
        raise UsageError("--values is empty")
    root = _run_dir(args)
    rows = []
    for text, value in values:
        cfg = config.replace(**{args.param: value})
        report = run_pipeline(train, cfg, root / f"{args.param}={text}", test)
        for r in _final_rows(report):
            rows.append({"value": text, "class": r["class"],
                         "acc": r["acc"], "dice": r["dice"]})
    metrics.write_rows(rows, root / "sweep.csv", ("value", "class", "acc", "dice"))
    print(f"wrote {root / 'sweep.csv'}")


def cmd_ablate(args):
    config = _config(args)
    train, test = _datasets(args, config.k)
    root = _run_dir(args)
    rows = []
    for i, (name, flags) in enumerate(ABLATIONS):
        report = run_pipeline(train, config.replace(**flags), root / f"ablation{i}", test)
        for r in _final_rows(report):
            rows.append({"configuration": name, "class": r["class"],
                         "acc": r["acc"], "dice": r["dice"]})
    metrics.write_rows(rows, root / "ablation.csv", ("configuration", "class", "acc", "dice"))
    print(f"wrote {root / 'ablation.csv'}")


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelmend",
                                     description="pseudo-label correction for segmentation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with noisy labels")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=_size, default=(32, 32))
    p.add_argument("--severity", type=float, default=0.5)
    p.add_argument("--severe-frac", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-n", type=int, default=0,
                   help="also write a held-out set of this size to OUT/test")
    p.set_defaults(func=cmd_synth)

    def run_args(p, test=True):
        p.add_argument("--data", required=True)
        p.add_argument("--config", required=True)
        p.add_argument("--run", required=True)
        p.add_argument("--runs-root", default="runs")
        p.add_argument("--seed", type=int)
        if test:
            p.add_argument("--test", help="held-out dataset used for scoring")

    p = sub.add_parser("pipeline", help="train, correct and retrain end to end")
    run_args(p)
    p.add_argument("--clean-baseline", action="store_true",
                   help="also train on ground truth (stage pred_clean)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("train", help="round-0 training on pseudo labels")
    run_args(p, test=False)
    p.add_argument("--labels", help="train on this label directory instead")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("correct", help="MC-dropout confidence and label correction")
    run_args(p, test=False)
    p.add_argument("--round", type=int, default=1)
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("retrain", help="train a fresh network on corrected labels")
    run_args(p, test=False)
    p.add_argument("--round", type=int, default=1)
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("eval", help="score labels or a model against ground_truth/")
    p.add_argument("--data", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--labels")
    src.add_argument("--model")
    p.add_argument("--stage", default="pseudo", choices=metrics.STAGES)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the pipeline over values of one parameter")
    run_args(p)
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="full pipeline and its three ablations")
    run_args(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def _thread_limit():
    value = os.environ.get("LABELMEND_THREADS")
    if not value:
        return contextlib.nullcontext()
    return threadpool_limits(limits=max(1, int(value)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"labelmend: error: {exc}", file=sys.stderr)
        return 2
    except (LoadError, ConfigError, OSError, ValueError) as exc:
        print(f"labelmend: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
