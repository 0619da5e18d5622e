"""Train, correct, retrain: the end-to-end pipeline and its run directory.

Run directory layout::

    config.txt  model_round<r>.bin  history_round<r>.csv  confidence/<id>.pgm
    corrected_labels/<id>.pgm  corrections.csv  metrics.csv  report.json
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics, segnet
from .confidence import confidence_map
from .correct import CorrectionEntry, correct_labels, write_corrections
from .data import Dataset, LabelMask, RunConfig, save_masks, write_pgm
from .trainer import TrainHistory, train

log = logging.getLogger(__name__)


@dataclass
class PipelineReport:
    config: RunConfig
    seed: int
    rows: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    models: list = field(default_factory=list)
    histories: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    corrections: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def stages(self) -> list[str]:
        seen = []
        for row in self.rows:
            if row["stage"] not in seen:
                seen.append(row["stage"])
        return seen

    @property
    def final_model(self):
        return self.models[-1]

    def score(self, stage: str, cls: int = 1, column: str = "dice") -> float:
        for row in self.rows:
            if row["stage"] == stage and row["class"] == cls:
                return row[column]
        raise KeyError(f"no {stage!r} row for class {cls}")


def image_seed(seed: int, round_index: int, position: int) -> int:
    """Base seed of one image's MC-dropout passes."""
    state = np.random.SeedSequence([int(seed), int(round_index), int(position)])
    return int(state.generate_state(1, np.uint64)[0] >> np.uint64(1))


def correction_round(params, dataset: Dataset, labels: dict, config: RunConfig,
                     round_index: int):
    """Confidence maps and corrected labels for every training image."""
    new_labels, confidences, entries = {}, {}, []
    for pos, sample in enumerate(dataset.samples):
        conf, reference = confidence_map(params, sample.image, config.num_passes,
                                         config.p_drop,
                                         image_seed(config.seed, round_index, pos))
        current = labels[sample.id]
        if current.provenance == "ground_truth":
            current = current.with_provenance("pseudo")
        corrected, entry = correct_labels(current, reference, conf, config.tau, sample.id)
        new_labels[sample.id] = corrected
        confidences[sample.id] = conf
        entries.append(entry)
    return new_labels, confidences, entries


def train_round(dataset: Dataset, labels: dict, config: RunConfig, round_index: int):
    """Round r trains a fresh network initialised from seed + r."""
    return train(dataset, labels, config, config.seed + round_index)


def evaluation_rows(stage: str, params, dataset: Dataset) -> list[dict]:
    preds = segnet.predict_batch(params, dataset.images())
    return metrics.stage_rows(stage, preds, [s.ground_truth for s in dataset.samples])


def save_round(run_dir: Path, r: int, params, history: TrainHistory) -> None:
    segnet.save_params(params, run_dir / f"model_round{r}.bin")
    history.write_csv(run_dir / f"history_round{r}.csv")


def save_correction(run_dir: Path, labels, confidences, entries, append: bool) -> None:
    save_masks(labels, run_dir / "corrected_labels")
    conf_dir = run_dir / "confidence"
    conf_dir.mkdir(parents=True, exist_ok=True)
    for sid, conf in confidences.items():
        write_pgm(conf, conf_dir / f"{sid}.pgm")
    write_corrections(entries, run_dir / "corrections.csv", append=append)


def run_pipeline(dataset: Dataset, config: RunConfig, run_dir=None,
                 test: Optional[Dataset] = None,
                 clean_baseline: bool = False) -> PipelineReport:
    """Round 0 on pseudo labels, then ``rounds`` of correct-and-retrain.

    Predictions are scored on ``test`` when given, otherwise on the training
    images; label-quality stages need training ground truth.
    """
    report = PipelineReport(config, config.seed)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(config.to_text())
        (run_dir / "corrections.csv").unlink(missing_ok=True)
    eval_set = test if test is not None else dataset
    have_train_gt = dataset.has_ground_truth
    have_eval_gt = eval_set.has_ground_truth
    if not have_train_gt:
        report.warnings.append("training set has no ground_truth/: label quality omitted")
    if not have_eval_gt:
        report.warnings.append("evaluation set has no ground_truth/: scores omitted")

    labels = {s.id: s.pseudo for s in dataset.samples}
    report.labels.append(labels)

    def timed(name, fn, *args):
        start = time.perf_counter()
        out = fn(*args)
        report.timings[name] = time.perf_counter() - start
        log.info("%s done in %.1fs", name, report.timings[name])
        return out

    params, history = timed("train_round0", train_round, dataset, labels, config, 0)
    report.models.append(params)
    report.histories.append(history)
    if run_dir is not None:
        save_round(run_dir, 0, params, history)

    for r in range(1, config.rounds + 1):
        labels, confidences, entries = timed(
            f"correct_round{r}", correction_round, report.models[-1], dataset,
            labels, config, r)
        report.labels.append(labels)
        report.corrections.append(entries)
        if run_dir is not None:
            save_correction(run_dir, labels, confidences, entries, append=r > 1)
        if config.ablate_retrain:
            break
        params, history = timed(f"train_round{r}", train_round, dataset, labels, config, r)
        report.models.append(params)
        report.histories.append(history)
        if run_dir is not None:
            save_round(run_dir, r, params, history)

    gts = [s.ground_truth for s in dataset.samples]
    if have_train_gt:
        report.rows += metrics.stage_rows("pseudo", [s.pseudo for s in dataset.samples], gts)
        if len(report.labels) > 1:
            final = report.labels[-1]
            report.rows += metrics.stage_rows("corrected", [final[i] for i in dataset.ids], gts)
    if have_eval_gt:
        report.rows += evaluation_rows("pred_noisy", report.models[0], eval_set)
        if len(report.models) > 1:
            report.rows += evaluation_rows("pred_corrected", report.models[-1], eval_set)
    if clean_baseline and have_train_gt and have_eval_gt:
        clean = {s.id: s.ground_truth for s in dataset.samples}
        params, _ = timed("train_clean", train, dataset, clean, config, config.seed)
        report.rows += evaluation_rows("pred_clean", params, eval_set)

    if run_dir is not None:
        metrics.write_rows(report.rows, run_dir / "metrics.csv")
        write_report_json(report, run_dir / "report.json")
    for message in report.warnings:
        log.warning(message)
    return report


def write_report_json(report: PipelineReport, path) -> None:
    payload = {
        "seed": report.seed,
        "stages": report.stages,
        "timings_s": report.timings,
        "warnings": report.warnings,
        "config": report.config.to_text().splitlines(),
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
