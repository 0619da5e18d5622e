"""Label-quality rates and per-class segmentation scores.

All dataset-level numbers pool pixel counts over every image before
dividing (micro-average).  Rates are reported in percent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .data import LabelMask

Masks = Union[LabelMask, Sequence[LabelMask]]

STAGES = ("pseudo", "corrected", "pred_noisy", "pred_corrected", "pred_clean")
METRIC_COLUMNS = ("stage", "class", "tp", "fp", "tn", "fn", "acc", "dice")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LabelQuality:
    tp_rate: float
    fp_rate: float
    tn_rate: float
    fn_rate: float


@dataclass(frozen=True)
class ClassScore:
    accuracy: float
    dice: float


@dataclass(frozen=True)
class SegScore:
    classes: tuple[ClassScore, ...]

    def __getitem__(self, cls: int) -> ClassScore:
        return self.classes[cls]


def _as_list(masks: Masks) -> list[LabelMask]:
    return [masks] if isinstance(masks, LabelMask) else list(masks)


def _pairs(candidates: Masks, gts: Masks):
    cands, refs = _as_list(candidates), _as_list(gts)
    if len(cands) != len(refs):
        raise MetricError("different number of candidate and reference masks")
    for c, g in zip(cands, refs):
        if c.shape != g.shape:
            raise MetricError(f"dimension mismatch: {c.shape} vs {g.shape}")
    return cands, refs


def confusion_counts(candidates: Masks, gts: Masks, positive: int = 1):
    """Pooled (tp, fp, tn, fn) pixel counts treating ``positive`` as foreground."""
    tp = fp = tn = fn = 0
    for c, g in zip(*_pairs(candidates, gts)):
        cp, gp = c.data == positive, g.data == positive
        tp += int(np.sum(cp & gp))
        fp += int(np.sum(cp & ~gp))
        tn += int(np.sum(~cp & ~gp))
        fn += int(np.sum(~cp & gp))
    return tp, fp, tn, fn


def label_quality(candidates: Masks, gts: Masks) -> LabelQuality:
    """TP/FN rates over ground-truth foreground, FP/TN over ground-truth background."""
    cands, refs = _pairs(candidates, gts)
    for m in cands + refs:
        if m.k != 2:
            raise MetricError("label quality is defined for binary masks only")
    tp, fp, tn, fn = confusion_counts(cands, refs)
    if tp + fn == 0:
        raise MetricError("ground truth has no foreground pixels (class 1 empty)")
    if fp + tn == 0:
        raise MetricError("ground truth has no background pixels (class 0 empty)")
    tp_rate = 100.0 * tp / (tp + fn)
    fp_rate = 100.0 * fp / (fp + tn)
    return LabelQuality(tp_rate, fp_rate, 100.0 - fp_rate, 100.0 - tp_rate)


def seg_score(preds: Masks, gts: Masks) -> SegScore:
    """Per-class recall ("accuracy") and Dice; NaN where the class is absent."""
    preds, refs = _pairs(preds, gts)
    k = refs[0].k
    inter = np.zeros(k)
    n_pred = np.zeros(k)
    n_gt = np.zeros(k)
    for p, g in zip(preds, refs):
        inter += np.bincount(g.data[p.data == g.data].ravel(), minlength=k)[:k]
        n_pred += np.bincount(p.data.ravel(), minlength=k)[:k]
        n_gt += np.bincount(g.data.ravel(), minlength=k)[:k]
    classes = []
    for l in range(k):
        if n_gt[l] == 0:
            classes.append(ClassScore(math.nan, math.nan))
            continue
        classes.append(ClassScore(100.0 * inter[l] / n_gt[l],
                                  200.0 * inter[l] / (n_pred[l] + n_gt[l])))
    return SegScore(tuple(classes))


def stage_rows(stage: str, candidates: Masks, gts: Masks) -> list[dict]:
    """metrics.csv rows for one stage, one per class.

    The tp/fp/tn/fn columns treat the row's class as the positive class; on
    the foreground row of a binary task they equal ``label_quality``.
    """
    cands, refs = _pairs(candidates, gts)
    score = seg_score(cands, refs)
    rows = []
    for l, cls in enumerate(score.classes):
        tp, fp, tn, fn = confusion_counts(cands, refs, positive=l)
        pos, neg = tp + fn, fp + tn
        rows.append({
            "stage": stage, "class": l,
            "tp": 100.0 * tp / pos if pos else math.nan,
            "fp": 100.0 * fp / neg if neg else math.nan,
            "tn": 100.0 * tn / neg if neg else math.nan,
            "fn": 100.0 * fn / pos if pos else math.nan,
            "acc": cls.accuracy, "dice": cls.dice,
        })
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.2f}"
    return str(value)


def write_rows(rows: Sequence[dict], path, columns: Sequence[str] = METRIC_COLUMNS):
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def read_rows(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
