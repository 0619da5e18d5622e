"""Confidence-gated correction of pseudo labels."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import ConfidenceMap, LabelMask


@dataclass(frozen=True)
class CorrectionEntry:
    id: str
    candidates: int
    corrected: int
    mean_cs_corrected: float


def correct_labels(pseudo: LabelMask, reference: LabelMask, conf: ConfidenceMap,
                   tau: float, sample_id: str = "") -> tuple[LabelMask, CorrectionEntry]:
    """Adopt the network's label where it disagrees with the pseudo label and
    its confidence is at least ``tau``; keep the pseudo label elsewhere."""
    if pseudo.provenance not in ("pseudo", "corrected"):
        raise ValueError(f"cannot correct a mask with provenance {pseudo.provenance!r}")
    if not (pseudo.shape == reference.shape == conf.shape):
        raise ValueError("pseudo label, prediction and confidence map differ in shape")
    cs = conf.data
    mismatch = pseudo.data != reference.data
    change = mismatch & (cs >= tau)
    new = np.where(change, reference.data, pseudo.data)
    n_changed = int(change.sum())
    mean_cs = float(cs[change].mean()) if n_changed else float("nan")
    entry = CorrectionEntry(sample_id, int(mismatch.sum()), n_changed, mean_cs)
    return LabelMask(new, pseudo.k, "corrected"), entry


def write_corrections(entries: Iterable[CorrectionEntry], path, append: bool = False):
    path = Path(path)
    write_header = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if write_header:
            writer.writerow(["id", "candidates", "corrected", "mean_cs_corrected"])
        for e in entries:
            writer.writerow([e.id, e.candidates, e.corrected, f"{e.mean_cs_corrected:.6f}"])
