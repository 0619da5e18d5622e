"""
Simulated pseudo-label noise
============================

Generate a handful of synthetic images and look at how far the noisy
pseudo labels drift from the ground truth, split by corruption regime.
"""

import numpy as np

from labelmend.metrics import label_quality
from labelmend.synth import NoiseSpec, make_dataset

# Mild images get at most a one-pixel boundary shift; severe ones get a
# larger shift plus holes punched into the foreground.
spec = NoiseSpec(severity=0.5, severe_fraction=0.3)
dataset, report = make_dataset(200, 32, 32, seed=7, spec=spec)

for regime in ("mild", "severe"):
    rates = [r["disagreement_rate"] for r in report if r["regime"] == regime]
    print(f"{regime:>6}: {len(rates):3d} images, mean disagreement {100 * np.mean(rates):.1f}%")

# The same numbers in the "true positive / false positive" form used for
# label quality: TP over ground-truth foreground, FP over background.
quality = label_quality([s.pseudo for s in dataset.samples],
                        [s.ground_truth for s in dataset.samples])
print(f"pseudo labels: TP {quality.tp_rate:.2f}%  FP {quality.fp_rate:.2f}%")

# Severity scales every effect; at 0 the pseudo label is the ground truth.
for severity in (0.0, 0.2, 0.5, 0.8):
    _, rows = make_dataset(200, 32, 32, seed=7, spec=NoiseSpec(severity=severity))
    print(f"severity {severity:.1f}: {100 * np.mean([r['disagreement_rate'] for r in rows]):.2f}%")

# A text rendering of one severe example: '#' foreground in both, '-' lost
# by the pseudo label, '+' added by it.
sample = next(s for s, r in zip(dataset.samples, report) if r["regime"] == "severe")
gt, ps = sample.ground_truth.data, sample.pseudo.data
glyph = {(1, 1): "#", (1, 0): "-", (0, 1): "+", (0, 0): "."}
print(f"\n{sample.id}")
for y in range(gt.shape[0]):
    print("".join(glyph[int(gt[y, x]), int(ps[y, x])] for x in range(gt.shape[1])))
