"""
Confidence maps and label correction
====================================

Train one network on noisy pseudo labels, estimate per-pixel confidence
with Monte-Carlo dropout, and see which pixels the correction rule would
flip and whether those flips are right.

Takes about a minute on one core.
"""

import numpy as np

from labelmend.confidence import confidence_map
from labelmend.correct import correct_labels
from labelmend.data import RunConfig
from labelmend.pipeline import image_seed
from labelmend.synth import NoiseSpec, make_dataset
from labelmend.trainer import train

dataset, _ = make_dataset(32, 32, 32, seed=3, spec=NoiseSpec())
config = RunConfig(epochs=30, train_dropout=True, num_passes=50, seed=3)

# Round 0: a fresh network trained on the pseudo labels with the
# reweighted loss (pixel and image weights switch on at epoch e_start).
params, history = train(dataset, {s.id: s.pseudo for s in dataset.samples}, config, config.seed)
last = history.records[-1]
print(f"final epoch loss {last.mean_loss:.4f}, "
      f"{last.dropped_images} images and {last.dropped_pixels} pixels dropped")

# For every image: CS = fraction of dropout passes agreeing with the plain
# prediction.  Disagreements with the pseudo label are adopted when CS >= tau.
good = bad = 0
for pos, sample in enumerate(dataset.samples):
    conf, reference = confidence_map(params, sample.image, config.num_passes,
                                     config.p_drop, image_seed(config.seed, 1, pos))
    fixed, entry = correct_labels(sample.pseudo, reference, conf, config.tau, sample.id)
    flipped = fixed.data != sample.pseudo.data
    good += int(np.sum(flipped & (fixed.data == sample.ground_truth.data)))
    bad += int(np.sum(flipped & (fixed.data != sample.ground_truth.data)))
print(f"flipped {good + bad} pixels: {good} now match the ground truth, {bad} do not")

# Confidence is lowest along object boundaries, where dropout passes disagree.
conf, reference = confidence_map(params, dataset.samples[0].image, config.num_passes,
                                 config.p_drop, 0)
shades = " .:-=+*#%@"
for row in conf.data:
    print("".join(shades[min(int(v * 10), 9)] for v in row))
