"""Monte-Carlo dropout confidence maps."""

from __future__ import annotations

import numpy as np

from .data import ConfidenceMap, LabelMask, check_image
from .segnet import argmax_labels, forward_batch, predict


def pass_seeds(seed: int, num_passes: int) -> list[int]:
    """Seeds of the stochastic passes j = 1..Num, each ``seed ^ j``."""
    return [int(seed) ^ j for j in range(1, num_passes + 1)]


def confidence_map(params, image, num_passes: int, p_drop: float, seed: int,
                   chunk: int = 50) -> tuple[ConfidenceMap, LabelMask]:
    """Fraction of dropout passes whose argmax agrees with the plain network.

    Returns the confidence map and the no-dropout reference prediction.
    """
    if num_passes < 1:
        raise ValueError("num_passes must be >= 1")
    image = check_image(image)
    reference = predict(params, image)
    counts = np.zeros(image.shape, dtype=np.int64)
    seeds = pass_seeds(seed, num_passes)
    for start in range(0, num_passes, chunk):
        batch_seeds = seeds[start:start + chunk]
        stack = np.broadcast_to(image, (len(batch_seeds),) + image.shape)
        labels = argmax_labels(forward_batch(params, stack, batch_seeds, p_drop))
        counts += (labels == reference.data).sum(axis=0)
    return ConfidenceMap(counts, num_passes), reference
