"""Adam, the step-size schedule and the reweighted training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import losses, segnet
from .data import Dataset, LabelMask, RunConfig

log = logging.getLogger(__name__)

ADAM_EPS = 1e-8
SWITCH_EPOCH = 10


@dataclass
class OptimizerState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: OptimizerState, lr: float, beta1: float,
              beta2: float):
    """One bias-corrected Adam update; returns new (params, state)."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("gradient blocks do not match parameter blocks")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_params.append(p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS))
        new_m.append(m)
        new_v.append(v)
    return new_params, OptimizerState(new_m, new_v, t)


def lr_schedule(epoch: int, lr0: float, total_epochs: int) -> float:
    """Constant for the first 10 epochs, then linear decay to 0 at the last epoch."""
    if total_epochs <= SWITCH_EPOCH or epoch <= SWITCH_EPOCH:
        return lr0
    return lr0 * (total_epochs - epoch) / (total_epochs - SWITCH_EPOCH)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float
    dropped_images: int
    dropped_pixels: int


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss", "lr", "dropped_images", "dropped_pixels"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.mean_loss), repr(r.lr),
                                 r.dropped_images, r.dropped_pixels])

    @property
    def dropped_images(self) -> list[int]:
        return [r.dropped_images for r in self.records]

    @property
    def dropped_pixels(self) -> list[int]:
        return [r.dropped_pixels for r in self.records]


def crop_pad(image, mask, rng):
    """Keep a random full-height strip of width w/2; zero everything else."""
    w = image.shape[1]
    half = w // 2
    x0 = int(rng.integers(0, w - half + 1))
    img = np.zeros_like(image)
    lab = np.zeros_like(mask)
    img[:, x0:x0 + half] = image[:, x0:x0 + half]
    lab[:, x0:x0 + half] = mask[:, x0:x0 + half]
    return img, lab


def batch_weights(probs, onehots, order, config: RunConfig, active: bool):
    """Pixel weights (N, H, W) and image weights (N,) for one mini-batch."""
    pg = (probs * onehots).sum(axis=-1)
    ce = -np.log(np.clip(pg, losses.CLAMP, 1.0))
    n = len(ce)
    if active and not config.ablate_pixel_weights:
        alphas = np.stack([losses.pixel_weights(c, config.gamma) for c in ce])
    else:
        alphas = np.ones(ce.shape, dtype=np.uint8)
    if active and not config.ablate_image_weights:
        per_image = ce.mean(axis=(1, 2)) if config.ce_reduction == "mean" else ce.sum(axis=(1, 2))
        lams = losses.image_weights(per_image, config.beta, order)
    else:
        lams = np.ones(n, dtype=np.uint8)
    return alphas.astype(np.float64), lams.astype(np.float64)


def train(dataset: Dataset, labels: Mapping[str, LabelMask], config: RunConfig,
          seed: int, params: Optional[list] = None):
    """Train a freshly initialised network on ``labels`` (one mask per id).

    Reweighting starts at epoch ``config.e_start`` (1-based) and the weights
    are recomputed from the current network for every mini-batch.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    missing = [sid for sid in dataset.ids if sid not in labels]
    if missing:
        raise ValueError(f"no label for ids {missing[:5]}")
    for sid in dataset.ids:
        if labels[sid].shape != dataset.shape:
            raise ValueError(f"{sid}: label dimensions do not match the image")

    k = dataset.k
    images = dataset.images()
    label_data = np.stack([labels[sid].data for sid in dataset.ids])
    if params is None:
        params = segnet.init_params(k, seed)
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng([int(seed), 0x7EA1])
    history = TrainHistory()
    n = len(dataset)

    for epoch in range(1, config.epochs + 1):
        lr = lr_schedule(epoch, config.lr0, config.epochs)
        beta1 = config.beta1_pre if epoch <= SWITCH_EPOCH else config.beta1_post
        active = epoch >= config.e_start
        perm = rng.permutation(n)
        batch_losses, dropped_images, dropped_pixels = [], 0, 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            x, y = images[idx], label_data[idx]
            if config.crop_augment:
                pairs = [crop_pad(a, b, rng) for a, b in zip(x, y)]
                x = np.stack([p[0] for p in pairs])
                y = np.stack([p[1] for p in pairs])
            onehots = (y[..., None] == np.arange(k)).astype(np.float64)
            seeds = None
            if config.train_dropout:
                seeds = [int(s) for s in rng.integers(0, 2**63, size=len(idx))]
            probs, cache = segnet.forward_batch(params, x, seeds, config.p_drop,
                                                keep_cache=True)
            alphas, lams = batch_weights(probs, onehots, idx, config, active)
            loss, grads = segnet.loss_and_grads_from_cache(
                params, cache, onehots, alphas, lams, config.l2_mu, config.ce_reduction)
            params, state = adam_step(params, grads, state, lr, beta1, config.beta2)
            batch_losses.append(loss)
            dropped_images += int(np.sum(lams == 0))
            dropped_pixels += int(np.sum(alphas == 0))
        record = EpochRecord(epoch, float(np.mean(batch_losses)), lr,
                             dropped_images, dropped_pixels)
        history.records.append(record)
        log.debug("epoch %d loss %.5f lr %.2e dropped %d images %d pixels",
                  epoch, record.mean_loss, lr, dropped_images, dropped_pixels)
    return params, history
