"""Cross-entropy / Dice objective with image- and pixel-level reweighting."""

from __future__ import annotations

import math

import numpy as np

from .data import LabelMask

CLAMP = 1e-12
DICE_EPS = 1e-12


def ce_pixel(p, g: int) -> float:
    """-log p_g, with p_g clamped to [1e-12, 1]."""
    return -math.log(min(max(float(p[g]), CLAMP), 1.0))


def ce_map(probs: np.ndarray, mask: LabelMask) -> np.ndarray:
    """Per-pixel cross entropy for a (H, W, k) probability map."""
    if probs.shape[:2] != mask.shape:
        raise ValueError(f"dimension mismatch: {probs.shape[:2]} vs {mask.shape}")
    pg = np.take_along_axis(probs, mask.data[..., None].astype(np.intp), axis=-1)[..., 0]
    return -np.log(np.clip(pg, CLAMP, 1.0))


def ce_image(probs: np.ndarray, mask: LabelMask, reduction: str = "mean") -> float:
    losses = ce_map(probs, mask)
    return float(losses.mean() if reduction == "mean" else losses.sum())


def _dice_terms(probs, onehot):
    axes = tuple(range(probs.ndim - 3, probs.ndim - 1))
    inter = (probs * onehot).sum(axis=axes)
    denom = (probs ** 2).sum(axis=axes) + (onehot ** 2).sum(axis=axes) + DICE_EPS
    return inter, denom


def dice_loss(probs: np.ndarray, mask: LabelMask) -> float:
    """1 - mean over classes of 2 sum(p g) / (sum p^2 + sum g^2)."""
    if probs.shape[:2] != mask.shape:
        raise ValueError(f"dimension mismatch: {probs.shape[:2]} vs {mask.shape}")
    inter, denom = _dice_terms(probs, mask.one_hot())
    return float(1.0 - np.mean(2.0 * inter / denom))


def pixel_weights(ce: np.ndarray, gamma: float) -> np.ndarray:
    """Zero weight for pixels whose loss exceeds the (1 - gamma) quantile.

    The quantile is the order statistic at 1-based rank ceil((1 - gamma) n);
    the comparison is strict, so pixels tied with it keep weight one.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma {gamma} outside [0, 1)")
    flat = np.asarray(ce, dtype=np.float64).ravel()
    n = flat.size
    if n == 0:
        raise ValueError("empty loss grid")
    rank = max(1, math.ceil((1.0 - gamma) * n))
    q = np.partition(flat, rank - 1)[rank - 1]
    return (np.asarray(ce) <= q).astype(np.uint8)


def keep_count(beta: float, batch_size: int) -> int:
    return math.ceil((1.0 - beta) * batch_size)


def image_weights(batch_ce, beta: float, order=None) -> np.ndarray:
    """lambda = 1 for the ceil((1 - beta) B) images with the smallest CE.

    ``order`` gives each image's dataset rank; ties in CE go to the image
    that comes first in the dataset.  Defaults to the batch order.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta {beta} outside [0, 1)")
    batch_ce = np.asarray(batch_ce, dtype=np.float64)
    size = batch_ce.size
    if size == 0:
        raise ValueError("empty batch")
    order = np.arange(size) if order is None else np.asarray(order)
    ranked = np.lexsort((order, batch_ce))
    lam = np.zeros(size, dtype=np.uint8)
    lam[ranked[:keep_count(beta, size)]] = 1
    return lam


def total_loss(batch, params, mu: float, reduction: str = "mean") -> float:
    """Sum over images of lambda (alpha-weighted CE + Dice), plus mu ||W||^2.

    ``batch`` holds (probs, mask, alpha, lambda) tuples.
    """
    total = 0.0
    for probs, mask, alpha, lam in batch:
        if probs.shape[:2] != mask.shape or np.shape(alpha) != mask.shape:
            raise ValueError("probability map, mask and weight map shapes differ")
        onehot = mask.one_hot()
        ce = -np.log(np.clip((probs * onehot).sum(axis=-1), CLAMP, 1.0))
        weighted = float((np.asarray(alpha, dtype=np.float64) * ce).sum())
        if reduction == "mean":
            weighted /= ce.size
        inter, denom = _dice_terms(probs, onehot)
        dice = 1.0 - float(np.mean(2.0 * inter / denom))
        total += float(lam) * (weighted + dice)
    reg = sum(float(np.vdot(p, p)) for p in params)
    return total + mu * reg


def data_loss_and_logit_grad(probs, onehots, alphas, lams, reduction="mean"):
    """Data term of the objective for a batch and its gradient w.r.t. logits.

    Arrays are batched: probs/onehots (N, H, W, k), alphas (N, H, W), lams (N,).
    """
    n_pix = probs.shape[1] * probs.shape[2]
    norm = 1.0 / n_pix if reduction == "mean" else 1.0
    k = probs.shape[-1]
    lam = np.asarray(lams, dtype=np.float64)[:, None, None, None]

    pg = (probs * onehots).sum(axis=-1)
    clamped = pg < CLAMP
    ce = -np.log(np.clip(pg, CLAMP, 1.0))
    ce_term = norm * (alphas * ce).sum(axis=(1, 2))

    inter, denom = _dice_terms(probs, onehots)
    dice = 1.0 - np.mean(2.0 * inter / denom, axis=-1)
    value = float(np.sum(np.asarray(lams) * (ce_term + dice)))

    # CE through the softmax: alpha (p - g); zero where the clamp is active
    w = (norm * alphas * ~clamped)[..., None]
    d_ce = w * (probs - onehots)
    # Dice w.r.t. probabilities, then through the softmax Jacobian
    inter = inter[:, None, None, :]
    denom = denom[:, None, None, :]
    dp = -(2.0 / k) * (onehots / denom - 2.0 * probs * inter / denom ** 2)
    d_dice = probs * (dp - (probs * dp).sum(axis=-1, keepdims=True))
    return value, lam * (d_ce + d_dice)
