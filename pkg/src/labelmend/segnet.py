"""A small U-Net in plain numpy with hand-written backpropagation.

Activations are kept channels-last, ``(N, H, W, C)``.  Every convolution
is computed one sample at a time (a stacked matmul), so a sample's output
does not depend on which other samples share its batch.  MC-dropout passes
rely on that to be reproducible pass by pass.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import LabelMask, check_image
from . import losses

MAGIC = b"SEGW1"

# (name, kernel size, input channels, output channels); head output is k
ARCHITECTURE = (
    ("enc1a", 3, 1, 8),
    ("enc1b", 3, 8, 8),
    ("enc2a", 3, 8, 16),
    ("enc2b", 3, 16, 16),
    ("bottleneck", 3, 16, 32),
    ("up1", 3, 48, 16),
    ("up2", 3, 24, 8),
    ("head", 1, 8, None),
)


def param_shapes(k: int) -> list[tuple[int, ...]]:
    shapes = []
    for _, ksize, cin, cout in ARCHITECTURE:
        cout = k if cout is None else cout
        shapes.append((ksize, ksize, cin, cout))
        shapes.append((cout,))
    return shapes


def init_params(k: int, seed: int) -> list[np.ndarray]:
    """He-normal kernels and zero biases, as an ordered list [w0, b0, w1, b1, ...]."""
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    params = []
    for shape in param_shapes(k):
        if len(shape) == 1:
            params.append(np.zeros(shape))
        else:
            fan_in = shape[0] * shape[1] * shape[2]
            params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))
    return params


def num_classes(params: Sequence[np.ndarray]) -> int:
    return params[-1].shape[0]


# ------------------------------------------------------------ serialization

def params_to_bytes(params: Sequence[np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for block in params:
        block = np.asarray(block, dtype="<f8")
        chunks.append(struct.pack("<i", block.ndim))
        chunks.append(struct.pack(f"<{block.ndim}i", *block.shape))
        chunks.append(np.ascontiguousarray(block).tobytes())
    return b"".join(chunks)


def params_from_bytes(buf: bytes) -> list[np.ndarray]:
    if not buf.startswith(MAGIC):
        raise ValueError("not a model file (bad magic)")
    pos = len(MAGIC)
    params = []
    while pos < len(buf):
        (rank,) = struct.unpack_from("<i", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}i", buf, pos)
        pos += 4 * rank
        count = int(np.prod(dims))
        if pos + 8 * count > len(buf):
            raise ValueError("truncated model file")
        block = np.frombuffer(buf, dtype="<f8", count=count, offset=pos)
        params.append(block.reshape(dims).astype(np.float64))
        pos += 8 * count
    if len(params) != 2 * len(ARCHITECTURE):
        raise ValueError(f"expected {2 * len(ARCHITECTURE)} blocks, got {len(params)}")
    k = params[-1].shape[0]
    if [p.shape for p in params] != param_shapes(k):
        raise ValueError("block shapes do not match the architecture")
    return params


def save_params(params: Sequence[np.ndarray], path) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path) -> list[np.ndarray]:
    return params_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- layers

_OFFSETS = [(dy, dx) for dy in range(3) for dx in range(3)]

def _im2col(x: np.ndarray, ksize: int) -> np.ndarray:
    n, h, w, c = x.shape
    if ksize == 1:
        return x.reshape(n, h * w, c)
    xp = np.zeros((n, h + 2, w + 2, c))
    xp[:, 1:-1, 1:-1, :] = x
    cols = np.concatenate([xp[:, dy:dy + h, dx:dx + w, :] for dy, dx in _OFFSETS],
                          axis=-1)
    return cols.reshape(n, h * w, 9 * c)


def _col2im(dcols: np.ndarray, shape: tuple, ksize: int) -> np.ndarray:
    n, h, w, c = shape
    if ksize == 1:
        return dcols.reshape(shape)
    dcols = dcols.reshape(n, h, w, 9, c)
    dxp = np.zeros((n, h + 2, w + 2, c))
    for i, (dy, dx) in enumerate(_OFFSETS):
        dxp[:, dy:dy + h, dx:dx + w, :] += dcols[:, :, :, i, :]
    return dxp[:, 1:-1, 1:-1, :]


def _maxpool(x: np.ndarray, with_index: bool = False):
    n, h, w, c = x.shape
    win = (x.reshape(n, h // 2, 2, w // 2, 2, c)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(n, h // 2, w // 2, c, 4))
    return win.max(axis=-1), (win.argmax(axis=-1) if with_index else None)


def _maxpool_backward(dout: np.ndarray, idx: np.ndarray) -> np.ndarray:
    n, h2, w2, c = dout.shape
    dwin = (np.arange(4) == idx[..., None]) * dout[..., None]
    return (dwin.reshape(n, h2, w2, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, 2 * h2, 2 * w2, c))


def _upsample(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample_backward(dout: np.ndarray) -> np.ndarray:
    n, h, w, c = dout.shape
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class _Dropout:
    """Per-sample Bernoulli masks drawn from one generator per sample.

    Each sample's generator is consumed in layer order, so the masks a
    sample sees depend only on its own seed.
    """

    def __init__(self, seeds: Optional[Sequence[int]], p_drop: float):
        self.active = seeds is not None and p_drop > 0.0
        self.keep = 1.0 - p_drop
        if self.active:
            self.rngs = [np.random.default_rng(int(s)) for s in seeds]

    def __call__(self, x: np.ndarray):
        if not self.active:
            return x, None
        mask = np.stack([rng.random(x.shape[1:]) < self.keep for rng in self.rngs])
        scale = mask / self.keep
        return x * scale, scale


# ----------------------------------------------------------- forward pass

def forward_batch(params: Sequence[np.ndarray], images: np.ndarray,
                  dropout_seeds: Optional[Sequence[int]] = None,
                  p_drop: float = 0.0, keep_cache: bool = False):
    """Run the network on ``images`` of shape (N, H, W).

    ``dropout_seeds`` (one per image) switches dropout on; ``None`` gives the
    deterministic network.  Returns probabilities of shape (N, H, W, k), plus
    the activation cache when ``keep_cache`` is set.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ValueError("images must have shape (N, H, W)")
    _, h, w = images.shape
    if h % 4 or w % 4:
        raise ValueError(f"image dimensions {h}x{w} must be divisible by 4")
    if dropout_seeds is not None and len(dropout_seeds) != len(images):
        raise ValueError("need one dropout seed per image")
    drop = _Dropout(dropout_seeds, p_drop)
    convs = []

    def conv(x, layer, relu=True):
        xd, scale = drop(x)
        wk, b = params[2 * layer], params[2 * layer + 1]
        ksize = wk.shape[0]
        cols = _im2col(xd, ksize)
        out = np.matmul(cols, wk.reshape(-1, wk.shape[-1])) + b
        out = out.reshape(x.shape[:3] + (wk.shape[-1],))
        convs.append((x.shape, scale, cols, out if relu else None))
        return np.maximum(out, 0.0) if relu else out

    x = images[..., None]
    e1 = conv(conv(x, 0), 1)
    p1, idx1 = _maxpool(e1, keep_cache)
    e2 = conv(conv(p1, 2), 3)
    p2, idx2 = _maxpool(e2, keep_cache)
    bott = conv(p2, 4)
    d1 = conv(np.concatenate([_upsample(bott), e2], axis=-1), 5)
    d2 = conv(np.concatenate([_upsample(d1), e1], axis=-1), 6)
    logits = conv(d2, 7, relu=False)
    probs = softmax(logits)
    if keep_cache:
        return probs, {"convs": convs, "pool": (idx1, idx2), "probs": probs}
    return probs


def _backward_cache(params, cache, dlogits):
    grads = [np.zeros_like(p) for p in params]
    convs = cache["convs"]
    idx1, idx2 = cache["pool"]

    def conv_back(dout, layer):
        in_shape, scale, cols, pre = convs[layer]
        if pre is not None:
            dout = dout * (pre > 0.0)
        wk = params[2 * layer]
        cout = wk.shape[-1]
        dflat = dout.reshape(dout.shape[0], -1, cout)
        grads[2 * layer] = (cols.reshape(-1, cols.shape[-1]).T
                            @ dflat.reshape(-1, cout)).reshape(wk.shape)
        grads[2 * layer + 1] = dflat.sum(axis=(0, 1))
        dcols = np.matmul(dflat, wk.reshape(-1, cout).T)
        dx = _col2im(dcols, in_shape, wk.shape[0])
        if scale is not None:
            dx = dx * scale
        return dx

    dd2 = conv_back(dlogits, 7)
    dcat2 = conv_back(dd2, 6)
    c_up = params[2 * 5].shape[-1]        # channels coming up from up1
    dd1 = _upsample_backward(dcat2[..., :c_up])
    de1 = dcat2[..., c_up:]
    dcat1 = conv_back(dd1, 5)
    c_bott = params[2 * 4].shape[-1]
    dbott = _upsample_backward(dcat1[..., :c_bott])
    de2 = dcat1[..., c_bott:]
    dp2 = conv_back(dbott, 4)
    de2 = de2 + _maxpool_backward(dp2, idx2)
    dp1 = conv_back(conv_back(de2, 3), 2)
    de1 = de1 + _maxpool_backward(dp1, idx1)
    conv_back(conv_back(de1, 1), 0)
    return grads


def forward(params, image, dropout_on: bool = False, p_drop: float = 0.0,
            pass_seed: int = 0) -> np.ndarray:
    """Class probabilities (H, W, k) for a single image."""
    image = check_image(image)
    seeds = [pass_seed] if dropout_on else None
    return forward_batch(params, image[None], seeds, p_drop)[0]


def argmax_labels(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the smaller class
    return probs.argmax(axis=-1).astype(np.uint8)


def predict(params, image) -> LabelMask:
    probs = forward(params, image)
    return LabelMask(argmax_labels(probs), probs.shape[-1], "prediction")


def predict_batch(params, images: np.ndarray, chunk: int = 32) -> list[LabelMask]:
    k = num_classes(params)
    out = []
    for start in range(0, len(images), chunk):
        probs = forward_batch(params, images[start:start + chunk])
        out.extend(LabelMask(a, k, "prediction") for a in argmax_labels(probs))
    return out


# ---------------------------------------------------------- training pass

def loss_and_grads(params, images, onehots, alphas, lams, mu: float,
                   reduction: str = "mean", dropout_seeds=None, p_drop=0.0):
    """Loss of the reweighted objective and its exact gradient.

    ``alphas`` (N, H, W) and ``lams`` (N,) are treated as constants.
    """
    probs, cache = forward_batch(params, images, dropout_seeds, p_drop, keep_cache=True)
    return loss_and_grads_from_cache(params, cache, onehots, alphas, lams, mu, reduction)


def loss_and_grads_from_cache(params, cache, onehots, alphas, lams, mu,
                              reduction="mean"):
    data, dlogits = losses.data_loss_and_logit_grad(
        cache["probs"], onehots, alphas, lams, reduction)
    grads = _backward_cache(params, cache, dlogits)
    reg = 0.0
    for p, g in zip(params, grads):
        reg += float(np.sum(p * p))
        g += 2.0 * mu * p
    return data + mu * reg, grads


def backward(params, batch, config):
    """Loss and gradients for a batch of (image, mask, weight map, image weight).

    Dropout follows ``config.train_dropout``; in that case per-image pass
    seeds are derived from ``config.seed``.
    """
    if not batch:
        raise ValueError("empty batch")
    shape = np.shape(batch[0][0])
    for image, mask, alpha, _ in batch:
        if np.shape(image) != shape or mask.shape != shape or np.shape(alpha) != shape:
            raise ValueError("shape mismatch between batch elements")
    images = np.stack([check_image(b[0]) for b in batch])
    onehots = np.stack([b[1].one_hot() for b in batch])
    alphas = np.stack([np.asarray(b[2], dtype=np.float64) for b in batch])
    lams = np.array([float(b[3]) for b in batch])
    seeds = None
    if config.train_dropout:
        seeds = [config.seed ^ i for i in range(len(batch))]
    return loss_and_grads(params, images, onehots, alphas, lams, config.l2_mu,
                          config.ce_reduction, seeds, config.p_drop)
