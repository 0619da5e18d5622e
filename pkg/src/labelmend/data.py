"""Domain types, PGM raster I/O, dataset directories and run configuration."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PROVENANCES = ("ground_truth", "pseudo", "corrected", "prediction")


class LoadError(ValueError):
    """Raised when a raster or dataset on disk cannot be read."""


class ConfigError(ValueError):
    """Raised for unknown keys or out-of-range values in a run config."""


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Per-pixel class indices with a provenance tag.

    One type serves ground truth, pseudo labels, corrected labels and
    network predictions; ``provenance`` records which role it plays.
    """

    data: np.ndarray
    k: int = 2
    provenance: str = "ground_truth"

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"label mask must be 2-D, got shape {data.shape}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if data.size and (data.min() < 0 or data.max() >= self.k):
            raise ValueError(f"mask values must lie in [0, {self.k})")
        data = data.astype(np.uint8, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def one_hot(self) -> np.ndarray:
        """(H, W, k) float array with g_l(x) = 1 iff data[x] == l."""
        return (self.data[..., None] == np.arange(self.k)).astype(np.float64)

    def with_provenance(self, provenance: str) -> "LabelMask":
        return LabelMask(self.data, self.k, provenance)

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return (self.k == other.k and self.provenance == other.provenance
                and np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    """Per-pixel MC-dropout agreement fraction, stored as integer counts."""

    counts: np.ndarray
    num_passes: int

    @property
    def data(self) -> np.ndarray:
        return self.counts / self.num_passes

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


def check_image(image: np.ndarray) -> np.ndarray:
    """Validate a grayscale image grid and return it as float64."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {image.shape}")
    h, w = image.shape
    if h % 4 or w % 4:
        raise ValueError(f"image dimensions {h}x{w} must be divisible by 4")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ValueError("image intensities must lie in [0, 1]")
    return image


# ---------------------------------------------------------------- PGM I/O

def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def read_pgm_bytes(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM file into a uint8 (H, W) array."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"{path}: cannot read ({exc.strerror})") from exc
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise LoadError(f"{path}: unsupported magic {magic[:2]!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise LoadError(f"{path}: malformed header")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval > 255 or maxval < 1:
        raise LoadError(f"{path}: maxval {maxval} not supported (must be <= 255)")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    payload = buf[pos:pos + width * height]
    if len(payload) < width * height:
        raise LoadError(f"{path}: truncated payload "
                        f"({len(payload)} of {width * height} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def read_pgm(path, role: str = "image", k: int = 2,
             provenance: str = "ground_truth"):
    """Read a P5 file as an Image (bytes / 255) or a LabelMask (bytes verbatim)."""
    raw = read_pgm_bytes(path)
    if role == "image":
        return raw.astype(np.float64) / 255.0
    if role == "mask":
        if raw.size and raw.max() >= k:
            raise LoadError(f"{path}: mask value {int(raw.max())} >= k={k}")
        return LabelMask(raw, k, provenance)
    raise ValueError(f"role must be 'image' or 'mask', got {role!r}")


def write_pgm(grid, path) -> None:
    """Write an Image, LabelMask or ConfidenceMap as an 8-bit P5 file."""
    if isinstance(grid, LabelMask):
        raw = grid.data.astype(np.uint8)
    elif isinstance(grid, ConfidenceMap):
        raw = np.rint(grid.data * 255.0).astype(np.uint8)
    else:
        values = np.asarray(grid, dtype=np.float64)
        raw = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = raw.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(raw).tobytes())


# --------------------------------------------------------------- datasets

@dataclass(frozen=True)
class Sample:
    id: str
    image: np.ndarray
    pseudo: LabelMask
    ground_truth: Optional[LabelMask] = None


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]

    def __post_init__(self):
        samples = tuple(sorted(self.samples, key=lambda s: s.id))
        object.__setattr__(self, "samples", samples)
        if not samples:
            raise LoadError("empty dataset")
        ids = [s.id for s in samples]
        if len(set(ids)) != len(ids):
            raise LoadError("duplicate sample ids")
        h, w = samples[0].image.shape
        k = samples[0].pseudo.k
        for s in samples:
            masks = [s.pseudo] + ([s.ground_truth] if s.ground_truth else [])
            if s.image.shape != (h, w) or any(m.shape != (h, w) for m in masks):
                raise LoadError(f"{s.id}: dimension mismatch (expected {h}x{w})")
            if any(m.k != k for m in masks):
                raise LoadError(f"{s.id}: class count mismatch")

    def __len__(self):
        return len(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def k(self) -> int:
        return self.samples[0].pseudo.k

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples[0].image.shape

    @property
    def has_ground_truth(self) -> bool:
        return all(s.ground_truth is not None for s in self.samples)

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples])


def load_dataset(directory, k: int = 2) -> Dataset:
    """Load ``images/``, ``labels/`` and optional ``ground_truth/`` PGM folders."""
    root = Path(directory)
    img_dir = root / "images"
    if not img_dir.is_dir():
        raise LoadError(f"{img_dir}: not a directory")
    ids = sorted(p.stem for p in img_dir.glob("*.pgm"))
    if not ids:
        raise LoadError(f"{root}: empty dataset")
    gt_dir = root / "ground_truth"
    samples = []
    for sid in ids:
        label_path = root / "labels" / f"{sid}.pgm"
        if not label_path.exists():
            raise LoadError(f"{label_path}: missing label for image id {sid!r}")
        image = read_pgm(img_dir / f"{sid}.pgm", "image")
        check_image(image)
        pseudo = read_pgm(label_path, "mask", k, "pseudo")
        gt = None
        gt_path = gt_dir / f"{sid}.pgm"
        if gt_path.exists():
            gt = read_pgm(gt_path, "mask", k, "ground_truth")
        samples.append(Sample(sid, image, pseudo, gt))
    return Dataset(tuple(samples))


def save_dataset(dataset: Dataset, directory) -> None:
    root = Path(directory)
    for sub in ("images", "labels"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    if dataset.has_ground_truth:
        (root / "ground_truth").mkdir(exist_ok=True)
    for s in dataset.samples:
        write_pgm(s.image, root / "images" / f"{s.id}.pgm")
        write_pgm(s.pseudo, root / "labels" / f"{s.id}.pgm")
        if s.ground_truth is not None:
            write_pgm(s.ground_truth, root / "ground_truth" / f"{s.id}.pgm")


def load_masks(directory, ids: Sequence[str], k: int = 2,
               provenance: str = "pseudo") -> dict[str, LabelMask]:
    root = Path(directory)
    return {sid: read_pgm(root / f"{sid}.pgm", "mask", k, provenance) for sid in ids}


def save_masks(masks: dict[str, LabelMask], directory) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for sid, mask in masks.items():
        write_pgm(mask, root / f"{sid}.pgm")


# ----------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    k: int = 2
    beta: float = 0.10
    gamma: float = 0.05
    num_passes: int = 100
    e_start: int = 10
    epochs: int = 60
    batch_size: int = 8
    lr0: float = 0.001
    beta1_pre: float = 0.9
    beta1_post: float = 0.1
    beta2: float = 0.999
    l2_mu: float = 1e-4
    tau: float = 0.8
    p_drop: float = 0.1
    train_dropout: bool = False
    rounds: int = 1
    seed: int = 0
    ablate_pixel_weights: bool = False
    ablate_image_weights: bool = False
    ablate_retrain: bool = False
    # "mean" divides the CE terms by the pixel count, "sum" is the raw sum
    ce_reduction: str = "mean"
    crop_augment: bool = False

    def __post_init__(self):
        for name in ("beta", "gamma", "p_drop"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name}: {value} outside [0, 1)")
        # tau above 1 is a legal way to switch correction off
        if self.tau < 0.0:
            raise ConfigError(f"tau: {self.tau} must be >= 0")
        for name in ("beta1_pre", "beta1_post", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name}: {value} outside [0, 1)")
        positive = ("k", "num_passes", "epochs", "batch_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.k < 2:
            raise ConfigError("k: must be >= 2")
        if self.e_start < 0 or self.rounds < 0:
            raise ConfigError("e_start and rounds must be >= 0")
        if self.lr0 <= 0 or self.l2_mu < 0:
            raise ConfigError("lr0 must be > 0 and l2_mu >= 0")
        if self.ce_reduction not in ("mean", "sum"):
            raise ConfigError(f"ce_reduction: {self.ce_reduction!r} not in (mean, sum)")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    config = RunConfig(**values)
    if config.epochs < config.e_start:
        raise ConfigError(f"e_start: {config.e_start} exceeds epochs={config.epochs}")
    return config


def parse_config(path) -> RunConfig:
    """Parse a ``key = value`` config file; '#' starts a comment."""
    return parse_config_text(Path(path).read_text(), os.fspath(path))
