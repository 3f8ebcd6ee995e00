"""Dataset index, class balancing, image transforms and patient-level splits."""
from __future__ import annotations

import math
from functools import lru_cache
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .heads import LOCATIONS, NO_LOCATION, PRESENCE

INDEX_COLUMNS = ("id", "path", "presence", "location", "patient", "split")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Record:
    id: str
    path: str
    presence: int
    location: int  # NO_LOCATION for Normal
    patient: str
    split: str | None = None

    def __post_init__(self):
        if self.presence not in (0, 1):
            raise ValueError(f"{self.id}: presence must be 0 or 1")
        if (self.location != NO_LOCATION) != (self.presence == 1):
            raise ValueError(f"{self.id}: location label present iff presence is ICH")
        if self.location != NO_LOCATION and not 0 <= self.location < len(LOCATIONS):
            raise ValueError(f"{self.id}: location index {self.location} out of range")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"{self.id}: unknown split {self.split!r}")

    @property
    def class_name(self) -> str:
        return "Normal" if self.presence == 0 else LOCATIONS[self.location]


class IndexFormatError(ValueError):
    """Malformed dataset index file."""


@dataclass
class DatasetIndex:
    records: list[Record]
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def resolve(self, rec: Record) -> Path:
        return self.root / rec.path

    def class_counts(self) -> dict[str, int]:
        c = Counter(r.class_name for r in self.records)
        return {k: c.get(k, 0) for k in ("Normal",) + LOCATIONS}

    def write(self, path) -> None:
        path = Path(path)
        lines = ["\t".join(INDEX_COLUMNS)]
        for r in self.records:
            loc = "-" if r.location == NO_LOCATION else LOCATIONS[r.location]
            lines.append("\t".join([r.id, r.path, PRESENCE[r.presence], loc, r.patient, r.split or "-"]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "DatasetIndex":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"dataset index not found: {path}")
        records = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if lineno == 1 and parts[0] == "id":
                continue
            if len(parts) not in (5, 6):
                raise IndexFormatError(f"{path}:{lineno}: expected 5 or 6 tab-separated fields")
            rid, rel, presence, loc, patient = parts[:5]
            split = parts[5] if len(parts) == 6 and parts[5] != "-" else None
            try:
                p = PRESENCE.index(presence)
                l = NO_LOCATION if loc == "-" else LOCATIONS.index(loc)
                records.append(Record(rid, rel, p, l, patient, split))
            except ValueError as e:
                raise IndexFormatError(f"{path}:{lineno}: {e}") from None
        return cls(records, path.parent)


# ------------------------------------------------------------------ balancing


def _replicate(records: Sequence[Record], target: int) -> list[int]:
    """Copies per record: floor(target/n) each, plus one for the first target mod n."""
    n = len(records)
    base, extra = divmod(target, n)
    return [base + (1 if i < extra else 0) for i in range(n)]


def balance(records: Sequence[Record]) -> list[Record]:
    """Replicate records to an exact 1:1:1 location ratio and a 1:1 Normal:ICH ratio.

    Every location class is raised to the largest location-class count T and
    Normal to 3T. If Normal already exceeds 3T, T is raised to ceil(normal / 3)
    so that nothing is ever dropped. Output preserves input order, with the
    copies of a record adjacent to it.
    """
    groups: dict[int, list[int]] = defaultdict(list)
    for i, r in enumerate(records):
        groups[r.location].append(i)
    for key, name in [(NO_LOCATION, "Normal")] + list(enumerate(LOCATIONS)):
        if not groups.get(key):
            raise ValueError(f"cannot balance: class {name} is empty")
    t = max(len(groups[k]) for k in range(len(LOCATIONS)))
    t = max(t, math.ceil(len(groups[NO_LOCATION]) / len(LOCATIONS)))
    targets = {k: t for k in range(len(LOCATIONS))}
    targets[NO_LOCATION] = t * len(LOCATIONS)
    copies = [0] * len(records)
    for key, idx in groups.items():
        for i, c in zip(idx, _replicate([records[j] for j in idx], targets[key])):
            copies[i] = c
    out = []
    for r, c in zip(records, copies):
        out.extend([r] * c)
    return out


# ----------------------------------------------------------------- transforms


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: int = 224
    image_size: int | None = None  # model input extent; None -> crop_size
    max_rotation_degrees: float = 15.0
    sharpness_factor: float = 2.0
    sharpness_probability: float = 0.5
    channel_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    channel_std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def __post_init__(self):
        if self.crop_size <= 0:
            raise ValueError("crop_size must be positive")
        if any(s <= 0 for s in self.channel_std):
            raise ValueError("channel_std components must be positive")
        if not 0 <= self.sharpness_probability <= 1:
            raise ValueError("sharpness_probability must lie in [0, 1]")
        if self.sharpness_factor < 0:
            raise ValueError("sharpness_factor must be >= 0")
        object.__setattr__(self, "channel_mean", tuple(float(v) for v in self.channel_mean))
        object.__setattr__(self, "channel_std", tuple(float(v) for v in self.channel_std))

    @property
    def out_size(self) -> int:
        return self.image_size or self.crop_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mean"] = list(self.channel_mean)
        d["channel_std"] = list(self.channel_std)
        return d


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    """Centered size x size window; an odd margin leaves the extra pixel on the right/bottom."""
    h, w = image.shape[-2:]
    if h < size or w < size:
        raise ValueError(f"cannot crop {size}x{size} from a {h}x{w} image")
    top = (h - size) // 2
    left = (w - size) // 2
    return image[..., top : top + size, left : left + size]


def rotate(image: np.ndarray, angle: float, mode: str = "bilinear") -> np.ndarray:
    """Rotate counter-clockwise by ``angle`` degrees about the image center; zero fill."""
    img = np.asarray(image, dtype=np.float64)
    if angle == 0:
        return img.copy()
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)
    dy, dx = _centered_grid(h, w)
    # inverse map: output pixel -> source location (image y axis points down)
    sx = c * dx - s * dy + cx
    sy = s * dx + c * dy + cy
    # a one-pixel zero border lets out-of-range taps clip onto zeros
    pad = np.zeros((h + 2, w + 2))
    pad[1:-1, 1:-1] = img
    flat = pad.ravel()
    if mode == "nearest":
        ix = np.clip(np.rint(sx).astype(np.int64) + 1, 0, w + 1)
        iy = np.clip(np.rint(sy).astype(np.int64) + 1, 0, h + 1)
        return flat[iy * (w + 2) + ix]
    if mode != "bilinear":
        raise ValueError(f"unknown interpolation mode {mode!r}")
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    xa = np.clip(x0.astype(np.int64) + 1, 0, w + 1)
    xb = np.clip(x0.astype(np.int64) + 2, 0, w + 1)
    ya = np.clip(y0.astype(np.int64) + 1, 0, h + 1) * (w + 2)
    yb = np.clip(y0.astype(np.int64) + 2, 0, h + 1) * (w + 2)
    top = (1 - fx) * flat[ya + xa] + fx * flat[ya + xb]
    bottom = (1 - fx) * flat[yb + xa] + fx * flat[yb + xb]
    return (1 - fy) * top + fy * bottom


@lru_cache(maxsize=8)
def _centered_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return ys - (h - 1) / 2.0, xs - (w - 1) / 2.0


SHARPNESS_KERNEL = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


def smooth(image: np.ndarray) -> np.ndarray:
    """3x3 smoothing by SHARPNESS_KERNEL; the one-pixel border keeps its original values."""
    img = np.asarray(image, dtype=np.float64)
    out = img.copy()
    h, w = img.shape
    if h < 3 or w < 3:
        return out
    acc = np.zeros((h - 2, w - 2))
    for dy in range(3):
        for dx in range(3):
            acc += SHARPNESS_KERNEL[dy, dx] * img[dy : dy + h - 2, dx : dx + w - 2]
    out[1:-1, 1:-1] = acc
    return out


def adjust_sharpness(image: np.ndarray, factor: float, applied: bool = True, max_value: float = 255.0) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if not applied or factor == 1:
        return img.copy()
    if factor < 0:
        raise ValueError("sharpness factor must be >= 0")
    blur = smooth(img)
    return np.clip(blur + factor * (img - blur), 0.0, max_value)


def resize(image: np.ndarray, size: int) -> np.ndarray:
    """Area-average downsampling by an integer factor (bilinear zoom otherwise)."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if (h, w) == (size, size):
        return img
    if h % size == 0 and w % size == 0:
        fy, fx = h // size, w // size
        return img.reshape(size, fy, size, fx).mean(axis=(1, 3))
    from scipy import ndimage

    return ndimage.zoom(img, (size / h, size / w), order=1)


def to_model_input(image: np.ndarray, cfg: AugmentConfig, dtype=np.float32) -> np.ndarray:
    """Single-channel 0..255 image -> normalized (3, h, w) array."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel image, got shape {img.shape}")
    x = img / 255.0
    mean = np.asarray(cfg.channel_mean).reshape(3, 1, 1)
    std = np.asarray(cfg.channel_std).reshape(3, 1, 1)
    return ((x[None] - mean) / std).astype(dtype)


def eval_transform(image: np.ndarray, cfg: AugmentConfig, dtype=np.float32) -> np.ndarray:
    img = center_crop(np.asarray(image, dtype=np.float64), cfg.crop_size)
    return to_model_input(resize(img, cfg.out_size), cfg, dtype)


def train_transform(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    img = center_crop(np.asarray(image, dtype=np.float64), cfg.crop_size)
    angle = rng.uniform(-cfg.max_rotation_degrees, cfg.max_rotation_degrees)
    img = rotate(img, angle)
    applied = rng.random() < cfg.sharpness_probability
    img = adjust_sharpness(img, cfg.sharpness_factor, applied)
    return to_model_input(resize(img, cfg.out_size), cfg, dtype)


def sample_stream(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Augmentation draws for one sample, independent of worker scheduling."""
    return rngmod.stream(seed, "augment", epoch, index)


# -------------------------------------------------------------------- splits


def split(records: Iterable[Record], ratios: Sequence[float], seed: int, root=None) -> DatasetIndex:
    """Assign whole patients to train/val/test by cumulative ratio after a seeded shuffle."""
    records = list(records)
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    patients = sorted({r.patient for r in records})
    order = rngmod.stream(seed, "split").permutation(len(patients))
    shuffled = [patients[i] for i in order]
    n = len(shuffled)
    bounds = [0]
    acc = 0.0
    for r in ratios:
        acc += r
        bounds.append(min(n, int(round(acc * n))))
    bounds[-1] = n
    assign = {}
    for s, name in enumerate(SPLITS):
        chunk = shuffled[bounds[s] : bounds[s + 1]]
        if ratios[s] > 0 and not chunk:
            raise ValueError(f"split {name!r} received no patients ({n} patients, ratios {ratios})")
        for p in chunk:
            assign[p] = name
    return DatasetIndex([replace(r, split=assign[r.patient]) for r in records], Path(root or "."))
