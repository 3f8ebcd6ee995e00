"""Synthetic head-CT phantoms with hemorrhage blobs and fixation-brace arcs.

Geometry (image rows grow downward), in coordinates normalized to the brain
ellipse (u = dx / brain_rx, v = dy / brain_ry, rho = hypot(u, v)):

* Deep: blob center with rho < 0.25
* Lobar: rho in [0.75, 1), within ``lobar_half_angle`` of straight up
* Subtentorial: below v = 0.5 (and in the lower 30% of the head), near the midline

The brace is a pair of thin arcs left and right of the head plus rods running
to the image edge, always outside the head ellipse. Intensities are in a
signed 16-bit, Hounsfield-like scale.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import raster
from . import rng as rngmod
from .datapipe import DatasetIndex, Record
from .heads import LOCATIONS, NO_LOCATION, LabeledSample

CLASSES = ("Normal",) + LOCATIONS


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 256
    center_jitter: float = 4.0
    head_rx: tuple[float, float] = (84.0, 94.0)
    head_ry: tuple[float, float] = (100.0, 110.0)
    skull_thickness: tuple[float, float] = (10.0, 14.0)
    background: int = -1000
    skull_level: int = 1200
    brain_level: int = 35
    noise_amplitude: float = 3.0
    texture_amplitude: float = 4.0
    blob_radius: tuple[float, float] = (8.0, 12.0)
    blob_level: int = 80
    deep_rho: float = 0.25
    lobar_rho: float = 0.75
    lobar_half_angle: float = 50.0
    subtentorial_v: float = 0.5
    subtentorial_u: float = 0.3
    brace_gap: tuple[float, float] = (6.0, 12.0)
    brace_width: float = 4.0
    brace_half_angle: float = 35.0
    brace_level: int = 500

    def __post_init__(self):
        if self.size < 32:
            raise ValueError("phantom extents must be >= 32")
        if self.blob_level - self.brain_level < 4 * self.noise_amplitude + self.texture_amplitude:
            raise ValueError("blob must exceed the brain level by at least 4x the noise amplitude")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class Phantom:
    scan: np.ndarray  # int16 (size, size)
    sample: LabeledSample
    blob_mask: np.ndarray
    brace_mask: np.ndarray
    head_mask: np.ndarray
    brain_mask: np.ndarray
    blob_center: tuple[float, float] | None  # (u, v) in brain-normalized units
    geometry: dict


class InfeasibleGeometry(ValueError):
    pass


def _ellipse(ys, xs, cy, cx, ry, rx) -> np.ndarray:
    return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2


def _class_index(cls: str | int) -> int:
    if isinstance(cls, str):
        try:
            return CLASSES.index(cls)
        except ValueError:
            raise ValueError(f"unknown phantom class {cls!r}; choose from {CLASSES}") from None
    if not 0 <= cls < len(CLASSES):
        raise ValueError(f"phantom class index {cls} out of range")
    return cls


def _blob_center(kind: int, g: np.random.Generator, spec: PhantomSpec, geo: dict, r_blob: float):
    """Rejection-sample a blob center (u, v) in the class region that keeps the disk inside the brain."""
    brx, bry = geo["brain_rx"], geo["brain_ry"]
    margin = (r_blob + 1.5) / min(brx, bry)
    rho_max = 1.0 - margin
    for _ in range(1000):
        if kind == 1:  # Deep
            rho = spec.deep_rho * math.sqrt(g.random())
            phi = g.uniform(0, 2 * math.pi)
            u, v = rho * math.cos(phi), rho * math.sin(phi)
        elif kind == 2:  # Lobar: upper cortical band
            if rho_max <= spec.lobar_rho:
                break
            rho = g.uniform(spec.lobar_rho, rho_max)
            phi = math.radians(g.uniform(-spec.lobar_half_angle, spec.lobar_half_angle))
            u, v = rho * math.sin(phi), -rho * math.cos(phi)
        else:  # Subtentorial: inferior midline
            u = g.uniform(-spec.subtentorial_u, spec.subtentorial_u)
            v = g.uniform(spec.subtentorial_v, rho_max)
            rho = math.hypot(u, v)
        if rho >= rho_max:
            continue
        # keep the whole disk inside the brain ellipse (conservative check)
        px, py = u * brx, v * bry
        ok = True
        for a in np.linspace(0, 2 * math.pi, 24, endpoint=False):
            qx = px + (r_blob + 1.5) * math.cos(a)
            qy = py + (r_blob + 1.5) * math.sin(a)
            if (qx / brx) ** 2 + (qy / bry) ** 2 >= 1.0:
                ok = False
                break
        if kind == 3 and py / geo["head_ry"] < 0.4:
            ok = False
        if ok:
            return u, v
    raise InfeasibleGeometry(f"cannot place a {CLASSES[kind]} blob of radius {r_blob:.1f} in this head")


def generate(cls: str | int, spec: PhantomSpec = PhantomSpec(), seed: int = 0) -> Phantom:
    """Deterministic phantom for (class, spec, seed)."""
    kind = _class_index(cls)
    g = rngmod.stream(seed, "phantom", kind)
    n = spec.size
    c0 = (n - 1) / 2.0
    cy = c0 + g.uniform(-spec.center_jitter, spec.center_jitter)
    cx = c0 + g.uniform(-spec.center_jitter, spec.center_jitter)
    rx = g.uniform(*spec.head_rx)
    ry = g.uniform(*spec.head_ry)
    t = g.uniform(*spec.skull_thickness)
    geo = {
        "cy": cy, "cx": cx, "head_rx": rx, "head_ry": ry,
        "brain_rx": rx - t, "brain_ry": ry - t,
    }
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    head = _ellipse(ys, xs, cy, cx, ry, rx) <= 1.0
    brain = _ellipse(ys, xs, cy, cx, ry - t, rx - t) <= 1.0
    skull = head & ~brain

    noise = g.uniform(-spec.noise_amplitude, spec.noise_amplitude, size=(n, n))
    fy, fx, ph = g.uniform(0.01, 0.03), g.uniform(0.01, 0.03), g.uniform(0, 2 * math.pi)
    texture = spec.texture_amplitude * np.sin(2 * math.pi * (fy * ys + fx * xs) + ph)

    img = np.full((n, n), float(spec.background)) + noise
    img[skull] = spec.skull_level + 10 * noise[skull]
    img[brain] = spec.brain_level + texture[brain] + noise[brain]

    blob = np.zeros((n, n), dtype=bool)
    center = None
    if kind:
        r_blob = g.uniform(*spec.blob_radius)
        u, v = _blob_center(kind, g, spec, geo, r_blob)
        by, bx = cy + v * geo["brain_ry"], cx + u * geo["brain_rx"]
        blob = ((ys - by) ** 2 + (xs - bx) ** 2 <= r_blob**2) & brain
        img[blob] = spec.blob_level + noise[blob]
        center = (u, v)
        geo.update(blob_y=by, blob_x=bx, blob_r=r_blob)

    brace = _brace(ys, xs, g, spec, geo)
    brace &= ~head
    img[brace] = spec.brace_level + 10 * noise[brace]

    scan = np.clip(np.rint(img), -32768, 32767).astype(np.int16)
    sample = LabeledSample(scan, 0 if kind == 0 else 1, None if kind == 0 else kind - 1)
    return Phantom(scan, sample, blob, brace, head, brain, center, geo)


def _brace(ys, xs, g: np.random.Generator, spec: PhantomSpec, geo: dict) -> np.ndarray:
    cy, cx, rx, ry = geo["cy"], geo["cx"], geo["head_rx"], geo["head_ry"]
    n = ys.shape[0]
    gap = g.uniform(*spec.brace_gap)
    inner_rx, inner_ry = rx + gap, ry + gap
    outer_rx, outer_ry = inner_rx + spec.brace_width, inner_ry + spec.brace_width
    ring = (_ellipse(ys, xs, cy, cx, inner_ry, inner_rx) > 1.0) & (
        _ellipse(ys, xs, cy, cx, outer_ry, outer_rx) <= 1.0
    )
    ang = np.degrees(np.arctan2(ys - cy, xs - cx))
    half = spec.brace_half_angle
    left = np.abs(np.abs(ang) - 180.0) <= half
    right = np.abs(ang) <= half
    mask = ring & (left | right)
    # rods from the arcs to the image edges
    rod = np.abs(ys - cy) <= spec.brace_width / 2.0
    rod &= (xs <= cx - inner_rx) | (xs >= cx + inner_rx)
    mask |= rod
    return mask & (ys >= 0) & (ys < n)


# ------------------------------------------------------------------- datasets


def generate_dataset(
    counts: Sequence[int],
    out_dir,
    spec: PhantomSpec = PhantomSpec(),
    seed: int = 0,
    slices_per_patient: int = 64,
) -> DatasetIndex:
    """Write ``counts`` (Normal, Deep, Lobar, Subtentorial) phantoms plus ``index.tsv``."""
    counts = [int(c) for c in counts]
    if len(counts) != 4 or any(c < 0 for c in counts):
        raise ValueError("counts must be four non-negative integers (Normal, Deep, Lobar, Subtentorial)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kinds = np.repeat(np.arange(4), counts)
    kinds = kinds[rngmod.stream(seed, "dataset-order").permutation(kinds.size)]
    records = []
    for i, kind in enumerate(kinds):
        kind = int(kind)
        name = CLASSES[kind]
        rid = f"{i:05d}"
        fname = f"{rid}_{name.lower()}.dtr"
        ph = generate(kind, spec, rngmod.derive_seed(seed, "phantom-image", i))
        raster.write_dtr(out / fname, ph.scan)
        loc = NO_LOCATION if kind == 0 else kind - 1
        records.append(Record(rid, fname, 0 if kind == 0 else 1, loc, f"P{i // slices_per_patient:04d}"))
    index = DatasetIndex(records, out)
    index.write(out / "index.tsv")
    return index
