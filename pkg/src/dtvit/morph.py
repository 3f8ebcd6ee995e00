"""Fixation-brace removal: build a head mask from a copy of the raw scan and
apply it to the other copy, producing an 8-bit image."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

INT16_MIN, INT16_MAX = -32768, 32767


@dataclass(frozen=True)
class MorphParams:
    # None -> 10% of the scan's maximum value
    binarize_threshold: float | None = None
    erosion_radius: int = 3
    edge_columns: int = 2
    fill_connectivity: int = 4
    # (center, width) intensity window; None -> min-max over masked pixels
    window: tuple[float, float] | None = None

    def __post_init__(self):
        if self.erosion_radius < 0:
            raise ValueError("erosion_radius must be >= 0")
        if self.edge_columns < 0:
            raise ValueError("edge_columns must be >= 0")
        if self.fill_connectivity not in (4, 8):
            raise ValueError("fill_connectivity must be 4 or 8")
        if self.binarize_threshold is not None and not (
            INT16_MIN - 1 <= self.binarize_threshold <= INT16_MAX
        ):
            raise ValueError(f"threshold {self.binarize_threshold} outside the raw range")
        if self.window is not None:
            center, width = self.window
            if width <= 0:
                raise ValueError("window width must be positive")
            object.__setattr__(self, "window", (float(center), float(width)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window) if self.window else None
        return d


def check_scan(scan: np.ndarray) -> np.ndarray:
    scan = np.asarray(scan)
    if scan.ndim != 2:
        raise ValueError(f"scan must be 2-D, got shape {scan.shape}")
    if scan.dtype != np.int16:
        if scan.min(initial=0) < INT16_MIN or scan.max(initial=0) > INT16_MAX:
            raise ValueError("scan values outside the signed 16-bit range")
        scan = scan.astype(np.int16)
    return scan


def default_threshold(scan: np.ndarray) -> float:
    return 0.1 * float(np.max(scan))


def binarize(scan: np.ndarray, threshold: float) -> np.ndarray:
    return np.asarray(scan) > threshold


def disk_offsets(radius: int) -> list[tuple[int, int]]:
    r = int(radius)
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dx * dx + dy * dy <= r * r]


def erode_disk(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion by the disk {dx^2 + dy^2 <= r^2}; pixels outside the image count as false."""
    mask = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    r = int(radius)
    h, w = mask.shape
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    padded[r : r + h, r : r + w] = mask
    out = np.ones_like(mask)
    for dy, dx in disk_offsets(r):
        out &= padded[r + dy : r + dy + h, r + dx : r + dx + w]
    return out


def zero_edge_columns(mask: np.ndarray, k: int) -> np.ndarray:
    mask = np.array(mask, dtype=bool)
    w = mask.shape[1]
    if k < 0 or 2 * k > w:
        raise ValueError(f"cannot zero {k} columns per side of a {w}-wide mask")
    if k:
        mask[:, :k] = False
        mask[:, w - k :] = False
    return mask


_STRUCT = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def border_background(mask: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """False pixels connected to the image border through false pixels."""
    mask = np.asarray(mask, dtype=bool)
    if connectivity not in _STRUCT:
        raise ValueError("connectivity must be 4 or 8")
    labels, _ = ndimage.label(~mask, structure=_STRUCT[connectivity])
    edge = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    keep = np.unique(edge[edge > 0])
    return np.isin(labels, keep)


def fill_holes(mask: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Set every background pixel not reachable from the border to true."""
    return ~border_background(mask, connectivity)


def flood_fill_from(mask: np.ndarray, seed: tuple[int, int], connectivity: int = 4) -> np.ndarray:
    """Seeded variant: set the background component containing ``seed`` to true."""
    mask = np.asarray(mask, dtype=bool)
    if mask[seed]:
        return mask.copy()
    labels, _ = ndimage.label(~mask, structure=_STRUCT[connectivity])
    return mask | (labels == labels[seed])


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def mask_and_export(scan: np.ndarray, mask: np.ndarray, window: tuple[float, float] | None = None) -> np.ndarray:
    """Zero pixels outside ``mask`` and map the rest linearly onto 0..255."""
    scan = np.asarray(scan)
    mask = np.asarray(mask, dtype=bool)
    if scan.shape != mask.shape:
        raise ValueError(f"mask {mask.shape} does not match scan {scan.shape}")
    out = np.zeros(scan.shape, dtype=np.uint8)
    if not mask.any():
        return out
    vals = scan[mask].astype(np.float64)
    if window is not None:
        center, width = window
        lo, hi = center - width / 2.0, center + width / 2.0
        vals = np.clip(vals, lo, hi)
    else:
        lo, hi = vals.min(), vals.max()
    if hi <= lo:
        return out
    scaled = _round_half_away((vals - lo) / (hi - lo) * 255.0)
    out[mask] = np.clip(scaled, 0, 255).astype(np.uint8)
    return out


def head_mask(scan: np.ndarray, params: MorphParams = MorphParams()) -> np.ndarray:
    scan = check_scan(scan)
    thr = params.binarize_threshold
    if thr is None:
        thr = default_threshold(scan)
    m = binarize(scan, thr)
    m = erode_disk(m, params.erosion_radius)
    m = zero_edge_columns(m, params.edge_columns)
    return fill_holes(m, params.fill_connectivity)


def preprocess(scan: np.ndarray, params: MorphParams = MorphParams()) -> np.ndarray:
    """Raw int16 scan -> brace-free 8-bit image of the same extents."""
    scan = check_scan(scan)
    mask = head_mask(scan.copy(), params)
    return mask_and_export(scan, mask, params.window)
