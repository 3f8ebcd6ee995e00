"""Two MLP decoders over the class-token feature and their joint loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

PRESENCE = ("Normal", "ICH")
LOCATIONS = ("Deep", "Lobar", "Subtentorial")
NO_LOCATION = -1

LOSS_WEIGHTS = (0.5, 0.5)


@dataclass
class LabeledSample:
    image: np.ndarray
    presence: int
    location: int | None = None

    def __post_init__(self):
        if self.presence not in (0, 1):
            raise ValueError(f"presence must be 0 (Normal) or 1 (ICH), got {self.presence}")
        if (self.location is not None) != (self.presence == 1):
            raise ValueError("location label is required for ICH samples and forbidden for Normal ones")
        if self.location is not None and not 0 <= self.location < len(LOCATIONS):
            raise ValueError(f"location index {self.location} out of range")


def head_param_shapes(dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for name, k in (("head1", len(PRESENCE)), ("head2", len(LOCATIONS))):
        shapes[f"{name}.fc1.weight"] = (hidden, dim)
        shapes[f"{name}.fc1.bias"] = (hidden,)
        shapes[f"{name}.fc2.weight"] = (k, hidden)
        shapes[f"{name}.fc2.bias"] = (k,)
    return shapes


def count_head_params(dim: int, hidden: int) -> int:
    return sum(int(np.prod(s)) for s in head_param_shapes(dim, hidden).values())


def _head(x: Tensor, params: Mapping[str, Tensor], name: str) -> Tensor:
    h = T.gelu(T.linear(x, params[f"{name}.fc1.weight"], params[f"{name}.fc1.bias"]))
    return T.linear(h, params[f"{name}.fc2.weight"], params[f"{name}.fc2.bias"])


def dual_forward(features: Tensor, params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Apply both heads to the class-token row. (T, D) -> (2,), (3,); (B, T, D) -> (B, 2), (B, 3)."""
    if features.ndim not in (2, 3):
        raise DimensionError(f"dual_forward expects (T, D) or (B, T, D) features, got {features.shape}")
    dim = params["head1.fc1.weight"].shape[1]
    if features.shape[-1] != dim:
        raise DimensionError(f"feature dim {features.shape[-1]} does not match head input {dim}")
    cls = features[0] if features.ndim == 2 else features[:, 0]
    return _head(cls, params, "head1"), _head(cls, params, "head2")


@dataclass
class DualLoss:
    loss_1: Tensor
    loss_2: Tensor
    combined: Tensor
    n_location: int

    @property
    def value(self) -> float:
        return self.combined.item()


def location_mask(presence: Sequence[int], location: Sequence[int]) -> np.ndarray:
    """Boolean mask of samples carrying a location label; checks label consistency."""
    presence = np.asarray(presence, dtype=np.int64)
    location = np.asarray(location, dtype=np.int64)
    has_loc = location != NO_LOCATION
    if np.any(has_loc & (presence == 0)):
        bad = int(np.flatnonzero(has_loc & (presence == 0))[0])
        raise ValueError(f"sample {bad}: location label on a Normal sample")
    if np.any(~has_loc & (presence == 1)):
        bad = int(np.flatnonzero(~has_loc & (presence == 1))[0])
        raise ValueError(f"sample {bad}: ICH sample without a location label")
    return has_loc


def combined_loss(logits1: Tensor, presence, logits2: Tensor, location) -> DualLoss:
    """0.5 * CE(presence over all samples) + 0.5 * CE(location over ICH samples).

    ``location`` uses -1 for samples without a location label. A batch with no
    ICH samples contributes loss_2 = 0 (and no gradient to head 2).
    """
    mask = location_mask(presence, location)
    loss_1 = T.cross_entropy(logits1, presence)
    idx = np.flatnonzero(mask)
    if idx.size:
        loss_2 = T.cross_entropy(logits2[idx], np.asarray(location)[idx])
    else:
        loss_2 = Tensor(0.0, dtype=logits2.dtype)
    w1, w2 = LOSS_WEIGHTS
    combined = T.add(T.scale(loss_1, w1), T.scale(loss_2, w2))
    return DualLoss(loss_1, loss_2, combined, int(idx.size))


def argmax_low(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lower index
    return np.argmax(logits, axis=-1)


@dataclass(frozen=True)
class Prediction:
    presence: int
    location: int | None
    presence_probs: tuple[float, ...]
    location_probs: tuple[float, ...]

    @property
    def label(self) -> str:
        if self.location is None:
            return "NORMAL"
        return f"ICH {LOCATIONS[self.location]}"


def _softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def predict_from_logits(logits1, logits2) -> Prediction:
    """Presence by argmax; location reported only when presence is ICH."""
    l1 = np.asarray(logits1.data if isinstance(logits1, Tensor) else logits1).reshape(-1)
    l2 = np.asarray(logits2.data if isinstance(logits2, Tensor) else logits2).reshape(-1)
    presence = int(argmax_low(l1))
    location = int(argmax_low(l2)) if presence == 1 else None
    return Prediction(
        presence,
        location,
        tuple(float(v) for v in _softmax(l1)),
        tuple(float(v) for v in _softmax(l2)),
    )
