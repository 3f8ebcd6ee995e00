"""DTViT: shared ViT encoder plus the presence and location heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .encoder import (
    LARGE,
    TINY,
    EncoderConfig,
    count_encoder_params,
    encoder_forward,
    encoder_param_shapes,
    init_param,
)
from .heads import Prediction, count_head_params, dual_forward, head_param_shapes, predict_from_logits
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head_hidden: int | None = None  # defaults to the embedding dim

    @property
    def hidden(self) -> int:
        return self.head_hidden or self.encoder.dim

    def to_dict(self) -> dict:
        return {"encoder": asdict(self.encoder), "head_hidden": self.head_hidden}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(EncoderConfig(**d["encoder"]), d.get("head_hidden"))


PRESETS = {
    "tiny": ModelConfig(TINY),
    "large": ModelConfig(LARGE),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if overrides:
        cfg = replace(cfg, encoder=replace(cfg.encoder, **overrides))
    return cfg


def reference_head_shapes(dim: int, n_classes: int) -> dict[str, tuple[int, ...]]:
    """Single linear classifier of the ImageNet-style backbone checkpoint."""
    return {"head.weight": (n_classes, dim), "head.bias": (n_classes,)}


def param_shapes(cfg: ModelConfig, reference_head: int | None = None) -> dict[str, tuple[int, ...]]:
    """Shape manifest. With ``reference_head`` the dual heads are replaced by a
    single ``reference_head``-way linear head (the pretrained-backbone layout)."""
    shapes = encoder_param_shapes(cfg.encoder)
    if reference_head:
        shapes.update(reference_head_shapes(cfg.encoder.dim, reference_head))
    elif reference_head is None:
        shapes.update(head_param_shapes(cfg.encoder.dim, cfg.hidden))
    return shapes


def count_params(cfg: ModelConfig, reference_head: int | None = None) -> int:
    """Trainable-parameter count from the config alone.

    ``reference_head=None`` counts the dual heads, ``0`` the bare encoder,
    ``k > 0`` a single k-way linear head.
    """
    total = count_encoder_params(cfg.encoder)
    if reference_head is None:
        total += count_head_params(cfg.encoder.dim, cfg.hidden)
    elif reference_head:
        total += cfg.encoder.dim * reference_head + reference_head
    return total


class DTViT:
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        for name, shape in param_shapes(cfg).items():
            self.params[name] = self._fresh(name, shape)

    def _fresh(self, name: str, shape) -> Tensor:
        # one stream per tensor so re-initializing a subset is reproducible
        g = rngmod.stream(self.seed, "init", name)
        return Tensor(init_param(name, shape, g, self.dtype), requires_grad=True, name=name)

    def reinit(self, names) -> None:
        for name in names:
            self.params[name] = self._fresh(name, self.params[name].shape)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = [k for k in self.params if k not in state]
        if missing:
            raise KeyError(f"missing parameter: {missing[0]}")
        for k, p in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: got {arr.shape}, expected {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=self.dtype)

    def features(self, images) -> Tensor:
        return encoder_forward(images, self.params, self.cfg.encoder)

    def forward(self, images) -> tuple[Tensor, Tensor]:
        return dual_forward(self.features(images), self.params)

    __call__ = forward

    def predict(self, image) -> Prediction:
        """Classify a single image shaped (C, H, W) or (1, C, H, W)."""
        image = np.asarray(image)
        if image.ndim == 3:
            image = image[None]
        if image.ndim != 4 or image.shape[0] != 1:
            raise ValueError(f"predict takes one image, got shape {image.shape}")
        with no_grad():
            l1, l2 = self.forward(image)
        return predict_from_logits(l1.data, l2.data)
