"""ViT feature extractor: patching, patch embedding, class token, positional
embeddings and a stack of pre-norm Transformer blocks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


@dataclass(frozen=True)
class PatchConfig:
    channels: int
    height: int
    width: int
    patch: int

    def __post_init__(self):
        if min(self.channels, self.height, self.width, self.patch) <= 0:
            raise ValueError(f"patch config extents must be positive: {self}")
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(
                f"image {self.height}x{self.width} is not divisible by patch size {self.patch}"
            )

    @property
    def n_patches(self) -> int:
        return self.height * self.width // (self.patch * self.patch)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 224
    channels: int = 3
    patch_size: int = 16
    dim: int = 1024
    depth: int = 24
    heads: int = 16
    mlp_dim: int = 4096
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.depth < 0 or self.dim <= 0 or self.heads <= 0 or self.mlp_dim <= 0:
            raise ValueError(f"invalid encoder config: {self}")
        if self.dim % self.heads:
            raise ValueError(f"embedding dim {self.dim} is not divisible by {self.heads} heads")
        self.patch_config  # validates divisibility

    @property
    def patch_config(self) -> PatchConfig:
        return PatchConfig(self.channels, self.image_size, self.image_size, self.patch_size)

    @property
    def n_tokens(self) -> int:
        return self.patch_config.n_patches + 1

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


# ViT-Large/16 at 224x224
LARGE = EncoderConfig()
TINY = EncoderConfig(image_size=32, channels=3, patch_size=8, dim=64, depth=2, heads=4, mlp_dim=128)


def encoder_param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    D, M = cfg.dim, cfg.mlp_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (D, cfg.patch_config.patch_dim),
        "patch_embed.bias": (D,),
        "cls_token": (D,),
        "pos_embed": (cfg.n_tokens, D),
    }
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        shapes[p + "ln1.gamma"] = (D,)
        shapes[p + "ln1.beta"] = (D,)
        for w in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{w}"] = (D, D)
            shapes[p + f"attn.b{w}"] = (D,)
        shapes[p + "ln2.gamma"] = (D,)
        shapes[p + "ln2.beta"] = (D,)
        shapes[p + "mlp.fc1.weight"] = (M, D)
        shapes[p + "mlp.fc1.bias"] = (M,)
        shapes[p + "mlp.fc2.weight"] = (D, M)
        shapes[p + "mlp.fc2.bias"] = (D,)
    shapes["norm.gamma"] = (D,)
    shapes["norm.beta"] = (D,)
    return shapes


def count_encoder_params(cfg: EncoderConfig) -> int:
    """Closed-form trainable-parameter count (no allocation)."""
    D, M, L = cfg.dim, cfg.mlp_dim, cfg.depth
    embed = D * cfg.patch_config.patch_dim + D
    tokens = D + cfg.n_tokens * D
    block = 2 * 2 * D + 3 * (D * D + D) + (D * D + D) + (D * M + M) + (M * D + D)
    return embed + tokens + L * block + 2 * D


_ZERO_INIT = {"beta", "bias", "bq", "bk", "bv", "bo"}


def init_param(name: str, shape: tuple[int, ...], rng: np.random.Generator, dtype) -> np.ndarray:
    """Truncated normal (std 0.02, cut at 2 std) for weights and embeddings,
    zeros for biases and LN beta, ones for LN gamma."""
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gamma":
        return np.ones(shape, dtype=dtype)
    if leaf in _ZERO_INIT:
        return np.zeros(shape, dtype=dtype)
    return trunc_normal(rng, shape, 0.02).astype(dtype)


def trunc_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


# -------------------------------------------------------------------- forward


def patchify(images: Tensor, patch: int) -> Tensor:
    """(B, c, h, w) -> (B, N, c*p*p); also accepts a single (c, h, w) image.

    Patches are ordered row-major over the patch grid; each row is the
    row-major flattening of its (c, p, p) block.
    """
    if not isinstance(images, Tensor):
        images = T.as_tensor(images)
    single = images.ndim == 3
    if single:
        images = images.reshape((1,) + images.shape)
    if images.ndim != 4:
        raise DimensionError(f"patchify expects (B, c, h, w) or (c, h, w), got {images.shape}")
    b, c, h, w = images.shape
    PatchConfig(c, h, w, patch)
    gh, gw = h // patch, w // patch
    x = images.reshape(b, c, gh, patch, gw, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    x = x.reshape(b, gh * gw, c * patch * patch)
    return x[0] if single else x


def embed_and_assemble(patches: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Project patches and prepend the class token; add positional embeddings."""
    W, b = params["patch_embed.weight"], params["patch_embed.bias"]
    cls, pos = params["cls_token"], params["pos_embed"]
    single = patches.ndim == 2
    if single:
        patches = patches.reshape((1,) + patches.shape)
    B, N, _ = patches.shape
    D = W.shape[0]
    if pos.shape != (N + 1, D) or cls.shape != (D,):
        raise DimensionError(
            f"embedding shapes inconsistent: {N} patches, W {W.shape}, cls {cls.shape}, pos {pos.shape}"
        )
    z = T.linear(patches, W, b)
    cls_rows = T.broadcast_to(cls.reshape(1, 1, D), (B, 1, D))
    tokens = T.add(T.concat([cls_rows, z], axis=1), pos)
    return tokens[0] if single else tokens


def mha(x: Tensor, params: Mapping[str, Tensor], heads: int, prefix: str = "", return_weights: bool = False):
    """Multi-head self-attention over the rows of ``x`` ((T, D) or (B, T, D))."""
    single = x.ndim == 2
    if single:
        x = x.reshape((1,) + x.shape)
    B, n, D = x.shape
    if D % heads:
        raise DimensionError(f"embedding dim {D} is not divisible by {heads} heads")
    d = D // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(B, n, heads, d).transpose(0, 2, 1, 3)

    q = split(T.linear(x, params[prefix + "wq"], params[prefix + "bq"]))
    k = split(T.linear(x, params[prefix + "wk"], params[prefix + "bk"]))
    v = split(T.linear(x, params[prefix + "wv"], params[prefix + "bv"]))
    scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(d))
    attn = T.softmax(scores, axis=-1)
    ctx = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, n, D)
    out = T.linear(ctx, params[prefix + "wo"], params[prefix + "bo"])
    if single:
        out = out[0]
    if return_weights:
        return out, (attn.data[0] if single else attn.data)
    return out


def mlp(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    h = T.gelu(T.linear(x, params[prefix + "fc1.weight"], params[prefix + "fc1.bias"]))
    return T.linear(h, params[prefix + "fc2.weight"], params[prefix + "fc2.bias"])


def encoder_block(x: Tensor, params: Mapping[str, Tensor], heads: int, prefix: str, eps: float = 1e-6) -> Tensor:
    # pre-norm: u = x + MHA(LN1(x)); y = u + MLP(LN2(u))
    h = T.layernorm(x, params[prefix + "ln1.gamma"], params[prefix + "ln1.beta"], eps)
    u = T.add(x, mha(h, params, heads, prefix + "attn."))
    h = T.layernorm(u, params[prefix + "ln2.gamma"], params[prefix + "ln2.beta"], eps)
    return T.add(u, mlp(h, params, prefix + "mlp."))


def encoder_forward(images, params: Mapping[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Images -> full token sequence after the final layer norm, (B, N+1, D)."""
    if not isinstance(images, Tensor):
        images = Tensor(images, dtype=params["pos_embed"].dtype)
    x = embed_and_assemble(patchify(images, cfg.patch_size), params)
    for i in range(cfg.depth):
        x = encoder_block(x, params, cfg.heads, f"blocks.{i}.", cfg.ln_eps)
    return T.layernorm(x, params["norm.gamma"], params["norm.beta"], cfg.ln_eps)
