"""DTV1 tensor container, model checkpoints and pretrained-backbone loading.

Layout::

    b"DTV1"
    uint64 little-endian  manifest length in bytes
    manifest              UTF-8 JSON
    payload               raw little-endian tensor values

The manifest has a ``tensors`` list of ``{name, dtype, shape, offset}``
records (offset relative to the payload start, dtype ``"f32"`` or ``"f64"``)
plus free-form ``config``, ``rng`` and ``optimizer`` sections.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import DTViT, ModelConfig, param_shapes
from .optim import OptimState

MAGIC = b"DTV1"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_CODES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

OPT_M = "optim.m."
OPT_V = "optim.v."


class CheckpointError(ValueError):
    pass


@dataclass
class Container:
    manifest: dict
    tensors: dict[str, np.ndarray]


def write_container(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    records = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        records.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * arr.dtype.itemsize
    manifest = dict(meta or {})
    manifest["tensors"] = records
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            f.write(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    os.replace(tmp, path)


def read_manifest(path) -> tuple[dict, int]:
    """Return (manifest, payload start) after validating every tensor record."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        raw = f.read(8)
        if len(raw) != 8:
            raise CheckpointError(f"{path}: truncated header")
        (n,) = struct.unpack("<Q", raw)
        if 12 + n > size:
            raise CheckpointError(f"{path}: truncated manifest ({n} bytes declared)")
        try:
            manifest = json.loads(f.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: unreadable manifest: {e}") from None
    start = 12 + n
    payload = size - start
    spans = []
    seen = set()
    for rec in manifest.get("tensors", []):
        name = rec["name"]
        if name in seen:
            raise CheckpointError(f"{path}: tensor {name} listed twice")
        seen.add(name)
        if rec["dtype"] not in _DTYPES:
            raise CheckpointError(f"{path}: {name} has unknown dtype {rec['dtype']!r}")
        nbytes = int(np.prod(rec["shape"], dtype=np.int64)) * _DTYPES[rec["dtype"]].itemsize
        lo, hi = int(rec["offset"]), int(rec["offset"]) + nbytes
        if lo < 0 or hi > payload:
            raise CheckpointError(
                f"{path}: truncated payload: {name} needs bytes [{lo}, {hi}) of {payload}"
            )
        spans.append((lo, hi, name))
    spans.sort()
    for (lo1, hi1, a), (lo2, _, b) in zip(spans, spans[1:]):
        if lo2 < hi1:
            raise CheckpointError(f"{path}: tensors {a} and {b} overlap")
    return manifest, start


def read_container(path, names=None) -> Container:
    manifest, start = read_manifest(path)
    wanted = None if names is None else set(names)
    tensors = {}
    with open(path, "rb") as f:
        for rec in manifest["tensors"]:
            if wanted is not None and rec["name"] not in wanted:
                continue
            dt = _DTYPES[rec["dtype"]]
            count = int(np.prod(rec["shape"], dtype=np.int64))
            f.seek(start + rec["offset"])
            arr = np.frombuffer(f.read(count * dt.itemsize), dtype=dt, count=count)
            tensors[rec["name"]] = arr.reshape(rec["shape"]).astype(dt.newbyteorder("="))
    return Container(manifest, tensors)


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(model: DTViT, path, state: OptimState | None = None, extra: dict | None = None) -> None:
    tensors = {name: p.data for name, p in model.params.items()}
    meta = {
        "format": "dtvit-checkpoint",
        "config": model.cfg.to_dict(),
        "rng": {"seed": model.seed},
    }
    if state is not None:
        meta["optimizer"] = state.hyper()
        for name in model.params:
            if name in state.m:
                tensors[OPT_M + name] = state.m[name]
                tensors[OPT_V + name] = state.v[name]
    if extra:
        meta["extra"] = extra
    write_container(path, tensors, meta)


def _check_against(expected: dict[str, tuple], found: dict[str, tuple], path) -> None:
    for name, shape in expected.items():
        if name not in found:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if tuple(found[name]) != tuple(shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: checkpoint {tuple(found[name])} vs model {tuple(shape)}"
            )


def load_checkpoint(path, model: DTViT | None = None, with_optimizer: bool = False):
    """Load a checkpoint into ``model`` (or a freshly built one from the stored config).

    Returns the model, or ``(model, OptimState | None)`` with ``with_optimizer``.
    """
    manifest, _ = read_manifest(path)
    if "config" not in manifest:
        raise CheckpointError(f"{path}: no model config in manifest")
    if model is None:
        cfg = ModelConfig.from_dict(manifest["config"])
        dtypes = {r["dtype"] for r in manifest["tensors"]}
        dtype = np.float64 if dtypes == {"f64"} else np.float32
        model = DTViT(cfg, seed=manifest.get("rng", {}).get("seed", 0), dtype=dtype)
    found = {r["name"]: tuple(r["shape"]) for r in manifest["tensors"]}
    expected = {k: p.shape for k, p in model.params.items()}
    _check_against(expected, found, path)
    unexpected = [n for n in found if n not in expected and not n.startswith(("optim.m.", "optim.v."))]
    if unexpected:
        raise CheckpointError(f"{path}: unexpected parameter {unexpected[0]}")
    box = read_container(path)
    model.load_state_dict({k: box.tensors[k] for k in expected})
    if not with_optimizer:
        return model
    state = None
    if "optimizer" in manifest:
        state = OptimState(**manifest["optimizer"])
        for name in expected:
            if OPT_M + name in box.tensors:
                state.m[name] = box.tensors[OPT_M + name].astype(model.dtype)
                state.v[name] = box.tensors[OPT_V + name].astype(model.dtype)
    return model, state


# ------------------------------------------------------------------ pretrained


@dataclass
class LoadReport:
    loaded: list[str] = field(default_factory=list)
    initialized: list[str] = field(default_factory=list)
    ignored: list[str] = field(default_factory=list)

    @property
    def blocks_loaded(self) -> int:
        return len({n.split(".")[1] for n in self.loaded if n.startswith("blocks.")})

    def summary(self) -> str:
        return (
            f"loaded {len(self.loaded)} tensors ({self.blocks_loaded} blocks), "
            f"initialized {len(self.initialized)}, ignored {len(self.ignored)}"
        )


def _is_head(name: str) -> bool:
    return name.startswith(("head.", "head1.", "head2."))


def plan_pretrained(path, cfg: ModelConfig) -> LoadReport:
    """Validate a backbone file against ``cfg`` without reading the payload."""
    manifest, _ = read_manifest(path)
    found = {r["name"]: tuple(r["shape"]) for r in manifest.get("tensors", [])}
    encoder = {k: v for k, v in param_shapes(cfg, reference_head=0).items()}
    if not any(n in encoder for n in found):
        raise CheckpointError(f"{path}: no encoder parameters found")
    _check_against(encoder, found, path)
    report = LoadReport()
    report.loaded = [n for n in encoder]
    report.ignored = [n for n in found if n not in encoder]
    report.initialized = [n for n in param_shapes(cfg) if n not in encoder]
    return report


def load_pretrained(path, model: DTViT) -> LoadReport:
    """Load encoder weights by name; heads are (re)initialized, foreign tensors ignored."""
    report = plan_pretrained(path, model.cfg)
    box = read_container(path, names=report.loaded)
    for name in report.loaded:
        model.params[name].data = np.ascontiguousarray(box.tensors[name], dtype=model.dtype)
    model.reinit(report.initialized)
    return report
