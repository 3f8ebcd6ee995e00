"""Run configuration: documented defaults, JSON file overlay, flag overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from .datapipe import AugmentConfig
from .morph import MorphParams
from .model import ModelConfig, preset
from .phantom import PhantomSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _section(obj, drop=()) -> dict:
    d = obj.to_dict()
    for k in drop:
        d.pop(k, None)
    return d


def defaults() -> dict:
    return {
        "seed": 0,
        "model": {"preset": "tiny", "head_hidden": None, "dtype": "float32"},
        "train": _section(TrainConfig(), drop=("seed",)),
        "morph": _section(MorphParams()),
        "augment": _section(AugmentConfig()),
        "phantom": _section(PhantomSpec()),
        "data": {"split": [0.8, 0.1, 0.1], "slices_per_patient": 64},
    }


def merge(base: dict, override: dict, where: str = "") -> dict:
    """Deep-merge ``override`` into a copy of ``base``; unknown keys are rejected."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        path = f"{where}.{k}" if where else k
        if k not in out:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path} must be a section")
            out[k] = merge(out[k], v, path)
        else:
            out[k] = v
    return out


def load(path=None) -> dict:
    cfg = defaults()
    if path is not None:
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
        cfg = merge(cfg, data)
    return cfg


def set_value(cfg: dict, dotted: str, value: Any) -> None:
    """Override ``section.key`` in place, rejecting unknown keys."""
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    node[parts[-1]] = value


def parse_assignment(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


# ----------------------------------------------------------- typed accessors


def _build(kind, section: dict, name: str):
    try:
        return kind(**section)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid [{name}] section: {e}") from None


def model_config(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    try:
        mc = preset(m["preset"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if m.get("head_hidden") is not None:
        mc = replace(mc, head_hidden=int(m["head_hidden"]))
    return mc


def model_dtype(cfg: dict):
    name = cfg["model"]["dtype"]
    if name not in ("float32", "float64"):
        raise ConfigError(f"model.dtype must be float32 or float64, got {name!r}")
    return np.dtype(name)


def train_config(cfg: dict) -> TrainConfig:
    return _build(TrainConfig, dict(cfg["train"], seed=cfg["seed"]), "train")


def morph_params(cfg: dict) -> MorphParams:
    section = dict(cfg["morph"])
    if section.get("window") is not None:
        w = section["window"]
        if not (isinstance(w, (list, tuple)) and len(w) == 2):
            raise ConfigError("morph.window must be [center, width] or null")
        section["window"] = tuple(w)
    return _build(MorphParams, section, "morph")


def augment_config(cfg: dict, model: ModelConfig | None = None) -> AugmentConfig:
    section = dict(cfg["augment"])
    for k in ("channel_mean", "channel_std"):
        section[k] = tuple(section[k])
    aug = _build(AugmentConfig, section, "augment")
    if aug.image_size is None and model is not None:
        aug = replace(aug, image_size=model.encoder.image_size)
    return aug


def phantom_spec(cfg: dict) -> PhantomSpec:
    try:
        return PhantomSpec.from_dict(cfg["phantom"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid [phantom] section: {e}") from None
