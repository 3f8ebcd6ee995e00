"""Training loop, evaluation and per-epoch history."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import datapipe, morph, raster
from . import rng as rngmod
from .datapipe import AugmentConfig, DatasetIndex, Record
from .heads import NO_LOCATION, argmax_low, combined_loss
from .model import DTViT
from .optim import OptimState, adamw_step, cosine_lr
from .tensor import no_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size_train: int | None = None  # None -> 32 with augmentation, 8 without
    batch_size_val: int = 32
    batch_size_test: int = 4
    lr: float = 2e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"  # or "cosine"
    augment: bool = True
    balance: bool = True
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        for name in ("batch_size_val", "batch_size_test"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size_train is not None and self.batch_size_train <= 0:
            raise ValueError("batch_size_train must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.schedule!r}")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ValueError("max_steps must be positive")

    @property
    def train_batch(self) -> int:
        if self.batch_size_train is not None:
            return self.batch_size_train
        return 32 if self.augment else 8

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------- data


class ImageSet:
    """Labelled 8-bit images held in memory, with a cached eval-time tensor stack."""

    def __init__(self, images: Sequence[np.ndarray], presence, location, ids=None, records=None):
        if len(images) != len(presence) or len(images) != len(location):
            raise ValueError("images and labels differ in length")
        self.images = [np.asarray(im) for im in images]
        self.presence = np.asarray(presence, dtype=np.int64)
        self.location = np.asarray(location, dtype=np.int64)
        self.ids = list(ids) if ids is not None else [str(i) for i in range(len(self.images))]
        self.records = records
        self._eval_cache: dict = {}

    def __len__(self) -> int:
        return len(self.images)

    @classmethod
    def from_index(cls, index: DatasetIndex, records: Sequence[Record] | None = None, morph_params=None) -> "ImageSet":
        records = list(index.records if records is None else records)
        params = morph_params or morph.MorphParams()
        images = []
        for r in records:
            path = index.resolve(r)
            img = raster.read_raster(path)
            if img.dtype == np.int16:
                img = morph.preprocess(img, params)
            images.append(img)
        return cls(
            images,
            [r.presence for r in records],
            [r.location for r in records],
            [r.id for r in records],
            records,
        )

    def eval_tensor(self, aug: AugmentConfig, dtype) -> np.ndarray:
        key = (aug.crop_size, aug.out_size, aug.channel_mean, aug.channel_std, np.dtype(dtype).str)
        if key not in self._eval_cache:
            self._eval_cache[key] = np.stack([datapipe.eval_transform(im, aug, dtype) for im in self.images])
        return self._eval_cache[key]

    def class_names(self) -> list[str]:
        from .heads import LOCATIONS

        return ["Normal" if p == 0 else LOCATIONS[l] for p, l in zip(self.presence, self.location)]


def balanced_order(data: ImageSet) -> np.ndarray:
    """Indices into ``data`` after replication-balancing."""
    recs = [
        Record(str(i), "", int(p), int(l), "-")
        for i, (p, l) in enumerate(zip(data.presence, data.location))
    ]
    return np.array([int(r.id) for r in datapipe.balance(recs)], dtype=np.int64)


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    loss: float
    acc_presence: float
    acc_location: float  # over samples with a location label
    presence_pred: np.ndarray
    location_pred: np.ndarray  # raw argmax of the location head, every sample
    presence_true: np.ndarray
    location_true: np.ndarray
    logits1: np.ndarray
    logits2: np.ndarray


def _accuracies(l1: np.ndarray, l2: np.ndarray, presence, location) -> tuple[int, int, int]:
    p1 = argmax_low(l1)
    p2 = argmax_low(l2)
    mask = location != NO_LOCATION
    return int((p1 == presence).sum()), int((p2[mask] == location[mask]).sum()), int(mask.sum())


def evaluate(model: DTViT, data: ImageSet, aug: AugmentConfig, batch_size: int = 32) -> EvalResult:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty split")
    x_all = data.eval_tensor(aug, model.dtype)
    l1s, l2s = [], []
    total_loss = 0.0
    with no_grad():
        for start in range(0, len(data), batch_size):
            sl = slice(start, start + batch_size)
            l1, l2 = model(x_all[sl])
            loss = combined_loss(l1, data.presence[sl], l2, data.location[sl])
            total_loss += loss.value * (l1.shape[0])
            l1s.append(l1.data)
            l2s.append(l2.data)
    l1 = np.concatenate(l1s)
    l2 = np.concatenate(l2s)
    c1, c2, n2 = _accuracies(l1, l2, data.presence, data.location)
    return EvalResult(
        loss=total_loss / len(data),
        acc_presence=c1 / len(data),
        acc_location=c2 / n2 if n2 else 0.0,
        presence_pred=argmax_low(l1),
        location_pred=argmax_low(l2),
        presence_true=data.presence.copy(),
        location_true=data.location.copy(),
        logits1=l1,
        logits2=l2,
    )


# ------------------------------------------------------------------ training

HISTORY_FIELDS = (
    "epoch",
    "steps",
    "lr",
    "train_loss",
    "val_loss",
    "train_acc_presence",
    "train_acc_location",
    "val_acc_presence",
    "val_acc_location",
)


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_state: dict[str, np.ndarray]
    initial_val: dict | None
    optimizer: OptimState
    steps: int
    seconds: float = 0.0

    def history_csv(self) -> str:
        return history_to_csv(self.history)


def history_to_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def read_history(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append({k: (int(v) if k in ("epoch", "steps") else float(v) if v != "" else None) for k, v in row.items()})
    return rows


def _batch_inputs(data: ImageSet, idx: np.ndarray, positions: np.ndarray, epoch: int,
                  cfg: TrainConfig, aug: AugmentConfig, dtype) -> np.ndarray:
    if not cfg.augment:
        return data.eval_tensor(aug, dtype)[idx]
    return np.stack([
        datapipe.train_transform(data.images[i], aug, datapipe.sample_stream(cfg.seed, epoch, int(pos)), dtype)
        for i, pos in zip(idx, positions)
    ])


def train(
    model: DTViT,
    train_set: ImageSet,
    val_set: ImageSet | None,
    cfg: TrainConfig = TrainConfig(),
    aug: AugmentConfig = AugmentConfig(),
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Fit ``model`` in place; returns history and the best-validation weights.

    The best epoch is the one with the lowest validation combined loss (the
    last epoch when there is no validation data).
    """
    if len(train_set) == 0:
        raise ValueError("training split is empty")
    has_val = val_set is not None and len(val_set) > 0
    t0 = time.perf_counter()
    order = balanced_order(train_set) if cfg.balance else np.arange(len(train_set))
    bs = cfg.train_batch
    steps_per_epoch = -(-len(order) // bs)
    total_steps = steps_per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    state = OptimState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay)

    initial_val = None
    if has_val:
        ev = evaluate(model, val_set, aug, cfg.batch_size_val)
        initial_val = {"val_loss": ev.loss, "val_acc_presence": ev.acc_presence, "val_acc_location": ev.acc_location}

    history: list[dict] = []
    best_loss = np.inf
    best_epoch = 0
    best_state = model.state_dict()
    step = 0
    names = list(model.params)
    for epoch in range(1, cfg.epochs + 1):
        perm = rngmod.stream(cfg.seed, "shuffle", epoch).permutation(len(order))
        epoch_order = order[perm]
        loss_sum = 0.0
        seen = 0
        c1 = c2 = n2 = 0
        lr = cfg.lr
        for start in range(0, len(epoch_order), bs):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            idx = epoch_order[start : start + bs]
            positions = perm[start : start + bs]
            x = _batch_inputs(train_set, idx, positions, epoch, cfg, aug, model.dtype)
            presence = train_set.presence[idx]
            location = train_set.location[idx]
            model.zero_grad()
            l1, l2 = model(x)
            loss = combined_loss(l1, presence, l2, location)
            loss.combined.backward()
            lr = cosine_lr(cfg.lr, step, total_steps) if cfg.schedule == "cosine" else cfg.lr
            grads = {n: model.params[n].grad for n in names}
            new = adamw_step({n: model.params[n].data for n in names}, grads, state, lr=lr)
            for n in names:
                model.params[n].data = new[n]
            step += 1
            loss_sum += loss.value * len(idx)
            seen += len(idx)
            a, b, m = _accuracies(l1.data, l2.data, presence, location)
            c1 += a
            c2 += b
            n2 += m
        if seen == 0:
            break
        row = {
            "epoch": epoch,
            "steps": step,
            "lr": float(lr),
            "train_loss": loss_sum / seen,
            "val_loss": None,
            "train_acc_presence": c1 / seen,
            "train_acc_location": c2 / n2 if n2 else 0.0,
            "val_acc_presence": None,
            "val_acc_location": None,
        }
        if has_val:
            ev = evaluate(model, val_set, aug, cfg.batch_size_val)
            row.update(val_loss=ev.loss, val_acc_presence=ev.acc_presence, val_acc_location=ev.acc_location)
            if ev.loss < best_loss:
                best_loss = ev.loss
                best_epoch = epoch
                best_state = model.state_dict()
        else:
            best_epoch = epoch
            best_state = model.state_dict()
        history.append(row)
        log.info(
            "epoch %d  steps %d  train loss %.4f  acc %.3f/%.3f%s",
            epoch, step, row["train_loss"], row["train_acc_presence"], row["train_acc_location"],
            f"  val loss {row['val_loss']:.4f} acc {row['val_acc_presence']:.3f}/{row['val_acc_location']:.3f}"
            if has_val else "",
        )
        if on_epoch:
            on_epoch(row)
    return TrainResult(history, best_epoch, best_state, initial_val, state, step, time.perf_counter() - t0)
