"""dtvit command line: synth | preprocess | train | eval | predict | inspect.

Exit codes: 0 success, 1 input/data error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import metrics, morph, raster
from .checkpoint import CheckpointError, load_checkpoint, load_pretrained, read_manifest, save_checkpoint
from .datapipe import AugmentConfig, DatasetIndex, IndexFormatError, split
from .heads import LOCATIONS, PRESENCE
from .model import DTViT, ModelConfig, count_params, param_shapes
from .phantom import generate_dataset
from .trainer import ImageSet, evaluate, history_to_csv, train

log = logging.getLogger("dtvit")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2


class DataError(Exception):
    pass


def _effective_config(args) -> dict:
    cfg = cfgmod.load(getattr(args, "config", None))
    for item in getattr(args, "set", None) or []:
        cfgmod.set_value(cfg, *cfgmod.parse_assignment(item))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _flag(cfg: dict, key: str, value) -> None:
    if value is not None:
        cfgmod.set_value(cfg, key, value)


def _parse_window(text: str | None):
    if text is None:
        return None
    if text.lower() in ("none", "null", "off"):
        return "none"
    try:
        center, width = (float(v) for v in text.split(","))
    except ValueError:
        raise cfgmod.ConfigError(f"--window expects CENTER,WIDTH or none, got {text!r}") from None
    return [center, width]


# ---------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    cfg = _effective_config(args)
    try:
        counts = [int(c) for c in args.counts.split(",")]
    except ValueError:
        raise cfgmod.ConfigError(f"--counts expects four integers, got {args.counts!r}") from None
    if len(counts) != 4 or any(c < 0 for c in counts):
        raise cfgmod.ConfigError("--counts expects four non-negative integers (Normal,Deep,Lobar,Subtentorial)")
    if sum(counts) == 0:
        raise DataError("empty dataset: all class counts are zero")
    spec = cfgmod.phantom_spec(cfg)
    out = Path(args.out)
    index = generate_dataset(counts, out, spec, cfg["seed"], cfg["data"]["slices_per_patient"])
    (out / "config.json").write_text(cfgmod.dumps(cfg))
    summary = ", ".join(f"{k} {v}" for k, v in index.class_counts().items())
    print(f"wrote {len(index)} phantoms to {out} ({summary})")
    return EXIT_OK


# ----------------------------------------------------------------- preprocess


def _morph_from_args(cfg: dict, args) -> morph.MorphParams:
    _flag(cfg, "morph.binarize_threshold", args.threshold)
    _flag(cfg, "morph.erosion_radius", args.erosion_radius)
    _flag(cfg, "morph.edge_columns", args.edge_columns)
    _flag(cfg, "morph.fill_connectivity", args.connectivity)
    window = _parse_window(args.window)
    if window == "none":
        cfg["morph"]["window"] = None
    elif window is not None:
        cfg["morph"]["window"] = window
    return cfgmod.morph_params(cfg)


RAW_SUFFIXES = (".dtr", ".pgm")


def cmd_preprocess(args) -> int:
    cfg = _effective_config(args)
    params = _morph_from_args(cfg, args)
    src, out = Path(args.input), Path(args.out)
    if not src.is_dir():
        raise DataError(f"input directory not found: {src}")
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in RAW_SUFFIXES)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    failed = []
    renamed = {}
    for f in files:
        try:
            scan = raster.read_raster(f)
            if scan.dtype != np.int16:
                raise raster.RasterError("expected a 16-bit raw scan")
            image = morph.preprocess(scan, params)
        except (raster.RasterError, ValueError, OSError) as e:
            print(f"error: {f.name}: {e}", file=sys.stderr)
            failed.append(f.name)
            continue
        target = out / (f.stem + ".pgm")
        raster.write_pgm(target, image)
        renamed[f.name] = target.name
    index_path = src / "index.tsv"
    if index_path.is_file():
        index = DatasetIndex.read(index_path)
        kept = [r for r in index.records if r.path in renamed]
        DatasetIndex([replace(r, path=renamed[r.path]) for r in kept], out).write(out / "index.tsv")
    (out / "config.json").write_text(cfgmod.dumps(cfg))
    dt = time.perf_counter() - t0
    print(f"processed {len(renamed)} of {len(files)} files, {len(failed)} failed, {dt:.2f} s")
    return EXIT_DATA if failed else EXIT_OK


# ---------------------------------------------------------------------- train


def _load_index(path) -> DatasetIndex:
    try:
        return DatasetIndex.read(path)
    except (FileNotFoundError, IndexFormatError) as e:
        raise DataError(str(e)) from None


def _splits(index: DatasetIndex, cfg: dict) -> DatasetIndex:
    if any(r.split for r in index.records):
        return index
    try:
        return split(index.records, cfg["data"]["split"], cfg["seed"], root=index.root)
    except ValueError as e:
        raise cfgmod.ConfigError(str(e)) from None


def _imageset(index: DatasetIndex, records, params) -> ImageSet:
    try:
        return ImageSet.from_index(index, records, params)
    except (OSError, raster.RasterError) as e:
        raise DataError(str(e)) from None


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    _flag(cfg, "model.preset", args.preset)
    _flag(cfg, "train.lr", args.lr)
    _flag(cfg, "train.epochs", args.epochs)
    _flag(cfg, "train.batch_size_train", args.batch_size)
    _flag(cfg, "train.max_steps", args.max_steps)
    if args.augment is not None:
        cfg["train"]["augment"] = args.augment
    window = _parse_window(args.window)
    if window == "none":
        cfg["morph"]["window"] = None
    elif window is not None:
        cfg["morph"]["window"] = window
    mcfg = cfgmod.model_config(cfg)
    tcfg = cfgmod.train_config(cfg)
    aug = cfgmod.augment_config(cfg, mcfg)
    mparams = cfgmod.morph_params(cfg)
    dtype = cfgmod.model_dtype(cfg)

    index = _splits(_load_index(args.index), cfg)
    train_recs = index.split("train")
    if not train_recs:
        raise DataError("training split is empty")
    train_set = _imageset(index, train_recs, mparams)
    val_set = _imageset(index, index.split("val"), mparams)
    for s in (train_set, val_set):
        for im in s.images[:1]:
            if min(im.shape) < aug.crop_size:
                raise cfgmod.ConfigError(f"images are {im.shape}, smaller than crop_size {aug.crop_size}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfgmod.dumps(cfg))
    DatasetIndex([replace(r, path=str(index.resolve(r).resolve())) for r in index.records], out).write(out / "splits.tsv")
    model = DTViT(mcfg, seed=cfg["seed"], dtype=dtype)
    if args.pretrained:
        report = load_pretrained(args.pretrained, model)
        print(f"pretrained: {report.summary()}")
    result = train(model, train_set, val_set, tcfg, aug)
    extra = {"augment": aug.to_dict(), "morph": mparams.to_dict(), "best_epoch": result.best_epoch}
    save_checkpoint(model, out / "last.dtv", state=result.optimizer, extra=extra)
    model.load_state_dict(result.best_state)
    save_checkpoint(model, out / "checkpoint.dtv", extra=extra)
    (out / "history.csv").write_text(history_to_csv(result.history))
    summary = {
        "best_epoch": result.best_epoch,
        "steps": result.steps,
        "initial_val": result.initial_val,
        "final": result.history[-1] if result.history else None,
        "splits": {name: len(index.split(name)) for name in ("train", "val", "test")},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"seconds": result.seconds}) + "\n")
    if not args.no_figures:
        from .plotting import plot_history

        plot_history(result.history, out / "history.png")
    last = result.history[-1]
    val = (
        f", val loss {last['val_loss']:.4f}, val acc {last['val_acc_presence']:.3f}/{last['val_acc_location']:.3f}"
        if last["val_loss"] is not None else ""
    )
    print(f"trained {result.steps} steps, best epoch {result.best_epoch}{val}; run directory {out}")
    return EXIT_OK


# ----------------------------------------------------------------------- eval


def _load_model(path, cfg: dict | None = None) -> tuple[DTViT, dict]:
    try:
        model = load_checkpoint(path)
        manifest, _ = read_manifest(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except CheckpointError as e:
        raise DataError(str(e)) from None
    if cfg is not None and cfg.get("_model_from_file"):
        want = cfgmod.model_config(cfg)
        if want != model.cfg:
            raise cfgmod.ConfigError(f"config model {want} does not match checkpoint model {model.cfg}")
    return model, manifest.get("extra", {})


def _aug_from(extra: dict, model: DTViT) -> AugmentConfig:
    if "augment" in extra:
        d = dict(extra["augment"])
        d["channel_mean"] = tuple(d["channel_mean"])
        d["channel_std"] = tuple(d["channel_std"])
        return AugmentConfig(**d)
    return AugmentConfig(image_size=model.cfg.encoder.image_size)


def _morph_from(extra: dict) -> morph.MorphParams:
    if "morph" in extra:
        d = dict(extra["morph"])
        if d.get("window") is not None:
            d["window"] = tuple(d["window"])
        return morph.MorphParams(**d)
    return morph.MorphParams()


def task_confusions(ev, scope: str):
    """Task-1 matrix over all samples; task-2 over ICH samples (3x3) or all samples (4x4, 'None' class)."""
    cm1 = metrics.confusion(ev.presence_pred, ev.presence_true, 2)
    if scope == "ich-only":
        mask = ev.location_true >= 0
        cm2 = metrics.confusion(ev.location_pred[mask], ev.location_true[mask], 3)
        names2 = list(LOCATIONS)
    else:
        true = ev.location_true + 1
        pred = np.where(ev.presence_pred == 1, ev.location_pred + 1, 0)
        cm2 = metrics.confusion(pred, true, 4)
        names2 = ["None"] + list(LOCATIONS)
    return cm1, cm2, names2


def cmd_eval(args) -> int:
    cfg = None
    if args.config:
        cfg = _effective_config(args)
        cfg["_model_from_file"] = "model" in json.loads(Path(args.config).read_text())
    model, extra = _load_model(args.checkpoint, cfg)
    aug = _aug_from(extra, model)
    mparams = _morph_from(extra)
    index = _load_index(args.index)
    if args.split == "all":
        recs = index.records
    else:
        if not any(r.split for r in index.records):
            raise DataError(f"{args.index} has no split column; pass a run's splits.tsv or use --split all")
        recs = index.split(args.split)
    if not recs:
        raise DataError(f"no records in split {args.split!r}")
    data = _imageset(index, recs, mparams)
    if min(data.images[0].shape) < aug.crop_size:
        raise cfgmod.ConfigError(f"images are {data.images[0].shape}, smaller than crop_size {aug.crop_size}")
    batch = args.batch_size or 4
    ev = evaluate(model, data, aug, batch)
    cm1, cm2, names2 = task_confusions(ev, args.scope)
    rep = metrics.report(cm1, cm2, args.scope)
    rep["loss"] = ev.loss
    rep["n_samples"] = len(data)
    print(metrics.format_table(rep))
    print("\ntask 1 (presence)")
    print(metrics.format_confusion(cm1, list(PRESENCE)))
    print("\ntask 2 (location)")
    print(metrics.format_confusion(cm2, names2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(metrics.dumps(rep) + "\n")
        if not args.no_figures:
            from .plotting import plot_confusions

            plot_confusions([cm1, cm2], [list(PRESENCE), names2], ["task 1: presence", "task 2: location"],
                            out / "confusion.png")
    return EXIT_OK


# -------------------------------------------------------------------- predict


def cmd_predict(args) -> int:
    model, extra = _load_model(args.checkpoint)
    aug = _aug_from(extra, model)
    try:
        img = raster.read_raster(args.image)
    except FileNotFoundError:
        raise DataError(f"image not found: {args.image}") from None
    except (OSError, raster.RasterError) as e:
        raise DataError(str(e)) from None
    if img.dtype == np.int16:
        img = morph.preprocess(img, _morph_from(extra))
    from .datapipe import eval_transform

    x = eval_transform(img, aug, model.dtype)
    pred = model.predict(x[None])
    p1 = ", ".join(f"{v:.6f}" for v in pred.presence_probs)
    p2 = ", ".join(f"{v:.6f}" for v in pred.location_probs)
    print(f"{pred.label}  presence=[{p1}]  location=[{p2}]")
    return EXIT_OK


# -------------------------------------------------------------------- inspect


def cmd_inspect(args) -> int:
    if args.checkpoint:
        try:
            manifest, _ = read_manifest(args.checkpoint)
        except FileNotFoundError:
            raise DataError(f"checkpoint not found: {args.checkpoint}") from None
        except CheckpointError as e:
            raise DataError(str(e)) from None
        shapes = {r["name"]: tuple(r["shape"]) for r in manifest["tensors"] if not r["name"].startswith("optim.")}
        live = count_params(ModelConfig.from_dict(manifest["config"]))
    else:
        cfg = _effective_config(args)
        _flag(cfg, "model.preset", args.preset)
        mcfg = cfgmod.model_config(cfg)
        shapes = param_shapes(mcfg, reference_head=args.reference_head)
        live = count_params(mcfg, reference_head=args.reference_head)
    total = 0
    width = max(len(n) for n in shapes)
    for name, shape in shapes.items():
        n = int(np.prod(shape, dtype=np.int64))
        total += n
        print(f"{name:<{width}}  {str(tuple(shape)):<16} {n:>12,}")
    print(f"{'total':<{width}}  {'':<16} {total:>12,}")
    print(f"total {total}")
    if total != live:
        print(f"error: manifest total {total} != model total {live}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtvit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. train.lr=1e-3")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("synth", help="generate a phantom dataset")
    common(s)
    s.add_argument("--counts", default="100,100,100,100", help="Normal,Deep,Lobar,Subtentorial")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="remove braces and export 8-bit rasters")
    common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--erosion-radius", type=int)
    s.add_argument("--edge-columns", type=int)
    s.add_argument("--connectivity", type=int, choices=(4, 8))
    s.add_argument("--window", help="CENTER,WIDTH intensity window, or none for min-max")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a DTViT on a dataset index")
    common(s)
    s.add_argument("--index", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--preset", choices=("tiny", "large"))
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--augment", dest="augment", action="store_true", default=None)
    s.add_argument("--no-augment", dest="augment", action="store_false")
    s.add_argument("--window", help="CENTER,WIDTH intensity window for raw inputs, or none")
    s.add_argument("--pretrained", help="DTV1 backbone file to initialize the encoder")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--index", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    s.add_argument("--scope", default="ich-only", choices=metrics.SCOPES)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--out")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="classify one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("image")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("inspect", help="list parameter tensors and the total count")
    common(s)
    s.add_argument("--preset", choices=("tiny", "large"))
    s.add_argument("--reference-head", type=int, default=None, metavar="K",
                   help="replace the dual heads by a single K-way linear head (0: encoder only)")
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, raster.RasterError, IndexFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
