"""Command line entry points: train, eval, ablate, visualize.

Configs are YAML key/value trees; flags override file values. Exit codes:
0 success, 2 invalid configuration or input, 3 training aborted on a
non-finite loss.
"""

import argparse
import csv
import itertools
import sys
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import yaml
from PIL import Image

from .data import (load_isic2018, load_ph2, make_synthetic_dataset,
                   write_split_manifest)
from .errors import ConfigError
from .losses import LossConfig
from .metrics import METRIC_NAMES
from .model import ModelConfig, build_model, count_parameters, load_checkpoint, save_checkpoint
from .schedule import ScheduleConfig
from .train import NanLossError, evaluate, fit
from .visualize import (denormalize_image, energy_map, received_attention_map,
                        save_heatmap, save_overlay)

DATASETS = ("isic2018", "ph2", "synthetic")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NAN = 3


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    data_root: str | None = None
    output_dir: str = "runs"
    epochs: int = 1
    batch_size: int = 8
    seed: int = 42
    augment: bool = False
    n_synthetic: int = 14
    split: str = "test"
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.dataset != "synthetic":
            if not self.data_root:
                raise ConfigError(f"dataset {self.dataset!r} needs --data-root")
            if not Path(self.data_root).is_dir():
                raise ConfigError(f"data root {self.data_root} does not exist")
        self.model.seed = self.seed
        self.model.validate()
        self.schedule.validate()
        self.loss.validate()
        return self


def _build_section(cls, values, section):
    allowed = {f.name for f in fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")
    return cls(**values)


def load_config_file(path):
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a key/value tree")
    return raw


def experiment_from_mapping(raw):
    raw = dict(raw)
    sections = {}
    for name, cls in (("model", ModelConfig), ("schedule", ScheduleConfig),
                      ("loss", LossConfig)):
        sub = raw.pop(name, {}) or {}
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        sections[name] = _build_section(cls, sub, name)
    cfg = _build_section(
        ExperimentConfig, raw, "experiment")
    cfg.model, cfg.schedule, cfg.loss = (sections["model"], sections["schedule"],
                                         sections["loss"])
    return cfg


def apply_flag_overrides(cfg, args):
    if args.dataset is not None:
        cfg.dataset = args.dataset
    if args.data_root is not None:
        cfg.data_root = args.data_root
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output is not None:
        cfg.output_dir = args.output
    if args.k_sel is not None:
        cfg.model.k_sel = args.k_sel
    if args.k_mem is not None:
        cfg.model.k_mem = args.k_mem
    if args.no_mrcf:
        cfg.model.use_mrcf = False
    if args.no_cmam:
        cfg.model.use_cmam = False
    if args.no_eab:
        cfg.model.use_eab = False
    if getattr(args, "split", None) is not None:
        cfg.split = args.split
    return cfg


def resolve_config(args):
    raw = load_config_file(args.config) if args.config else {}
    return apply_flag_overrides(experiment_from_mapping(raw), args).validate()


def load_bundle(cfg):
    if cfg.dataset == "synthetic":
        return make_synthetic_dataset(cfg.n_synthetic, seed=cfg.seed)
    if cfg.dataset == "isic2018":
        return load_isic2018(cfg.data_root, seed=cfg.seed)
    return load_ph2(cfg.data_root, seed=cfg.seed)


# ------------------------------------------------------------------ writers

def _fmt(value):
    return f"{value:.6f}"


def write_training_log(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "val_iou", "val_dice",
                         "val_acc", "val_precision"])
        for r in records:
            writer.writerow([r.epoch, f"{r.lr:.9f}", _fmt(r.train_loss),
                             _fmt(r.val_iou), _fmt(r.val_dice),
                             _fmt(r.val_acc), _fmt(r.val_precision)])


def write_metrics_report(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *METRIC_NAMES])
        for sample_id, row in report.per_image:
            writer.writerow([sample_id, *(_fmt(row[m]) for m in METRIC_NAMES)])
        writer.writerow(["mean", *(_fmt(getattr(report, m)) for m in METRIC_NAMES)])


def _print_report(report, heading):
    print(heading)
    print("n_images," + ",".join(METRIC_NAMES))
    print(f"{report.n_images}," + ",".join(_fmt(getattr(report, m)) for m in METRIC_NAMES))


# ----------------------------------------------------------------- commands

def cmd_train(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = load_bundle(cfg)
    write_split_manifest(bundle.split, out / "split_manifest.txt")
    model = build_model(cfg.model)
    print(f"training on {cfg.dataset}: {len(bundle.train)} train / "
          f"{len(bundle.val)} val samples, {count_parameters(model)} parameters")
    log = fit(model, bundle.train, bundle.val, cfg.epochs, cfg.schedule,
              cfg.loss, batch_size=cfg.batch_size, seed=cfg.seed,
              augment=cfg.augment)
    for r in log.records:
        print(f"epoch {r.epoch} lr {r.lr:.9f} train_loss {_fmt(r.train_loss)} "
              f"val_dice {_fmt(r.val_dice)}")
    write_training_log(log.records, out / "training_log.csv")
    if log.best_state:
        model.load_state_dict(log.best_state)
    extra = {"best_epoch": log.best_epoch, "dataset": cfg.dataset,
             "epochs": cfg.epochs}
    save_checkpoint(out / "checkpoint.pt", model, extra=extra)
    print(f"checkpoint written to {out / 'checkpoint.pt'}"
          + (f" (best epoch {log.best_epoch})" if log.best_epoch is not None else ""))
    return EXIT_OK


def _save_predictions(model, samples, pred_dir, batch_size):
    pred_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = [samples[i] for i in range(start, min(start + batch_size, len(samples)))]
            probs = model(torch.stack([s.image for s in batch]))
            for s, p in zip(batch, probs):
                mask = (p[0] >= 0.5).numpy().astype(np.uint8) * 255
                Image.fromarray(mask).save(pred_dir / f"{s.sample_id}.png")


def cmd_eval(cfg, checkpoint):
    if not checkpoint:
        raise ConfigError("eval needs --checkpoint")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, _ = load_checkpoint(checkpoint)
    bundle = load_bundle(cfg)
    samples = bundle.samples_for(cfg.split)
    if len(samples) == 0:
        raise ConfigError(f"split {cfg.split!r} of {cfg.dataset} is empty")
    report = evaluate(model, samples, batch_size=cfg.batch_size)
    _print_report(report, f"{cfg.dataset}/{cfg.split} metrics")
    write_metrics_report(report, out / "metrics.csv")
    _save_predictions(model, samples, out / "predictions", cfg.batch_size)
    return EXIT_OK


ABLATION_ORDER = [
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
]


def _combo_name(combo):
    return "mrcf{:d}_cmam{:d}_eab{:d}".format(*combo)


def cmd_ablate(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = load_bundle(cfg)
    rows = []
    for combo in ABLATION_ORDER:
        use_mrcf, use_cmam, use_eab = combo
        run_dir = out / _combo_name(combo)
        run_dir.mkdir(parents=True, exist_ok=True)
        model_cfg = ModelConfig(**{**asdict(cfg.model), "use_mrcf": use_mrcf,
                                   "use_cmam": use_cmam, "use_eab": use_eab})
        try:
            model = build_model(model_cfg)
            log = fit(model, bundle.train, bundle.val, cfg.epochs, cfg.schedule,
                      cfg.loss, batch_size=cfg.batch_size, seed=cfg.seed,
                      augment=cfg.augment)
            if log.best_state:
                model.load_state_dict(log.best_state)
            save_checkpoint(run_dir / "checkpoint.pt", model)
            write_training_log(log.records, run_dir / "training_log.csv")
            report = evaluate(model, bundle.test, batch_size=cfg.batch_size)
            write_metrics_report(report, run_dir / "metrics.csv")
            rows.append([*map(int, combo), "ok",
                         *(_fmt(getattr(report, m)) for m in METRIC_NAMES)])
        except Exception as exc:  # isolate failures, keep the matrix complete
            traceback.print_exc()
            print(f"run {_combo_name(combo)} failed: {exc}", file=sys.stderr)
            rows.append([*map(int, combo), "failed", "", "", "", ""])
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mrcf", "cmam", "eab", "status", *METRIC_NAMES])
        writer.writerows(rows)
    print("mrcf,cmam,eab,status," + ",".join(METRIC_NAMES))
    for row in rows:
        print(",".join(str(v) for v in row))
    return EXIT_OK


def cmd_visualize(cfg, checkpoint, ids):
    if not checkpoint:
        raise ConfigError("visualize needs --checkpoint")
    if not ids:
        raise ConfigError("visualize needs at least one sample id (--ids)")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, _ = load_checkpoint(checkpoint)
    bundle = load_bundle(cfg)
    by_id = {}
    for split_samples in (bundle.train, bundle.val, bundle.test):
        for i in range(len(split_samples)):
            s = split_samples[i]
            by_id.setdefault(s.sample_id, s)
    written = []
    for sample_id in ids:
        sample = by_id.get(sample_id)
        if sample is None:
            print(f"warning: unknown sample id {sample_id!r}, skipping",
                  file=sys.stderr)
            continue
        capture = {}
        with torch.no_grad():
            probs = model(sample.image.unsqueeze(0), capture=capture)
        pred = (probs[0, 0] >= 0.5).float()
        if "cmam_sa" in capture:
            heat = received_attention_map(capture["cmam_sa"], capture["cmam_grid"])
            save_heatmap(heat, out / f"{sample_id}_cmam_heatmap.png")
            written.append(f"{sample_id}_cmam_heatmap.png")
        else:
            print(f"warning: no attention to draw for {sample_id} "
                  "(model built without the bottleneck attention)", file=sys.stderr)
        if "eab_pre" in capture:
            save_heatmap(energy_map(capture["eab_pre"][0]),
                         out / f"{sample_id}_eab_pre.png")
            save_heatmap(energy_map(capture["eab_post"][0]),
                         out / f"{sample_id}_eab_post.png")
            written.extend([f"{sample_id}_eab_pre.png", f"{sample_id}_eab_post.png"])
        else:
            print(f"warning: no bridge internals for {sample_id} "
                  "(model built without bridges)", file=sys.stderr)
        rgb = denormalize_image(sample.image, bundle.mean, bundle.std)
        save_overlay(rgb, sample.mask, pred, out / f"{sample_id}_overlay.png",
                     title=sample_id)
        written.append(f"{sample_id}_overlay.png")
    for name in written:
        print(f"wrote {out / name}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def _add_common_flags(sp):
    sp.add_argument("--config", metavar="PATH", help="YAML config file")
    sp.add_argument("--dataset", choices=DATASETS)
    sp.add_argument("--data-root", metavar="PATH")
    sp.add_argument("--epochs", type=int, metavar="N")
    sp.add_argument("--seed", type=int, metavar="N")
    sp.add_argument("--output", metavar="DIR")
    sp.add_argument("--checkpoint", metavar="PATH")
    sp.add_argument("--k-sel", type=int, metavar="N")
    sp.add_argument("--k-mem", type=int, metavar="N")
    sp.add_argument("--no-mrcf", action="store_true")
    sp.add_argument("--no-cmam", action="store_true")
    sp.add_argument("--no-eab", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eamnet",
        description="Train, evaluate and inspect the segmentation network")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (("train", "train a model and write checkpoint + log"),
                        ("eval", "evaluate a checkpoint on a dataset split"),
                        ("ablate", "run the 8-row module on/off matrix"),
                        ("visualize", "emit heatmaps, energy maps and overlays")):
        sp = sub.add_parser(name, help=descr)
        _add_common_flags(sp)
        if name in ("eval", "visualize"):
            sp.add_argument("--split", choices=("train", "val", "test"))
        if name == "visualize":
            sp.add_argument("--ids", nargs="+", metavar="ID")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        return cmd_visualize(cfg, args.checkpoint, args.ids)
    except NanLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
