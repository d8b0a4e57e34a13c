"""``fovlab`` command line: augment, synth, train, probe, saliency, sweep."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .foveation import FoveationParams
from .imaging import (AugmentationSpec, FixationTableError, default_workers, load_png,
                      process_batch, read_fixation_csv, save_png)
from .warp import FixationPoint, WarpDomainError, WarpParams

log = logging.getLogger("fovlab")

MODE_CHOICES = ["none", "fov", "mag", "both", "foveation", "magnification", "combination"]


def _add_aug_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODE_CHOICES, default="none")
    p.add_argument("--rfov", type=float, default=20.0)
    p.add_argument("--k", type=float, default=20.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--sigma-base", type=float, default=1.0)
    p.add_argument("--belts", type=int, default=5)
    p.add_argument("--fill", choices=["black", "clamp"], default="black")


def _spec_from_args(a) -> AugmentationSpec:
    return AugmentationSpec(
        mode=a.mode,
        warp=WarpParams(a.c, a.rfov, a.k),
        fov=FoveationParams.geometric(a.belts, sigma_base=a.sigma_base),
        fill=0.0,
        clamp=a.fill == "clamp",
    )


def _csv_list(cast):
    def parse(text):
        return [cast(v) for v in text.split(",") if v.strip()]
    return parse


def cmd_augment(a) -> int:
    spec = _spec_from_args(a)
    fix = read_fixation_csv(a.fix_csv) if a.fix_csv else None
    result = process_batch(a.in_dir, a.out_dir, fix, spec, a.crop, a.resize, a.workers)
    print(f"wrote {result.written} images, {result.failed} skipped", file=sys.stderr)
    return 2 if result.failed else 0


def cmd_synth(a) -> int:
    from .synth import SynthConfig, generate_dataset, save_dataset

    cfg = SynthConfig(n_classes=a.classes, episodes_per_class=a.episodes,
                      frames_per_episode=a.frames, frame_size=a.size, background=a.bg,
                      max_step=a.max_step, seed=a.seed)
    ds = generate_dataset(cfg)
    save_dataset(ds, a.out, cfg)
    print(f"wrote {len(ds)} frames to {a.out}", file=sys.stderr)
    return 0


def _train_config(a, method=None):
    from .train import TrainConfig

    return TrainConfig(method=method or a.method, tau=a.tau, batch_size=a.batch,
                       epochs=a.epochs, lr=a.lr, weight_decay=a.wd, ema=a.ema, dt=a.dt,
                       crop=getattr(a, "crop", 128) or None, seed=getattr(a, "seed", 0))


def cmd_train(a) -> int:
    from .evaluate import episode_split
    from .model import save_checkpoint
    from .synth import load_dataset
    from .train import train

    ds = load_dataset(a.data)
    spec = _spec_from_args(a)
    cfg = _train_config(a)
    train_rows = np.flatnonzero(~episode_split(ds))
    state, trace = train(ds.subset(train_rows), spec, cfg, progress=True)
    cfg_dict = asdict(cfg)
    save_checkpoint(state, a.out, {"augmentation": spec.to_dict(), "train_config": cfg_dict,
                                   "loss_trace": trace})
    print(f"final loss {trace[-1]:.6f}; checkpoint in {a.out}", file=sys.stderr)
    return 0


def _load_ckpt(path):
    from .model import load_checkpoint

    state, manifest = load_checkpoint(path)
    spec = AugmentationSpec.from_dict(manifest["augmentation"])
    crop = manifest.get("train_config", {}).get("crop", 128)
    return state, spec, crop


def cmd_probe(a) -> int:
    from .evaluate import dataset_features, episode_split, train_linear_probe
    from .synth import load_dataset

    state, spec, crop = _load_ckpt(a.ckpt)
    ds = load_dataset(a.data)
    feats = dataset_features(state, ds, spec, crop)
    probe = train_linear_probe(feats, ds.labels, episode_split(ds), ds.n_classes,
                               config={"mode": spec.mode, "crop": crop, "ckpt": str(a.ckpt)})
    probe.save(a.out)
    print(f"train acc {probe.train_acc:.4f}, test acc {probe.test_acc:.4f}", file=sys.stderr)
    return 0


def cmd_saliency(a) -> int:
    from .evaluate import ProbeResult, extract_features, occlusion_saliency

    state, spec, crop = _load_ckpt(a.ckpt)
    probe = ProbeResult.load(a.probe)
    img = load_png(a.image)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    x, y = (float(v) for v in a.fix.split(","))
    fix = FixationPoint(x, y)
    label = a.label
    if label is None:
        label = int(probe.predict(extract_features(state, [img], [fix], spec, crop))[0])
    sal = occlusion_saliency(state, probe, img, fix, spec, label, a.patch, a.stride, crop)
    save_png(a.out, sal[:, :, None])
    return 0


def cmd_sweep(a) -> int:
    from .sweep import SweepGrid, emit_report, run_sweep
    from .synth import load_dataset

    ds = load_dataset(a.data)
    grid = SweepGrid(tuple(a.methods), tuple(a.modes), tuple(a.crops), tuple(a.rfov_list),
                     tuple(a.k_list))
    budget = _train_config(a, method=a.methods[0])
    report = run_sweep(ds, grid, range(a.seeds), budget)
    if not report.rows:
        print("no valid grid cells", file=sys.stderr)
        return 1
    emit_report(report, a.out)
    for cell, (mean, sd, n) in sorted(report.summary().items()):
        print(" ".join(map(str, cell)), f"{mean:.4f} +- {sd:.4f} (n={n})")
    return 0


def _add_train_flags(p, crop=True):
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--wd", type=float, default=1e-4)
    p.add_argument("--tau", type=float, default=0.08)
    p.add_argument("--ema", type=float, default=0.99)
    p.add_argument("--dt", type=int, default=1)
    if crop:
        p.add_argument("--crop", type=int, default=128, help="0 disables cropping")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fovlab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="augment a directory of PNGs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--fix-csv")
    _add_aug_flags(p)
    p.add_argument("--crop", type=int)
    p.add_argument("--resize", type=int)
    p.add_argument("--workers", type=int, default=default_workers())
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("synth", help="generate a synthetic episode dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--bg", choices=["clutter", "plain"], default="clutter")
    p.add_argument("--max-step", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["simclr-tt", "byol-tt", "supervised"], default="simclr-tt")
    _add_aug_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", help="fit a linear probe on frozen features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("saliency", help="occlusion saliency map for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--fix", required=True, help="X,Y in pixels")
    p.add_argument("--label", type=int)
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("sweep", help="train/probe over an experiment grid")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", type=_csv_list(str), default=["simclr-tt"])
    p.add_argument("--modes", type=_csv_list(str), default=["none", "mag"])
    p.add_argument("--crops", type=_csv_list(int), default=[128])
    p.add_argument("--rfov-list", type=_csv_list(float), default=[20.0])
    p.add_argument("--k-list", type=_csv_list(float), default=[20.0])
    p.add_argument("--seeds", type=int, default=3)
    _add_train_flags(p, crop=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return a.func(a)
    except (WarpDomainError, FixationTableError, ValueError, FileNotFoundError) as exc:
        print(f"fovlab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
