"""Image I/O, fixation crops, resizing and augmentation composition.

Images are float32 numpy arrays of shape (H, W, C) with C in {1, 3} and
values in [0, 1].
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from .foveation import FoveationParams, foveate_image
from .warp import (BilinearPlan, FixationPoint, WarpParams, bilinear_plan, resample,
                   warp_image, warp_resize_plan)

log = logging.getLogger(__name__)

MODES = ("none", "foveation", "magnification", "combination")
MODE_ALIASES = {"fov": "foveation", "mag": "magnification", "both": "combination"}


def as_image(arr) -> np.ndarray:
    """Validate and normalize an array into the (H, W, C) float32 convention."""
    img = np.asarray(arr)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected (H, W, 1|3) image, got shape {img.shape}")
    img = img.astype(np.float32, copy=False)
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValueError("image values must be finite and in [0, 1]")
    return img


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F", "1"):
            data = np.asarray(im.convert("L"))
        else:
            data = np.asarray(im.convert("RGB"))
    return as_image(data.astype(np.float32) / 255.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """8-bit quantization, round half up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    q = quantize(img)
    if q.shape[2] == 1:
        q = q[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # fixed compression settings keep the bytes reproducible
    Image.fromarray(q).save(path, format="PNG", optimize=False, compress_level=6)


def crop_origin(fix: FixationPoint, size: int) -> tuple[int, int]:
    """Top-left corner of a ``size`` crop whose center pixel is the fixation."""
    return (math.floor(fix.x + 0.5) - size // 2, math.floor(fix.y + 0.5) - size // 2)


def _crop_raw(img: np.ndarray, fix: FixationPoint, size: int, fill) -> np.ndarray:
    h, w, c = img.shape
    x0, y0 = crop_origin(fix, size)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if (sx0, sy0, sx1, sy1) == (x0, y0, x0 + size, y0 + size):
        return img[y0:y0 + size, x0:x0 + size]
    out = np.empty((size, size, c), img.dtype)
    out[...] = np.broadcast_to(np.asarray(fill).astype(img.dtype), (c,))
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return out


def crop_at_fixation(img: np.ndarray, fix: FixationPoint, size: int, fill=0.0) -> np.ndarray:
    """``size`` x ``size`` window centered on ``fix``; outside pixels get ``fill``.

    The (rounded) fixation lands on pixel (size // 2, size // 2) of the crop.
    """
    if size < 1:
        raise ValueError("crop size must be >= 1")
    h, w, c = img.shape
    x0, y0 = crop_origin(fix, size)
    dtype = img.dtype if img.dtype.kind == "f" else np.float32
    out = np.empty((size, size, c), dtype)
    out[...] = np.broadcast_to(np.asarray(fill, dtype), (c,))
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if sx1 > sx0 and sy1 > sy0:
        patch = img[sy0:sy1, sx0:sx1]
        if img.dtype == np.uint8:
            patch = patch.astype(np.float32) / 255.0
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = patch
    return out


@lru_cache(maxsize=64)
def resize_plan(in_h: int, in_w: int, out_h: int, out_w: int) -> BilinearPlan:
    """Corner-aligned bilinear resize: output pixel i samples i (in-1) / (out-1)."""
    if min(in_h, in_w, out_h, out_w) < 1:
        raise ValueError("dimensions must be >= 1")

    def coords(n_in, n_out):
        if n_out == 1:
            return np.array([(n_in - 1) / 2.0])
        i = np.arange(n_out, dtype=np.float64)
        return i * (n_in - 1) / (n_out - 1)

    ys, xs = np.meshgrid(coords(in_h, out_h), coords(in_w, out_w), indexing="ij")
    return bilinear_plan(xs, ys, 0.0, 0.0, in_w, in_h)


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w, c = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    plan = resize_plan(h, w, out_h, out_w)
    out = resample(plan, img.reshape(h * w, c).astype(np.float32, copy=False))
    return out.reshape(out_h, out_w, c)


@dataclass(frozen=True)
class AugmentationSpec:
    mode: str = "none"
    warp: WarpParams = field(default_factory=WarpParams)
    fov: FoveationParams = field(default_factory=FoveationParams)
    fill: float = 0.0
    clamp: bool = False  # clamp-to-edge instead of constant fill for the warp

    def __post_init__(self):
        mode = MODE_ALIASES.get(self.mode, self.mode)
        if mode not in MODES:
            raise ValueError(f"unknown augmentation mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not 0.0 <= self.fill <= 1.0:
            raise ValueError("fill must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "warp": {"c_scale": self.warp.c_scale, "r_fov": self.warp.r_fov,
                     "k_shape": self.warp.k_shape},
            "fov": {"n_belts": self.fov.n_belts, "belt_bounds": list(self.fov.belt_bounds),
                    "sigmas": list(self.fov.sigmas), "blend_width": self.fov.blend_width},
            "fill": self.fill,
            "clamp": self.clamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationSpec":
        return cls(mode=d["mode"], warp=WarpParams(**d["warp"]),
                   fov=FoveationParams(**d["fov"]), fill=d.get("fill", 0.0),
                   clamp=d.get("clamp", False))


def apply_augmentation(img: np.ndarray, fix: FixationPoint, spec: AugmentationSpec) -> np.ndarray:
    """Apply ``spec`` to one (H, W, C) image; combination blurs, then warps."""
    if spec.mode == "none":
        return img
    out = img
    if spec.mode in ("foveation", "combination"):
        out = foveate_image(out, fix, spec.fov)
    if spec.mode in ("magnification", "combination"):
        out = warp_image(out, fix, spec.warp, fill=spec.fill, clamp=spec.clamp)
    return out


def augment_batch(frames: np.ndarray, fixations, spec: AugmentationSpec, crop: int | None,
                  out_size: int) -> np.ndarray:
    """Crop -> augment -> resize a batch of frames into a channel-first tensor.

    ``frames`` is a sequence of (H, W, C) arrays sharing one dtype, uint8
    or float; returns float32
    (N, C, out_size, out_size).  After cropping every view is fixated at its
    center pixel, so one sampling plan serves the whole batch, and the warp
    and the resize are fused into a single bilinear resampling.
    """
    n = len(frames)
    c = frames[0].shape[-1]
    dtype = frames[0].dtype
    if crop is None:
        views = [apply_augmentation(_to_float(frames[i]), fixations[i], spec) for i in range(n)]
        out = np.stack([resize_bilinear(v, out_size, out_size) for v in views])
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    # pixel-major layout (crop, crop, N, C): spatial gathers move whole rows
    crops = np.empty((n, crop, crop, c), dtype)
    fill = math.floor(spec.fill * 255.0 + 0.5) if dtype == np.uint8 else spec.fill
    for i in range(n):
        crops[i] = _crop_raw(frames[i], fixations[i], crop, fill)
    stack = np.ascontiguousarray(crops.transpose(1, 2, 0, 3))
    center = float(crop // 2)
    if spec.mode in ("foveation", "combination"):
        fix = FixationPoint(center, center)
        stack = foveate_image(_to_float(stack).reshape(crop, crop, n * c), fix, spec.fov)
        stack = stack.reshape(crop, crop, n, c)
    if spec.mode in ("magnification", "combination"):
        plan = warp_resize_plan(crop, out_size, center, center, spec.warp, spec.clamp)
    elif crop != out_size:
        plan = resize_plan(crop, crop, out_size, out_size)
    else:
        plan = None
    pix = stack.reshape(crop * crop, n * c)
    if plan is not None:
        pix = resample(plan, pix, spec.fill)
    else:
        pix = _to_float(pix)
    out = pix.reshape(out_size, out_size, n, c).transpose(2, 3, 0, 1)
    return np.ascontiguousarray(out, dtype=np.float32)


def _to_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / 255.0 if img.dtype == np.uint8 else img


class FixationTableError(ValueError):
    pass


def read_fixation_csv(path) -> dict[str, FixationPoint]:
    """Parse a ``frame,fix_x,fix_y`` CSV into {frame path: fixation}."""
    table: dict[str, FixationPoint] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["frame", "fix_x", "fix_y"]:
            raise FixationTableError(f"{path}: expected header frame,fix_x,fix_y, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FixationTableError(f"{path}:{lineno}: expected 3 fields")
            frame = row[0].strip()
            try:
                fix = FixationPoint(float(row[1]), float(row[2]))
            except ValueError as exc:
                raise FixationTableError(f"{path}:{lineno}: {exc}") from None
            if frame in table:
                raise FixationTableError(f"{path}:{lineno}: duplicate frame {frame!r}")
            table[frame] = fix
    return table


def write_fixation_csv(path, table: dict[str, FixationPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "fix_x", "fix_y"])
        for frame, fix in table.items():
            w.writerow([frame, repr(float(fix.x)), repr(float(fix.y))])


class BatchResult(NamedTuple):
    written: int
    failed: int


def _process_one(src: Path, dst: Path, fix: FixationPoint | None, spec: AugmentationSpec,
                 crop: int | None, resize_to: int | None) -> bool:
    try:
        img = load_png(src)
    except Exception as exc:  # unreadable or corrupt file
        log.warning("skipping %s: %s", src, exc)
        return False
    h, w, _ = img.shape
    if fix is None:
        fix = FixationPoint.center_of(w, h)
    if crop is not None:
        img = crop_at_fixation(img, fix, crop, spec.fill)
        fix = FixationPoint(float(crop // 2), float(crop // 2))
    img = apply_augmentation(img, fix, spec)
    if resize_to is not None:
        img = resize_bilinear(img, resize_to, resize_to)
    save_png(dst, img)
    return True


def process_batch(in_dir, out_dir, fixations: dict[str, FixationPoint] | None,
                  spec: AugmentationSpec, crop: int | None = None,
                  resize_to: int | None = None, workers: int = 1) -> BatchResult:
    """Augment every PNG under ``in_dir`` into the same relative path under ``out_dir``.

    Frames missing from ``fixations`` are fixated at the image center.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    files = sorted(p for p in in_dir.rglob("*") if p.is_file() and p.suffix.lower() == ".png")
    fixations = fixations or {}
    jobs = []
    for src in files:
        rel = src.relative_to(in_dir).as_posix()
        jobs.append((src, out_dir / rel, fixations.get(rel), spec, crop, resize_to))
    out_dir.mkdir(parents=True, exist_ok=True)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ok = list(pool.map(lambda job: _process_one(*job), jobs))
    else:
        ok = [_process_one(*job) for job in jobs]
    written = sum(ok)
    log.info("wrote %d images, %d failed", written, len(ok) - written)
    return BatchResult(written, len(ok) - written)


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
