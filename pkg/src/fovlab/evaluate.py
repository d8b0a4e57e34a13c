"""Frozen-encoder evaluation: features, linear probe, occlusion saliency."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .imaging import AugmentationSpec, augment_batch, resize_plan
from .model import ModelState
from .synth import EpisodeSet
from .warp import FixationPoint, resample


@torch.no_grad()
def extract_features(state: ModelState, images, fixations, spec: AugmentationSpec,
                     crop: int | None = 128, batch: int = 256) -> np.ndarray:
    """Pooled encoder features (N, feature_dim) in eval mode; ``state`` is not modified."""
    was_training = state.training
    state.eval()
    try:
        size = state.spec.input_size
        out = []
        for start in range(0, len(images), batch):
            chunk = [images[i] for i in range(start, min(start + batch, len(images)))]
            fixes = fixations[start:start + len(chunk)]
            x = torch.from_numpy(augment_batch(chunk, fixes, spec, crop, size))
            out.append(state.encoder(x.to(next(state.parameters()).dtype)).double().numpy())
    finally:
        state.train(was_training)
    if not out:
        return np.zeros((0, state.spec.feature_dim))
    return np.concatenate(out)


def dataset_features(state: ModelState, ds: EpisodeSet, spec: AugmentationSpec,
                     crop: int | None = 128) -> np.ndarray:
    return extract_features(state, ds.frames, [ds.fixation(i) for i in range(len(ds))],
                            spec, crop)


def episode_split(ds: EpisodeSet, test_fraction: float = 0.2) -> np.ndarray:
    """Boolean test mask holding out the last ``test_fraction`` of each class's episodes."""
    test = np.zeros(len(ds), bool)
    for label in np.unique(ds.labels):
        eps = np.unique(ds.episodes[ds.labels == label])
        n_test = int(round(len(eps) * test_fraction))
        if len(eps) > 1:
            n_test = min(max(n_test, 1), len(eps) - 1)
        else:
            n_test = 0
        held = eps[len(eps) - n_test:]
        test |= np.isin(ds.episodes, held) & (ds.labels == label)
    return test


@dataclass
class ProbeResult:
    train_acc: float
    test_acc: float
    confusion: np.ndarray  # (n_classes, n_classes), rows = true class, test split
    weight: np.ndarray     # (d, n_classes) on standardized features
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    iterations: int = 0
    config: dict = field(default_factory=dict)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return ((features - self.mean) / self.scale) @ self.weight + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.logits(features).argmax(1)

    def to_json(self) -> dict:
        return {
            "train_acc": self.train_acc, "test_acc": self.test_acc,
            "confusion": self.confusion.tolist(), "weight": self.weight.tolist(),
            "bias": self.bias.tolist(), "mean": self.mean.tolist(),
            "scale": self.scale.tolist(), "iterations": self.iterations,
            "config": self.config,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProbeResult":
        return cls(d["train_acc"], d["test_acc"], np.array(d["confusion"], np.int64),
                   np.array(d["weight"]), np.array(d["bias"]), np.array(d["mean"]),
                   np.array(d["scale"]), d.get("iterations", 0), d.get("config", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "ProbeResult":
        return cls.from_json(json.loads(Path(path).read_text()))


def _softmax(a):
    a = a - a.max(1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(1, keepdims=True)


def train_linear_probe(features: np.ndarray, labels: np.ndarray, test_mask: np.ndarray,
                       n_classes: int | None = None, l2: float = 1e-4, max_iter: int = 2000,
                       tol: float = 1e-5, config: dict | None = None) -> ProbeResult:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with train-split statistics.  Descent stops
    when the gradient norm drops below ``tol`` or after ``max_iter`` steps.
    """
    x = np.asarray(features, np.float64)
    y = np.asarray(labels, np.int64)
    test_mask = np.asarray(test_mask, bool)
    train_mask = ~test_mask
    if len(np.unique(y[train_mask])) < 2:
        raise ValueError("linear probe needs at least two classes in the train split")
    k = int(n_classes or y.max() + 1)
    xtr, ytr = x[train_mask], y[train_mask]
    mean = xtr.mean(0)
    scale = xtr.std(0)
    scale[scale < 1e-12] = 1.0
    z = (xtr - mean) / scale
    n, d = z.shape
    onehot = np.eye(k)[ytr]
    w = np.zeros((d, k))
    b = np.zeros(k)
    # step 1/L with L bounding the Hessian of the mean cross-entropy
    lip = 0.5 * (np.linalg.norm(z, 2) ** 2 + n) / n + l2
    lr = 1.0 / lip
    it = 0
    for it in range(1, max_iter + 1):
        p = _softmax(z @ w + b)
        g = (p - onehot) / n
        gw = z.T @ g + l2 * w
        gb = g.sum(0)
        if np.sqrt((gw ** 2).sum() + (gb ** 2).sum()) < tol:
            break
        w -= lr * gw
        b -= lr * gb
    result = ProbeResult(0.0, 0.0, np.zeros((k, k), np.int64), w, b, mean, scale, it,
                         dict(config or {}))
    pred = result.predict(x)
    result.train_acc = float((pred[train_mask] == y[train_mask]).mean())
    result.test_acc = float((pred[test_mask] == y[test_mask]).mean()) if test_mask.any() else 0.0
    np.add.at(result.confusion, (y[test_mask], pred[test_mask]), 1)
    return result


@torch.no_grad()
def occlusion_saliency(state: ModelState, probe: ProbeResult, image: np.ndarray,
                       fixation: FixationPoint, spec: AugmentationSpec, label: int,
                       patch: int = 32, stride: int = 16, crop: int | None = 128,
                       gray: float = 0.5) -> np.ndarray:
    """Drop in the true-class probe logit when each patch is set to mid-gray.

    ``image`` is a raw (H, W, C) frame; each occluded copy goes through the
    same crop/augment/encode path as evaluation.  The drop map is bilinearly
    upsampled to the image size and min-max normalized to [0, 1]; all-equal
    maps become zero.
    """
    img = image.astype(np.float32) / 255.0 if image.dtype == np.uint8 else image.astype(np.float32)
    h, w, _ = img.shape
    if patch > min(h, w):
        raise ValueError("patch larger than image")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ys = list(range(0, h - patch + 1, stride))
    xs = list(range(0, w - patch + 1, stride))
    variants = [img]
    for y in ys:
        for x in xs:
            v = img.copy()
            v[y:y + patch, x:x + patch] = gray
            variants.append(v)
    feats = extract_features(state, variants, [fixation] * len(variants), spec, crop)
    logit = probe.logits(feats)[:, label]
    drops = (logit[0] - logit[1:]).reshape(len(ys), len(xs))
    plan = resize_plan(len(ys), len(xs), h, w)
    # resample clips to [0, 1], so shift the drops into range before upsampling
    lo, hi = drops.min(), drops.max()
    if not np.isfinite(hi - lo) or hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.zeros((h, w))
    up = resample(plan, ((drops - lo) / (hi - lo)).reshape(-1, 1)).reshape(h, w)
    lo, hi = up.min(), up.max()
    return (up - lo) / (hi - lo) if hi > lo else np.zeros((h, w))
