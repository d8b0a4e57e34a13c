"""Training loop for SimCLR-TT, BYOL-TT and the supervised reference."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .imaging import AugmentationSpec, augment_batch
from .losses import byol_tt, simclr_tt
from .model import EncoderSpec, ModelState, ema_update, save_checkpoint
from .synth import EpisodeSet

log = logging.getLogger(__name__)

METHODS = ("simclr-tt", "byol-tt", "supervised")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "simclr-tt"
    tau: float = 0.08
    batch_size: int = 64       # images per step, i.e. batch_size // 2 temporal pairs
    epochs: int = 30
    lr: float = 1e-2
    weight_decay: float = 1e-4
    momentum: float = 0.9      # SGD momentum
    ema: float = 0.99          # BYOL target momentum
    dt: int = 1
    crop: int | None = 128
    seed: int = 0
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    diag_dir: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not 0.0 <= self.ema <= 1.0:
            raise ValueError("ema momentum must be in [0, 1]")
        if self.dt < 1:
            raise ValueError("dt must be >= 1")
        if self.batch_size < 4 or self.batch_size % 2:
            raise ValueError("batch_size must be an even number >= 4")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.crop is not None and self.crop < 1:
            raise ValueError("crop must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    pass


def valid_anchors(dataset: EpisodeSet, dt: int) -> np.ndarray:
    """Rows t whose partner t + dt lies in the same episode."""
    rows = []
    for start, stop in dataset.episode_ranges():
        if stop - start <= dt:
            raise ValueError(f"episode {dataset.episodes[start]} is too short for dt={dt}")
        rows.append(np.arange(start, stop - dt))
    return np.concatenate(rows)


def sample_pairs(dataset: EpisodeSet, dt: int, n_pairs: int, rng: np.random.Generator,
                 anchors: np.ndarray | None = None) -> np.ndarray:
    """(n_pairs, 2) row indices (t, t + dt), uniform over valid anchors."""
    if anchors is None:
        anchors = valid_anchors(dataset, dt)
    a = anchors[rng.integers(0, len(anchors), n_pairs)]
    return np.stack([a, a + dt], 1)


def prepare_views(dataset: EpisodeSet, rows: np.ndarray, spec: AugmentationSpec,
                  crop: int | None, input_size: int) -> np.ndarray:
    fixes = [dataset.fixation(int(i)) for i in rows]
    return augment_batch([dataset.frames[i] for i in rows], fixes, spec, crop, input_size)


def method_loss(state: ModelState, x: torch.Tensor, cfg: TrainConfig, labels=None):
    """Loss for one batch laid out as [x_t; x_t+dt]."""
    n = x.shape[0] // 2
    if cfg.method == "supervised":
        h = state.encoder(x)
        return F.cross_entropy(state.classifier(h), labels)
    h, z = state(x)
    if cfg.method == "simclr-tt":
        pair = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
        return simclr_tt(z, pair, cfg.tau)
    q = state.predictor(z)
    z_t = state.target_forward(x)
    swapped = torch.cat([z_t[n:], z_t[:n]])
    return byol_tt(q, swapped)


def make_optimizer(state: ModelState, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in state.parameters() if p.requires_grad]
    return torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


def train(dataset: EpisodeSet, spec: AugmentationSpec, cfg: TrainConfig,
          progress: bool = False) -> tuple[ModelState, list[float]]:
    """Train from scratch; fully determined by ``cfg.seed``.

    One epoch is ``len(dataset) // batch_size`` steps (at least one), so every
    epoch pushes about as many images through the encoder as the dataset holds.
    """
    anchors = valid_anchors(dataset, cfg.dt)
    state = ModelState(cfg.encoder, dataset.n_classes, seed=cfg.seed)
    opt = make_optimizer(state, cfg)
    rng = np.random.default_rng([cfg.seed, 7919])
    n_pairs = cfg.batch_size // 2
    steps = max(1, len(dataset) // cfg.batch_size)
    trace = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(steps):
            pairs = sample_pairs(dataset, cfg.dt, n_pairs, rng, anchors)
            rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
            x = torch.from_numpy(prepare_views(dataset, rows, spec, cfg.crop,
                                               cfg.encoder.input_size))
            labels = torch.from_numpy(dataset.labels[rows])
            loss = method_loss(state, x, cfg, labels)
            if not math.isfinite(loss.item()):
                if cfg.diag_dir:
                    save_checkpoint(state, cfg.diag_dir, {"diverged_epoch": epoch})
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {state.step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if cfg.method == "byol-tt":
                ema_update(state, cfg.ema)
            state.step += 1
            total += loss.item()
        trace.append(total / steps)
        if progress:
            log.info("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, trace[-1])
    return state, trace
