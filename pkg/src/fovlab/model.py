"""Small convolutional encoder, heads, and the on-disk checkpoint format."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class EncoderSpec:
    input_size: int = 64
    stages: tuple[tuple[int, int], ...] = ((16, 2), (32, 2), (64, 2))
    in_channels: int = 3
    proj_hidden: int = 64
    proj_dim: int = 32
    pred_hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(int(v) for v in s) for s in self.stages))
        stride = int(np.prod([s for _, s in self.stages]))
        if self.input_size % stride:
            raise ValueError(f"input_size {self.input_size} not divisible by total stride {stride}")
        if min(self.proj_hidden, self.proj_dim, self.pred_hidden) < 1:
            raise ValueError("head dimensions must be positive")

    @property
    def feature_dim(self) -> int:
        return self.stages[-1][0]


def _mlp(d_in, d_hidden, d_out):
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.BatchNorm1d(d_hidden), nn.SiLU(),
                         nn.Linear(d_hidden, d_out))


class Encoder(nn.Module):
    """3x3 conv stages (conv, batch norm, SiLU), then global average pooling."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        layers, c_in = [], spec.in_channels
        for c_out, stride in spec.stages:
            layers += [nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
                       nn.BatchNorm2d(c_out), nn.SiLU()]
            c_in = c_out
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x).mean(dim=(2, 3))


class ModelState(nn.Module):
    """Online encoder/projector/predictor, BYOL target copies and a classifier head."""

    def __init__(self, spec: EncoderSpec = EncoderSpec(), n_classes: int = 0, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.n_classes = n_classes
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = Encoder(spec)
            self.projector = _mlp(spec.feature_dim, spec.proj_hidden, spec.proj_dim)
            self.predictor = _mlp(spec.proj_dim, spec.pred_hidden, spec.proj_dim)
            self.classifier = nn.Linear(spec.feature_dim, max(n_classes, 1))
        self.target_encoder = copy.deepcopy(self.encoder)
        self.target_projector = copy.deepcopy(self.projector)
        for p in self.target_parameters():
            p.requires_grad_(False)
        self.step = 0

    def forward(self, x):
        """(features h, projections z) for a (N, C, S, S) batch."""
        s = self.spec.input_size
        if x.ndim != 4 or tuple(x.shape[1:]) != (self.spec.in_channels, s, s):
            raise ValueError(f"expected (N, {self.spec.in_channels}, {s}, {s}), got {tuple(x.shape)}")
        h = self.encoder(x)
        return h, self.projector(h)

    def target_forward(self, x):
        with torch.no_grad():
            return self.target_projector(self.target_encoder(x))

    def online_parameters(self):
        for mod in (self.encoder, self.projector):
            yield from mod.parameters()

    def target_parameters(self):
        for mod in (self.target_encoder, self.target_projector):
            yield from mod.parameters()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.state_dict().items():
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


@torch.no_grad()
def ema_update(state: ModelState, m: float) -> None:
    """target <- m * target + (1 - m) * online, elementwise."""
    if not 0.0 <= m <= 1.0:
        raise ValueError("momentum must be in [0, 1]")
    if m == 1.0:
        return
    for t, o in zip(state.target_parameters(), state.online_parameters()):
        if m == 0.0:
            t.copy_(o)
        else:
            t.mul_(m).add_(o, alpha=1.0 - m)


def encoder_forward(state: ModelState, batch):
    """numpy/tensor batch in, (h, z) tensors out."""
    x = torch.as_tensor(batch, dtype=next(state.parameters()).dtype)
    return state(x)


# ---------------------------------------------------------------- checkpoints

def _param_file(name: str) -> str:
    return name.replace("/", "_") + ".f32"


def save_checkpoint(state: ModelState, out_dir, extra: dict | None = None) -> Path:
    """Write manifest.json plus one little-endian float32 file per tensor."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {}
    for name, t in state.state_dict().items():
        arr = t.detach().cpu().numpy().astype("<f4")
        (out / _param_file(name)).write_bytes(arr.tobytes())
        params[name] = list(arr.shape)
    manifest = {
        "encoder_spec": asdict(state.spec),
        "n_classes": state.n_classes,
        "step": state.step,
        "params": params,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


class CheckpointError(ValueError):
    pass


def load_checkpoint(ckpt_dir) -> tuple[ModelState, dict]:
    root = Path(ckpt_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    spec = EncoderSpec(**manifest["encoder_spec"])
    state = ModelState(spec, manifest["n_classes"])
    expected = state.state_dict()
    if set(expected) != set(manifest["params"]):
        raise CheckpointError("checkpoint parameter names do not match the encoder spec")
    loaded = {}
    for name, shape in manifest["params"].items():
        if list(expected[name].shape) != list(shape):
            raise CheckpointError(f"{name}: manifest shape {shape} != model {list(expected[name].shape)}")
        raw = np.frombuffer((root / _param_file(name)).read_bytes(), dtype="<f4")
        if raw.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{name}: file holds {raw.size} values, expected shape {shape}")
        loaded[name] = torch.from_numpy(raw.reshape(shape).astype(np.float32))
    state.load_state_dict(loaded)
    state.step = int(manifest.get("step", 0))
    return state, manifest
