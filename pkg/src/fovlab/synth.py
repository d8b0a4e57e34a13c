"""Synthetic egocentric episodes: one textured object drifting over a background.

Each class is a procedural shape with its own color scheme and stripe
texture.  Object pose follows a bounded random walk, and the fixation point
tracks the object center with a small jitter.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .imaging import load_png, read_fixation_csv, resize_bilinear, save_png, write_fixation_csv
from .warp import FixationPoint

log = logging.getLogger(__name__)

SHAPES = ("disc", "square", "triangle", "ring", "cross", "star", "L", "T")


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 8
    episodes_per_class: int = 20
    frames_per_episode: int = 50
    frame_size: int = 256
    background: str = "clutter"
    max_step: float = 6.0
    scale_range: tuple[float, float] = (0.25, 0.4)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(s) for s in self.scale_range))
        if min(self.n_classes, self.episodes_per_class, self.frames_per_episode,
               self.frame_size) < 1:
            raise ValueError("counts and frame_size must be >= 1")
        if self.background not in ("clutter", "plain"):
            raise ValueError("background must be 'clutter' or 'plain'")
        lo, hi = self.scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("need 0 < scale_min <= scale_max <= 1")
        if self.max_step < 0:
            raise ValueError("max_step must be >= 0")


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    rotation: float  # radians
    scale: float     # object diameter as a fraction of the frame side


@dataclass
class EpisodeSet:
    """Frames stored as uint8 (N, H, W, 3) plus per-frame annotations."""
    frames: np.ndarray
    fixations: np.ndarray    # (N, 2) float64, (x, y)
    labels: np.ndarray       # (N,) int64
    episodes: np.ndarray     # (N,) int64
    frame_index: np.ndarray  # (N,) int64
    boxes: np.ndarray        # (N, 4) int64, x0, y0, x1, y1 inclusive
    n_classes: int
    centers: np.ndarray | None = None  # (N, 2) float64 object centers, when known

    def __len__(self) -> int:
        return len(self.labels)

    def fixation(self, i: int) -> FixationPoint:
        return FixationPoint(float(self.fixations[i, 0]), float(self.fixations[i, 1]))

    def episode_ranges(self) -> list[tuple[int, int]]:
        """(start, stop) row ranges of each episode, in storage order."""
        cuts = np.flatnonzero(np.diff(self.episodes)) + 1
        starts = np.concatenate([[0], cuts])
        stops = np.concatenate([cuts, [len(self)]])
        return list(zip(starts.tolist(), stops.tolist()))

    def subset(self, rows) -> "EpisodeSet":
        rows = np.asarray(rows)
        return EpisodeSet(self.frames[rows], self.fixations[rows], self.labels[rows],
                          self.episodes[rows], self.frame_index[rows], self.boxes[rows],
                          self.n_classes,
                          None if self.centers is None else self.centers[rows])

    def validate(self, min_length: int = 1) -> None:
        for start, stop in self.episode_ranges():
            if stop - start < min_length:
                raise ValueError(f"episode {self.episodes[start]} has {stop - start} frames,"
                                 f" need at least {min_length}")
            if not np.array_equal(self.frame_index[start:stop],
                                  np.arange(self.frame_index[start],
                                            self.frame_index[start] + stop - start)):
                raise ValueError(f"episode {self.episodes[start]} frames are not consecutive")


# ---------------------------------------------------------------- shapes

def _star(points=5, inner=0.45):
    ang = -np.pi / 2 + np.arange(2 * points) * np.pi / points
    rad = np.where(np.arange(2 * points) % 2 == 0, 1.0, inner)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], 1)


def _normalize(poly):
    poly = np.asarray(poly, np.float64)
    lo, hi = poly.min(0), poly.max(0)
    return (poly - (lo + hi) / 2) / ((hi - lo).max() / 2)


_POLYGONS = {
    "square": _normalize([(-1, -1), (1, -1), (1, 1), (-1, 1)]),
    "triangle": _normalize([(0, -1), (1, 1), (-1, 1)]),
    "cross": _normalize([(-0.35, -1), (0.35, -1), (0.35, -0.35), (1, -0.35), (1, 0.35),
                         (0.35, 0.35), (0.35, 1), (-0.35, 1), (-0.35, 0.35), (-1, 0.35),
                         (-1, -0.35), (-0.35, -0.35)]),
    "star": _normalize(_star()),
    "L": _normalize([(-1, -1), (-0.3, -1), (-0.3, 0.3), (1, 0.3), (1, 1), (-1, 1)]),
    "T": _normalize([(-1, -1), (1, -1), (1, -0.3), (0.35, -0.3), (0.35, 1), (-0.35, 1),
                     (-0.35, -0.3), (-1, -0.3)]),
}


def _polygon_sdf(px, py, poly):
    """Signed distance (negative inside) from points to a closed polygon."""
    d2 = np.full(px.shape, np.inf)
    inside = np.zeros(px.shape, bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        wx, wy = px - ax, py - ay
        t = np.clip((wx * ex + wy * ey) / (ex * ex + ey * ey), 0.0, 1.0)
        d2 = np.minimum(d2, (wx - t * ex) ** 2 + (wy - t * ey) ** 2)
        # even-odd crossing test
        cond = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = ax + (py - ay) * ex / ey
        inside ^= cond & (px < xc)
    d = np.sqrt(d2)
    return np.where(inside, -d, d)


def shape_sdf(shape: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Signed distance in object units; the shape spans [-1, 1] in both axes."""
    if shape == "disc":
        return np.hypot(u, v) - 1.0
    if shape == "ring":
        return np.abs(np.hypot(u, v) - 0.72) - 0.28
    return _polygon_sdf(u, v, _POLYGONS[shape])


@dataclass(frozen=True)
class ClassStyle:
    shape: str
    color_a: tuple[float, float, float]
    color_b: tuple[float, float, float]
    stripe_freq: float
    stripe_angle: float


def class_style(class_id: int, n_classes: int) -> ClassStyle:
    shape = SHAPES[class_id % len(SHAPES)]
    hue = (class_id * 0.618034) % 1.0
    a = _hsv_to_rgb(hue, 0.85, 0.95)
    b = _hsv_to_rgb((hue + 0.5) % 1.0, 0.6, 0.35 + 0.1 * (class_id % 3))
    freq = 2.0 + 1.5 * (class_id % 4)
    angle = np.pi * ((class_id * 3) % 8) / 8.0
    return ClassStyle(shape, a, b, freq, angle)


def _hsv_to_rgb(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def clutter_background(size: int, rng: np.random.Generator) -> np.ndarray:
    """Multiscale value noise, float32 (size, size, 3) in about [0.1, 0.9]."""
    out = np.zeros((size, size, 3), np.float32)
    total = 0.0
    for cells, weight in ((3, 1.0), (6, 0.6), (12, 0.4), (24, 0.25)):
        grid = rng.random((cells + 1, cells + 1, 3)).astype(np.float32)
        out += weight * resize_bilinear(grid, size, size)
        total += weight
    out /= total
    lo, hi = out.min(), out.max()
    return (0.1 + 0.8 * (out - lo) / max(hi - lo, 1e-6)).astype(np.float32)


def render_frame(class_id: int, pose: Pose, cfg: SynthConfig,
                 background: np.ndarray | None = None) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Rasterize one object with antialiased edges.

    Returns a float32 (S, S, 3) frame and the inclusive pixel bounding box
    (x0, y0, x1, y1) of nonzero coverage.
    """
    size = cfg.frame_size
    style = class_style(class_id, cfg.n_classes)
    frame = (np.zeros((size, size, 3), np.float32) if background is None
             else background.astype(np.float32, copy=True))
    radius = 0.5 * pose.scale * size
    reach = radius * np.sqrt(2.0) + 2
    x0, x1 = max(int(np.floor(pose.x - reach)), 0), min(int(np.ceil(pose.x + reach)), size - 1)
    y0, y1 = max(int(np.floor(pose.y - reach)), 0), min(int(np.ceil(pose.y + reach)), size - 1)
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
    c, s = np.cos(pose.rotation), np.sin(pose.rotation)
    dx, dy = xs - pose.x, ys - pose.y
    u = (c * dx + s * dy) / radius
    v = (-s * dx + c * dy) / radius
    sdf_px = shape_sdf(style.shape, u, v) * radius
    alpha = np.clip(0.5 - sdf_px, 0.0, 1.0)
    if not alpha.any():
        return frame, (int(round(pose.x)),) * 2 + (int(round(pose.y)),) * 2
    phase = (np.cos(style.stripe_angle) * u + np.sin(style.stripe_angle) * v) * style.stripe_freq
    mix = 0.5 * (1.0 + np.sin(np.pi * phase))
    tex = (np.asarray(style.color_a)[None, None] * (1 - mix[..., None])
           + np.asarray(style.color_b)[None, None] * mix[..., None])
    region = frame[y0:y1 + 1, x0:x1 + 1]
    a = alpha[..., None]
    frame[y0:y1 + 1, x0:x1 + 1] = (a * tex + (1 - a) * region).astype(np.float32)
    rows = np.flatnonzero(alpha.any(1))
    cols = np.flatnonzero(alpha.any(0))
    bbox = (x0 + int(cols[0]), y0 + int(rows[0]), x0 + int(cols[-1]), y0 + int(rows[-1]))
    return frame, bbox


def _episode(cfg: SynthConfig, episode_id: int, class_id: int):
    rng = np.random.default_rng([cfg.seed, episode_id])
    size = cfg.frame_size
    lo, hi = cfg.scale_range
    bg = clutter_background(size, rng) if cfg.background == "clutter" else None
    scale = rng.uniform(lo, hi)
    margin = lambda sc: min(0.5 * sc * size * np.sqrt(2.0) + 1, size / 2)
    m = margin(hi)
    x, y = rng.uniform(m, size - 1 - m, 2) if size - 1 - 2 * m > 0 else ((size - 1) / 2,) * 2
    rot = rng.uniform(0, 2 * np.pi)
    frames, fixes, boxes, centers = [], [], [], []
    for t in range(cfg.frames_per_episode):
        if t > 0:
            ang = rng.uniform(0, 2 * np.pi)
            step = rng.uniform(0, cfg.max_step)
            nx = np.clip(x + step * np.cos(ang), m, size - 1 - m)
            ny = np.clip(y + step * np.sin(ang), m, size - 1 - m)
            x, y = (nx, ny) if size - 1 - 2 * m > 0 else (x, y)
            rot += rng.normal(0, 0.08)
            scale = float(np.clip(scale * np.exp(rng.normal(0, 0.02)), lo, hi))
        pose = Pose(float(x), float(y), float(rot), float(scale))
        img, bbox = render_frame(class_id, pose, cfg, bg)
        # fixation jitter: uniform in a disc of radius 10% of object size
        jr = 0.1 * scale * size * np.sqrt(rng.random())
        ja = rng.uniform(0, 2 * np.pi)
        fixes.append((x + jr * np.cos(ja), y + jr * np.sin(ja)))
        frames.append(np.floor(img * 255.0 + 0.5).astype(np.uint8))
        boxes.append(bbox)
        centers.append((x, y))
    return frames, fixes, boxes, centers


def generate_dataset(cfg: SynthConfig) -> EpisodeSet:
    """Render every episode; episode ids run class-major."""
    n_ep = cfg.n_classes * cfg.episodes_per_class
    t = cfg.frames_per_episode
    n = n_ep * t
    s = cfg.frame_size
    frames = np.empty((n, s, s, 3), np.uint8)
    fixations = np.empty((n, 2))
    boxes = np.empty((n, 4), np.int64)
    centers = np.empty((n, 2))
    labels = np.repeat(np.arange(cfg.n_classes), cfg.episodes_per_class * t)
    episodes = np.repeat(np.arange(n_ep), t)
    frame_index = np.tile(np.arange(t), n_ep)
    for ep in range(n_ep):
        fr, fx, bx, ct = _episode(cfg, ep, ep // cfg.episodes_per_class)
        sl = slice(ep * t, (ep + 1) * t)
        frames[sl] = np.stack(fr)
        fixations[sl] = fx
        boxes[sl] = bx
        centers[sl] = ct
    return EpisodeSet(frames, fixations, labels.astype(np.int64), episodes.astype(np.int64),
                      frame_index.astype(np.int64), boxes, cfg.n_classes, centers)


def frame_name(episode: int, t: int) -> str:
    return f"ep{episode:04d}/{t:04d}.png"


def save_dataset(ds: EpisodeSet, out_dir, cfg: SynthConfig | None = None) -> None:
    """Write frames/, fixations.csv, labels.csv, boxes.csv and manifest.json."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    names = [frame_name(int(e), int(t)) for e, t in zip(ds.episodes, ds.frame_index)]
    for name, frame in zip(names, ds.frames):
        save_png(out / "frames" / name, frame.astype(np.float32) / 255.0)
    write_fixation_csv(out / "fixations.csv",
                       {n: ds.fixation(i) for i, n in enumerate(names)})
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "label", "episode"])
        for n, lab, ep in zip(names, ds.labels, ds.episodes):
            w.writerow([n, int(lab), int(ep)])
    with open(out / "boxes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["frame", "x0", "y0", "x1", "y1"]
        w.writerow(header + (["cx", "cy"] if ds.centers is not None else []))
        for i, (n, b) in enumerate(zip(names, ds.boxes)):
            extra = [] if ds.centers is None else [repr(float(v)) for v in ds.centers[i]]
            w.writerow([n] + [int(v) for v in b] + extra)
    manifest = {"n_classes": ds.n_classes, "n_frames": len(ds)}
    if cfg is not None:
        manifest["config"] = asdict(cfg)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(data_dir) -> EpisodeSet:
    """Load a directory laid out like :func:`save_dataset` output.

    Only ``labels.csv`` and ``frames/`` are required; missing fixations
    default to the image center and missing boxes to the full frame.
    """
    root = Path(data_dir)
    with open(root / "labels.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{root / 'labels.csv'} has no rows")
    fix_table = read_fixation_csv(root / "fixations.csv") if (root / "fixations.csv").exists() else {}
    box_table, center_table = {}, {}
    if (root / "boxes.csv").exists():
        with open(root / "boxes.csv", newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                box_table[r["frame"]] = [int(r[k]) for k in ("x0", "y0", "x1", "y1")]
                if r.get("cx"):
                    center_table[r["frame"]] = (float(r["cx"]), float(r["cy"]))
    # group by episode, preserve file order within each episode
    rows.sort(key=lambda r: (int(r["episode"]), r["frame"]))
    images = [load_png(root / "frames" / r["frame"]) for r in rows]
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ValueError("all frames must share one shape")
    frames = np.stack([np.floor(im * 255.0 + 0.5).astype(np.uint8) for im in images])
    if frames.shape[-1] == 1:
        frames = np.repeat(frames, 3, axis=-1)
    h, w = shape[:2]
    fixations, boxes, frame_index = [], [], []
    prev_ep, t = None, 0
    for r in rows:
        fix = fix_table.get(r["frame"], FixationPoint.center_of(w, h))
        fixations.append((fix.x, fix.y))
        boxes.append(box_table.get(r["frame"], [0, 0, w - 1, h - 1]))
        ep = int(r["episode"])
        t = t + 1 if ep == prev_ep else 0
        prev_ep = ep
        frame_index.append(t)
    labels = np.array([int(r["label"]) for r in rows], np.int64)
    manifest = root / "manifest.json"
    n_classes = (json.loads(manifest.read_text()).get("n_classes") if manifest.exists()
                 else None) or int(labels.max()) + 1
    centers = None
    if center_table and all(r["frame"] in center_table for r in rows):
        centers = np.array([center_table[r["frame"]] for r in rows], np.float64)
    return EpisodeSet(frames, np.array(fixations, np.float64), labels,
                      np.array([int(r["episode"]) for r in rows], np.int64),
                      np.array(frame_index, np.int64), np.array(boxes, np.int64), n_classes,
                      centers)
