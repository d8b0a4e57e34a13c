"""Experiment grids: train, probe and report accuracy per grid cell and seed."""
from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .evaluate import dataset_features, episode_split, train_linear_probe
from .imaging import AugmentationSpec
from .synth import EpisodeSet
from .train import TrainConfig, TrainingDiverged, train
from .warp import WarpDomainError, WarpParams

log = logging.getLogger(__name__)

CSV_HEADER = ["method", "mode", "crop", "rfov", "k", "seed", "test_acc", "status"]


@dataclass(frozen=True)
class SweepGrid:
    methods: tuple[str, ...] = ("simclr-tt",)
    modes: tuple[str, ...] = ("none", "magnification")
    crops: tuple[int, ...] = (128,)
    rfovs: tuple[float, ...] = (20.0,)
    ks: tuple[float, ...] = (20.0,)

    def cells(self):
        """Valid (method, mode, crop, rfov, k) cells; singular warps are skipped."""
        for method, mode, crop, rfov, k in itertools.product(
                self.methods, self.modes, self.crops, self.rfovs, self.ks):
            if rfov + k <= 0:
                log.warning("skipping singular cell rfov=%g k=%g (rfov + k <= 0)", rfov, k)
                continue
            yield method, AugmentationSpec(mode).mode, int(crop), float(rfov), float(k)


@dataclass(frozen=True)
class SweepRow:
    method: str
    mode: str
    crop: int
    rfov: float
    k: float
    seed: int
    test_acc: float
    status: str = "ok"

    def sort_key(self):
        return (self.method, self.mode, self.crop, self.rfov, self.k, self.seed)


@dataclass
class SweepReport:
    rows: list[SweepRow]
    grid: SweepGrid = field(default_factory=SweepGrid)

    def summary(self) -> dict[tuple, tuple[float, float, int]]:
        """cell -> (mean, sample sd, n) over seeds with status ok."""
        groups: dict[tuple, list[float]] = {}
        for r in self.rows:
            if r.status == "ok":
                groups.setdefault(r.sort_key()[:-1], []).append(r.test_acc)
        return {cell: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0, len(v))
                for cell, v in groups.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.method, r.mode, r.crop, repr(r.rfov), repr(r.k), r.seed,
                        repr(r.test_acc), r.status])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, grid: SweepGrid | None = None) -> "SweepReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected sweep.csv header {header}")
        rows = [SweepRow(m, mode, int(c), float(rf), float(k), int(s), float(acc), st)
                for m, mode, c, rf, k, s, acc, st in reader]
        return cls(rows, grid or SweepGrid())


def run_cell(ds: EpisodeSet, test_mask: np.ndarray, method: str, mode: str, crop: int,
             rfov: float, k: float, seed: int, budget: TrainConfig,
             base_spec: AugmentationSpec | None = None, traces: dict | None = None) -> SweepRow:
    base = base_spec or AugmentationSpec()
    try:
        spec = replace(base, mode=mode, warp=replace(base.warp, r_fov=rfov, k_shape=k))
        cfg = replace(budget, method=method, crop=crop, seed=seed)
        state, trace = train(ds.subset(np.flatnonzero(~test_mask)), spec, cfg)
        if traces is not None:
            traces[(method, mode, crop, rfov, k, seed)] = trace
        feats = dataset_features(state, ds, spec, crop)
        probe = train_linear_probe(feats, ds.labels, test_mask, ds.n_classes)
        return SweepRow(method, mode, crop, rfov, k, seed, probe.test_acc)
    except (TrainingDiverged, WarpDomainError, ValueError) as exc:
        log.error("cell %s/%s crop=%d rfov=%g k=%g seed=%d failed: %s",
                  method, mode, crop, rfov, k, seed, exc)
        return SweepRow(method, mode, crop, rfov, k, seed, float("nan"), "error")


def run_sweep(ds: EpisodeSet, grid: SweepGrid, seeds, budget: TrainConfig,
              base_spec: AugmentationSpec | None = None,
              traces: dict | None = None) -> SweepReport:
    """Train and probe every valid grid cell for every seed.

    Rows come out sorted by (method, mode, crop, rfov, k, seed).  When
    ``traces`` is given it collects each run's per-epoch loss trace keyed
    like a row's sort key.
    """
    test_mask = episode_split(ds)
    rows = []
    for method, mode, crop, rfov, k in grid.cells():
        for seed in seeds:
            row = run_cell(ds, test_mask, method, mode, crop, rfov, k, int(seed), budget,
                           base_spec, traces)
            log.info("%s %s crop=%d rfov=%g k=%g seed=%d acc=%.4f", method, mode, crop,
                     rfov, k, seed, row.test_acc)
            rows.append(row)
    rows.sort(key=SweepRow.sort_key)
    return SweepReport(rows, grid)


def _swept_axis(report: SweepReport) -> str:
    for axis in ("crop", "rfov", "k"):
        if len({getattr(r, axis) for r in report.rows}) > 1:
            return axis
    return "crop"


def emit_report(report: SweepReport, out_dir) -> list[Path]:
    """Write sweep.csv and a sweep.svg line chart with seed error bars."""
    if not report.rows:
        raise ValueError("empty sweep report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    svg_path = out / "sweep.svg"
    _plot(report, svg_path)
    return [csv_path, svg_path]


def _plot(report: SweepReport, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "fovlab"
    axis = _swept_axis(report)
    idx = {"crop": 2, "rfov": 3, "k": 4}[axis]
    summary = report.summary()
    lines: dict[tuple, list[tuple[float, float, float]]] = {}
    baselines: dict[str, list[float]] = {}
    for cell, (mean, sd, _) in sorted(summary.items()):
        method, mode = cell[0], cell[1]
        if mode == "none":
            baselines.setdefault(method, []).append(mean)
            continue
        key = tuple(v for i, v in enumerate(cell) if i != idx)
        lines.setdefault(key, []).append((cell[idx], mean, sd))
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, pts in lines.items():
        pts.sort()
        xs, ms, sds = zip(*pts)
        ax.errorbar(xs, ms, yerr=sds, marker="o", capsize=3, label=" ".join(map(str, key[:2])))
    for method, vals in baselines.items():
        ax.axhline(float(np.mean(vals)), linestyle="--", color="gray",
                   label=f"{method} none (baseline)")
    ax.set_xlabel({"crop": "crop size (px)", "rfov": "r_fov (px)", "k": "K (px)"}[axis])
    ax.set_ylabel("probe test accuracy")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
