"""Eccentricity-belt Gaussian foveation.

The image is blurred once per belt and the blurred copies are blended with
radial masks that sum to one at every pixel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate1d

from .warp import FixationPoint


@dataclass(frozen=True)
class FoveationParams:
    n_belts: int = 5
    belt_bounds: tuple[float, ...] = (20.0, 40.0, 80.0, 160.0)
    sigmas: tuple[float, ...] = (0.0, 1.0, 2.0, 4.0, 8.0)
    blend_width: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "belt_bounds", tuple(float(b) for b in self.belt_bounds))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if self.n_belts < 1:
            raise ValueError("n_belts must be >= 1")
        if len(self.belt_bounds) != self.n_belts - 1:
            raise ValueError(f"need {self.n_belts - 1} belt bounds, got {len(self.belt_bounds)}")
        if len(self.sigmas) != self.n_belts:
            raise ValueError(f"need {self.n_belts} sigmas, got {len(self.sigmas)}")
        b = self.belt_bounds
        if any(x <= 0 for x in b) or any(b1 <= b0 for b0, b1 in zip(b, b[1:])):
            raise ValueError("belt_bounds must be positive and strictly increasing")
        s = self.sigmas
        if any(x < 0 for x in s) or any(s1 < s0 for s0, s1 in zip(s, s[1:])):
            raise ValueError("sigmas must be nonnegative and nondecreasing")
        if self.blend_width < 0:
            raise ValueError("blend_width must be >= 0")
        widths = np.diff((0.0,) + b)
        if len(widths) and self.blend_width >= widths.min():
            raise ValueError("blend_width must be smaller than the narrowest belt")

    @classmethod
    def geometric(cls, n_belts: int = 5, r0: float = 20.0, sigma_base: float = 1.0,
                  blend_width: float = 4.0) -> "FoveationParams":
        """Belt bounds r0 * 2^i and sigmas 0, s, 2s, 4s, ..."""
        bounds = tuple(r0 * 2.0 ** i for i in range(n_belts - 1))
        sigmas = (0.0,) + tuple(sigma_base * 2.0 ** (i - 1) for i in range(1, n_belts))
        blend = min(blend_width, 0.5 * r0) if n_belts > 1 else blend_width
        return cls(n_belts, bounds, sigmas, blend)


def _outer_fractions(r: np.ndarray, fp: FoveationParams) -> list[np.ndarray]:
    # s_k = how far a pixel has crossed boundary k, 0 inside, 1 outside
    h = fp.blend_width
    out = []
    for b in fp.belt_bounds:
        if h == 0:
            out.append((r >= b).astype(np.float64))
        else:
            out.append(np.clip((r - (b - h)) / (2.0 * h), 0.0, 1.0))
    return out


def _ramps(w: int, h: int, fix: FixationPoint, fp: FoveationParams) -> list[np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.hypot(xs - fix.x, ys - fix.y)
    return [np.ones_like(r)] + _outer_fractions(r, fp) + [np.zeros_like(r)]


def build_belt_masks(w: int, h: int, fix: FixationPoint, fp: FoveationParams) -> np.ndarray:
    """Belt masks as an (n_belts, h, w) float64 array.

    Adjacent masks crossfade linearly over ``blend_width`` on each side of a
    boundary.  Masks are differences of monotone ramps, so they telescope
    to exactly one.
    """
    ramps = _ramps(w, h, fix, fp)
    return np.stack([ramps[i] - ramps[i + 1] for i in range(fp.n_belts)])


@lru_cache(maxsize=32)
def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at ceil(4 sigma), normalized to unit sum."""
    if sigma <= 0:
        return np.ones(1)
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def blur_image(img: np.ndarray, sigma: float, axes=(-3, -2)) -> np.ndarray:
    """Separable Gaussian blur over the spatial ``axes`` (rows, cols) of ``img``.

    Boundaries are mirrored (half-sample symmetric), which conserves the
    image mean.
    """
    if sigma <= 0:
        return img
    k = gaussian_kernel1d(float(sigma)).astype(img.dtype)
    out = correlate1d(img, k, axis=axes[0], mode="reflect")
    return correlate1d(out, k, axis=axes[1], mode="reflect")


def foveate_image(img: np.ndarray, fix: FixationPoint, fp: FoveationParams,
                  channels_last: bool = True) -> np.ndarray:
    """Blend per-belt blurs of ``img`` with belt masks.

    ``img`` is (..., H, W, C), or (..., H, W) planes when ``channels_last``
    is False.
    """
    if img.ndim < (3 if channels_last else 2) or img.size == 0:
        raise ValueError("expected a nonempty image")
    axes = (-3, -2) if channels_last else (-2, -1)
    h, w = img.shape[axes[0]], img.shape[axes[1]]
    ramps = _ramps(w, h, fix, fp)
    # belts sharing a sigma are merged first so their mask is one ramp difference
    groups: list[tuple[float, int, int]] = []
    for i, sigma in enumerate(fp.sigmas):
        if groups and groups[-1][0] == sigma:
            groups[-1] = (sigma, groups[-1][1], i + 1)
        else:
            groups.append((sigma, i, i + 1))
    out = None
    for sigma, lo, hi in groups:
        m = (ramps[lo] - ramps[hi]).astype(img.dtype)
        if not m.any():
            continue
        term = blur_image(img, sigma, axes) * (m[:, :, None] if channels_last else m)
        out = term if out is None else out + term
    return np.clip(out, 0.0, 1.0)
