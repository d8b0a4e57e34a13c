"""Cortical magnification warp.

Output ("cortical") radius r about the fixation point samples the input
("retinal") image at eccentricity e(r) along the same ray:

    e(r) = r / C                                              r <  r_fov
    e(r) = ((r + K)^2 / (2 (r_fov + K)) + (r_fov - K) / 2) / C  r >= r_fov

The magnification factor is defined as 1 / e'(r), i.e. C for r < r_fov and
C (r_fov + K) / (r + K) beyond, so that it integrates exactly to e(r).

Coordinates follow the pixel-center convention: pixel (col, row) sits at
(x, y) = (col, row).  Geometry is evaluated in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class WarpDomainError(ValueError):
    """Raised for invalid warp parameters or radii outside the domain."""


@dataclass(frozen=True)
class WarpParams:
    c_scale: float = 1.0
    r_fov: float = 20.0
    k_shape: float = 20.0

    def __post_init__(self):
        for name in ("c_scale", "r_fov", "k_shape"):
            if not math.isfinite(getattr(self, name)):
                raise WarpDomainError(f"{name} must be finite")
        if self.c_scale <= 0:
            raise WarpDomainError(f"c_scale must be > 0, got {self.c_scale}")
        if self.r_fov < 0:
            raise WarpDomainError(f"r_fov must be >= 0, got {self.r_fov}")
        if self.r_fov + self.k_shape <= 0:
            raise WarpDomainError(
                f"r_fov + k_shape must be > 0 (got r_fov={self.r_fov}, k={self.k_shape})")


@dataclass(frozen=True)
class FixationPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("fixation coordinates must be finite")

    @classmethod
    def center_of(cls, width: int, height: int) -> "FixationPoint":
        return cls(float(width // 2), float(height // 2))


@dataclass(frozen=True)
class SamplingGrid:
    width: int
    height: int
    src_x: np.ndarray  # (height, width) float64
    src_y: np.ndarray
    fill_mask: np.ndarray  # (height, width) bool, True where source is out of bounds


def cmf(r, p: WarpParams):
    """Magnification factor at cortical radius ``r`` (scalar or array)."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise WarpDomainError("radius must be nonnegative")
    periph = r >= p.r_fov
    if np.any(r[periph] + p.k_shape <= 0):
        raise WarpDomainError("r + k_shape must be > 0 on the peripheral branch")
    out = np.full_like(r, p.c_scale)
    rp = r[periph]
    out[periph] = p.c_scale * (p.r_fov + p.k_shape) / (rp + p.k_shape)
    return out[()] if out.ndim == 0 else out


def ecc_of_radius(r, p: WarpParams):
    """Retinal eccentricity sampled by cortical radius ``r``."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise WarpDomainError("radius must be nonnegative")
    c, rf, k = p.c_scale, p.r_fov, p.k_shape
    quad = (r + k) ** 2 / (2.0 * (rf + k)) + (rf - k) / 2.0
    out = np.where(r < rf, r, quad) / c
    return out[()] if out.ndim == 0 else out


def radius_of_ecc(e, p: WarpParams):
    """Inverse of :func:`ecc_of_radius`."""
    e = np.asarray(e, dtype=np.float64)
    if np.any(e < 0):
        raise WarpDomainError("eccentricity must be nonnegative")
    c, rf, k = p.c_scale, p.r_fov, p.k_shape
    ce = c * e
    # e(r_fov) = r_fov / C from both branches
    inner = np.maximum(2.0 * (rf + k) * (ce - (rf - k) / 2.0), 0.0)
    out = np.where(ce < rf, ce, np.sqrt(inner) - k)
    return out[()] if out.ndim == 0 else out


def _radial_offsets(out_w: int, out_h: int, fix: FixationPoint, p: WarpParams):
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    dx = xs - fix.x
    dy = ys - fix.y
    r = np.hypot(dx, dy)
    e = ecc_of_radius(r, p)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, e / r, 0.0)
    return scale * dx, scale * dy


def build_sampling_grid(out_w: int, out_h: int, fix: FixationPoint, p: WarpParams,
                        in_w: int, in_h: int) -> SamplingGrid:
    """Source coordinates for every output pixel of the warp."""
    if min(out_w, out_h, in_w, in_h) < 1:
        raise ValueError("image dimensions must be >= 1")
    ox, oy = _radial_offsets(out_w, out_h, fix, p)
    # the fixation pixel has zero offset, so it maps to itself exactly
    src_x = fix.x + ox
    src_y = fix.y + oy
    fill_mask = (src_x < 0) | (src_x > in_w - 1) | (src_y < 0) | (src_y > in_h - 1)
    return SamplingGrid(out_w, out_h, src_x, src_y, fill_mask)


@dataclass(frozen=True)
class BilinearPlan:
    """Precomputed gather indices and weights for bilinear sampling.

    Reusable across every image of one input shape, which is what makes
    batched augmentation cheap.
    """
    out_shape: tuple[int, int]
    index: np.ndarray    # (4, n_out) flat source indices: x0y0, x1y0, x0y1, x1y1
    weight: np.ndarray   # (4, n_out) float64
    fill_mask: np.ndarray  # (n_out,) bool


def _axis_taps(offset: np.ndarray, origin: float, size: int):
    # Split around an integer base so that weights for +o and -o are mirror
    # images bit for bit: lo = (i0 + 1) - o and hi = o - i0 are each one
    # correctly rounded operation on the same real number.
    base = math.floor(origin)
    o = (origin - base) + offset
    i0 = np.floor(o)
    hi = o - i0
    lo = (i0 + 1.0) - o
    idx0 = i0.astype(np.int64) + base
    src = base + o
    oob = (src < 0) | (src > size - 1)
    i_lo = np.clip(idx0, 0, size - 1)
    i_hi = np.clip(idx0 + 1, 0, size - 1)
    return i_lo, i_hi, lo, hi, oob


def bilinear_plan(off_x: np.ndarray, off_y: np.ndarray, origin_x: float, origin_y: float,
                  in_w: int, in_h: int, clamp: bool = False) -> BilinearPlan:
    """Plan sampling at ``(origin_x + off_x, origin_y + off_y)``.

    With ``clamp`` the source point is clamped onto the image instead of
    being flagged for fill.
    """
    out_shape = off_x.shape
    ox = np.asarray(off_x, np.float64).ravel()
    oy = np.asarray(off_y, np.float64).ravel()
    if clamp:
        ox = np.clip(origin_x + ox, 0, in_w - 1) - origin_x
        oy = np.clip(origin_y + oy, 0, in_h - 1) - origin_y
    x_lo, x_hi, wxl, wxh, oob_x = _axis_taps(ox, origin_x, in_w)
    y_lo, y_hi, wyl, wyh, oob_y = _axis_taps(oy, origin_y, in_h)
    fill = (oob_x | oob_y) if not clamp else np.zeros(ox.shape, bool)
    index = np.stack([y_lo * in_w + x_lo, y_lo * in_w + x_hi,
                      y_hi * in_w + x_lo, y_hi * in_w + x_hi])
    weight = np.stack([wxl * wyl, wxh * wyl, wxl * wyh, wxh * wyh])
    index[:, fill] = 0
    weight[:, fill] = 0.0
    return BilinearPlan(out_shape, index, weight, fill)


def resample(plan: BilinearPlan, pix: np.ndarray, fill=0.0) -> np.ndarray:
    """Resample pixel-major data of shape (H*W, M) through ``plan``.

    uint8 input is read as intensity / 255.  ``fill`` is a scalar or a
    length-M vector.  Returns (n_out, M), clipped
    to [0, 1].
    """
    if pix.dtype == np.uint8:
        # gather raw bytes, fold the 1/255 scaling into the weights
        dtype = np.float32
        w = (plan.weight / 255.0).astype(dtype)[:, :, None]
        t = [np.take(pix, plan.index[k], axis=0).astype(dtype) for k in range(4)]
    else:
        dtype = pix.dtype if pix.dtype.kind == "f" else np.float32
        pix = pix.astype(dtype, copy=False)
        w = plan.weight.astype(dtype)[:, :, None]
        t = [np.take(pix, plan.index[k], axis=0) for k in range(4)]
    for k in range(4):
        t[k] *= w[k]
    # diagonal pairing keeps the sum invariant under 90 degree rotations
    t[0] += t[3]
    t[1] += t[2]
    t[0] += t[1]
    out = t[0]
    fill = np.asarray(fill, dtype)
    if plan.fill_mask.any() and np.any(fill != 0):
        # masked pixels have all-zero weights, so adding sets them to fill
        out += plan.fill_mask[:, None].astype(dtype) * fill
    np.clip(out, 0.0, 1.0, out=out)
    return out


def apply_plan(plan: BilinearPlan, images: np.ndarray, fill=0.0) -> np.ndarray:
    """Resample images of shape (..., H, W, C) through ``plan``."""
    h, w, c = images.shape[-3:]
    lead = images.shape[:-3]
    n = int(np.prod(lead, dtype=np.int64))
    if n == 1:
        pix = images.reshape(h * w, c)
    else:
        pix = np.ascontiguousarray(np.moveaxis(images.reshape((n, h, w, c)), 0, 2))
        pix = pix.reshape(h * w, n * c)
    fill_vec = np.tile(np.broadcast_to(np.asarray(fill, np.float64), (c,)), n)
    out = resample(plan, pix, fill_vec)
    oh, ow = plan.out_shape
    if n == 1:
        return out.reshape(lead + (oh, ow, c))
    out = np.moveaxis(out.reshape(oh, ow, n, c), 2, 0)
    return np.ascontiguousarray(out).reshape(lead + (oh, ow, c))


@lru_cache(maxsize=64)
def warp_resize_plan(side: int, out_size: int, fix_x: float, fix_y: float, p: WarpParams,
                     clamp: bool = False) -> BilinearPlan:
    """Warp a ``side`` x ``side`` image and resize it to ``out_size`` in one resampling.

    Output pixel i sits at i (side - 1) / (out_size - 1) in warped-image
    coordinates, and the radial map is evaluated there directly.
    """
    if out_size == 1:
        pos = np.array([(side - 1) / 2.0])
    else:
        pos = np.arange(out_size, dtype=np.float64) * (side - 1) / (out_size - 1)
    ys, xs = np.meshgrid(pos, pos, indexing="ij")
    dx, dy = xs - fix_x, ys - fix_y
    r = np.hypot(dx, dy)
    e = ecc_of_radius(r, p)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, e / r, 0.0)
    return bilinear_plan(scale * dx, scale * dy, fix_x, fix_y, side, side, clamp=clamp)


@lru_cache(maxsize=64)
def _cached_warp_plan(h: int, w: int, fx: float, fy: float, p: WarpParams,
                      clamp: bool) -> BilinearPlan:
    ox, oy = _radial_offsets(w, h, FixationPoint(fx, fy), p)
    return bilinear_plan(ox, oy, fx, fy, w, h, clamp=clamp)


def warp_plan(h: int, w: int, fix: FixationPoint, p: WarpParams,
              clamp: bool = False) -> BilinearPlan:
    return _cached_warp_plan(h, w, float(fix.x), float(fix.y), p, clamp)


def warp_image(img: np.ndarray, fix: FixationPoint, p: WarpParams, fill=0.0,
               clamp: bool = False) -> np.ndarray:
    """Cortical magnification warp of an (H, W, C) image, or a batch (N, H, W, C).

    Out-of-bounds sources take ``fill`` unless ``clamp`` is set, in which
    case they are clamped to the nearest edge.
    """
    if img.ndim < 3 or img.shape[-3] < 1 or img.shape[-2] < 1:
        raise ValueError("expected a nonempty (..., H, W, C) image")
    h, w = img.shape[-3:-1]
    return apply_plan(warp_plan(h, w, fix, p, clamp), img, fill)
