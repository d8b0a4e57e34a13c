"""Foveated-vision augmentations and a small temporal self-supervised learning lab."""
from .foveation import FoveationParams, build_belt_masks, foveate_image
from .imaging import AugmentationSpec, apply_augmentation, crop_at_fixation, resize_bilinear
from .warp import (FixationPoint, SamplingGrid, WarpDomainError, WarpParams, build_sampling_grid,
                   cmf, ecc_of_radius, radius_of_ecc, warp_image)

__all__ = [
    "AugmentationSpec", "FixationPoint", "FoveationParams", "SamplingGrid", "WarpDomainError",
    "WarpParams", "apply_augmentation", "build_belt_masks", "build_sampling_grid", "cmf",
    "crop_at_fixation", "ecc_of_radius", "foveate_image", "radius_of_ecc", "resize_bilinear",
    "warp_image",
]
__version__ = "0.1.0"
