"""Landmark alignment, region cropping and augmentation of face images."""
from .align import (SimilarityTransform, crop_region, estimate_similarity, region_box,
                    warp_resize)
from .augment import add_gaussian_noise, from_tensor, offline_augment, rotate, to_tensor
from .image import ImageBuffer, read_image, write_image
from .landmarks import (REGION_DEFS, RegionDef, canonical_template, read_landmarks,
                        write_landmarks)
from .pipeline import align_face, extract_regions

__all__ = [
    "ImageBuffer", "REGION_DEFS", "RegionDef", "SimilarityTransform", "add_gaussian_noise",
    "align_face", "canonical_template", "crop_region", "estimate_similarity",
    "extract_regions", "from_tensor", "offline_augment", "read_image", "read_landmarks",
    "region_box", "rotate", "to_tensor", "warp_resize", "write_image", "write_landmarks",
]
