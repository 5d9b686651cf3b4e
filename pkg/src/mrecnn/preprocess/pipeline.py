"""Whole-image to four-crop pipeline."""
from __future__ import annotations

from .align import crop_region, estimate_similarity, warp_resize
from .image import ImageBuffer
from .landmarks import REGION_DEFS, as_landmarks, canonical_template

CROP_ORDER = ("whole_face", "left_eye", "nose", "mouth")


def align_face(img: ImageBuffer, landmarks, out_size: int, template=None) -> tuple[ImageBuffer, object]:
    """Warp ``img`` so its landmarks best match the template at ``out_size``."""
    tmpl = canonical_template(out_size) if template is None else as_landmarks(template) * out_size
    t = estimate_similarity(as_landmarks(landmarks), tmpl)
    return warp_resize(img, t, out_size), tmpl


def extract_regions(img: ImageBuffer, landmarks, out_size: int = 224, template=None,
                    regions=None) -> dict[str, ImageBuffer]:
    """Aligned whole-face, left-eye, nose and mouth crops, each ``out_size`` square.

    ``template`` is given in unit-square coordinates; the shipped mean face is
    used when it is omitted.
    """
    regions = REGION_DEFS if regions is None else regions
    aligned, tmpl = align_face(img, landmarks, out_size, template)
    return {name: crop_region(aligned, regions[name], tmpl, out_size) for name in CROP_ORDER}
