"""Top-down orthographic rasterizer for the segmented observation.

The observation is a 250x200 label image over {0 background, 1 peg, 2 seam},
where the seam is the visible hole-opening area not covered by the peg. The
camera maps world mm to pixels by a pure scale about the principal point
(the hole centre in the image); labels are assigned by the pixel-centre rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import geometry
from .shapes import ShapeSpec

IMAGE_WIDTH = 250
IMAGE_HEIGHT = 200

BACKGROUND, PEG, SEAM = 0, 1, 2
LABEL_VALUES = (BACKGROUND, PEG, SEAM)

# 8-bit gray levels used when label images are written to disk
_LABEL_TO_GRAY = np.array([0, 127, 255], dtype=np.uint8)


class PegOutOfViewError(ValueError):
    """The peg footprint does not intersect the image at all."""


@dataclass(frozen=True)
class CameraModel:
    """Affine world(mm) -> pixel calibration for the fixed top-down view."""

    px_per_mm: float = 2.0
    image_width: int = IMAGE_WIDTH
    image_height: int = IMAGE_HEIGHT
    principal_point: tuple[float, float] = (IMAGE_WIDTH / 2, IMAGE_HEIGHT / 2)  # (col, row)

    def __post_init__(self):
        if self.px_per_mm <= 0:
            raise ValueError("px_per_mm must be positive")

    def world_polygon_to_px(self, poly_mm: np.ndarray) -> np.ndarray:
        cx, cy = self.principal_point
        return poly_mm * self.px_per_mm + np.array([cx, cy])


def world_to_pixel(camera: CameraModel, displacement_mm: tuple[float, float]) -> tuple[int, int]:
    """Scale a world displacement to integer pixels (ties round to even)."""
    dx, dy = displacement_mm
    return (
        int(np.rint(dx * camera.px_per_mm)),
        int(np.rint(dy * camera.px_per_mm)),
    )


def pixel_to_world(camera: CameraModel, displacement_px: tuple[float, float]) -> tuple[float, float]:
    di, dj = displacement_px
    return di / camera.px_per_mm, dj / camera.px_per_mm


_hole_mask_cache: dict[tuple, np.ndarray] = {}


def hole_opening_mask(shape: ShapeSpec, camera: CameraModel) -> np.ndarray:
    """Boolean mask of the hole opening; cached, the hole never moves."""
    key = (
        shape.id,
        round(shape.clearance, 9),
        camera.px_per_mm,
        camera.image_width,
        camera.image_height,
        camera.principal_point,
    )
    mask = _hole_mask_cache.get(key)
    if mask is None:
        poly_px = camera.world_polygon_to_px(shape.hole_polygon)
        mask = geometry.rasterize_polygon(poly_px, camera.image_height, camera.image_width)
        if len(_hole_mask_cache) > 256:
            _hole_mask_cache.clear()
        _hole_mask_cache[key] = mask
    return mask


def render_seg(shape: ShapeSpec, peg_pose, camera: CameraModel) -> np.ndarray:
    """Render the (H, W) uint8 label image for a peg at a planar pose.

    Raises PegOutOfViewError when no peg pixel lands in the frame; episodes
    start with both peg and hole visible, so this only happens if a caller
    drives the pose far outside the workspace.
    """
    peg_px = camera.world_polygon_to_px(
        geometry.transform_polygon(shape.peg_polygon, peg_pose.x, peg_pose.y, peg_pose.theta)
    )
    peg_mask = geometry.rasterize_polygon(peg_px, camera.image_height, camera.image_width)
    if not peg_mask.any():
        raise PegOutOfViewError(
            f"peg {shape.id!r} at ({peg_pose.x:.1f}, {peg_pose.y:.1f}) mm renders no pixels"
        )
    labels = np.zeros((camera.image_height, camera.image_width), dtype=np.uint8)
    labels[hole_opening_mask(shape, camera)] = SEAM
    labels[peg_mask] = PEG
    return labels


def split_channels(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Peg-only and seam-only views; labels kept, everything else background."""
    peg_only = np.where(image == PEG, PEG, BACKGROUND).astype(np.uint8)
    seam_only = np.where(image == SEAM, SEAM, BACKGROUND).astype(np.uint8)
    return peg_only, seam_only


def rotate_image(image: np.ndarray, angle_deg: float, center: tuple[float, float]) -> np.ndarray:
    """Nearest-neighbour rotation about `center` (col, row); fills background.

    Positive angles rotate content the same way positive pose angles rotate
    the peg polygon in world coordinates.
    """
    if angle_deg == 0.0:
        return image.copy()
    h, w = image.shape
    ccol, crow = center
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    cols, rows = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dc, dr = cols - ccol, rows - crow
    # inverse map: source = R(-angle) @ dest
    src_c = np.rint(c * dc + s * dr + ccol).astype(int)
    src_r = np.rint(-s * dc + c * dr + crow).astype(int)
    valid = (src_c >= 0) & (src_c < w) & (src_r >= 0) & (src_r < h)
    out = np.zeros_like(image)
    out[valid] = image[src_r[valid], src_c[valid]]
    return out


def rotate_mask_bilinear(mask: np.ndarray, angle_deg: float, center: tuple[float, float]) -> np.ndarray:
    """Anti-aliased rotation of a float mask about `center` (col, row).

    Unlike rotate_image this interpolates, preserving sub-pixel contour
    positions; values stay in [0, 1]. Out-of-frame samples read as 0.
    """
    src = np.asarray(mask, dtype=np.float64)
    if angle_deg == 0.0:
        return src.copy()
    h, w = src.shape
    ccol, crow = center
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    cols, rows = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dc, dr = cols - ccol, rows - crow
    src_c = c * dc + s * dr + ccol
    src_r = -s * dc + c * dr + crow
    c0 = np.floor(src_c).astype(int)
    r0 = np.floor(src_r).astype(int)
    fc, fr = src_c - c0, src_r - r0
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = src
    c0 = np.clip(c0 + 1, 0, w)
    r0 = np.clip(r0 + 1, 0, h)
    out = (
        padded[r0, c0] * (1 - fr) * (1 - fc)
        + padded[r0, c0 + 1] * (1 - fr) * fc
        + padded[r0 + 1, c0] * fr * (1 - fc)
        + padded[r0 + 1, c0 + 1] * fr * fc
    )
    return out


def save_label_image(image: np.ndarray, path: str | Path) -> None:
    """Write labels as lossless 8-bit grayscale with levels {0, 127, 255}."""
    Image.fromarray(_LABEL_TO_GRAY[image]).save(str(path))


def load_label_image(path: str | Path) -> np.ndarray:
    gray = np.asarray(Image.open(str(path)))
    labels = np.zeros(gray.shape, dtype=np.uint8)
    labels[gray == 127] = PEG
    labels[gray == 255] = SEAM
    return labels
