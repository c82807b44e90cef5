"""Heatmap targets, losses, and the metrics they are scored with.

These are the numerical contracts of the perception stack, kept in plain
numpy so they can be oracle-tested independently of the network code. The
torch training path mirrors these formulas and is tested for equality.

Conventions: a position heatmap is an (n, n) array indexed [i, j] where
i encodes the x displacement (dx = i - n//2 px) and j the y displacement.
The orientation heatmap is an 11-vector over rotations (k - 5) * 2 deg.
"""

from __future__ import annotations

import math

import numpy as np

POSITION_GRID_N = 41
ORIENTATION_BINS = 11
ORIENTATION_STEP_DEG = 2.0
ORIENTATION_CENTER = ORIENTATION_BINS // 2
BCE_EPS = 1e-7


class HeatmapRangeError(ValueError):
    """Displacement outside the heatmap grid; callers must clip first."""


def make_position_target(dx_px: int, dy_px: int, n: int = POSITION_GRID_N) -> np.ndarray:
    """One-hot (n, n) grid with the hot cell at (dx + n//2, dy + n//2)."""
    half = n // 2
    if abs(dx_px) > half or abs(dy_px) > half:
        raise HeatmapRangeError(f"displacement ({dx_px}, {dy_px}) px exceeds +/-{half}")
    target = np.zeros((n, n), dtype=np.float64)
    target[dx_px + half, dy_px + half] = 1.0
    return target


def heatmap_argmax_displacement(heatmap: np.ndarray) -> tuple[int, int]:
    """Inverse of make_position_target; ties go to the first row-major cell."""
    n = heatmap.shape[0]
    i, j = np.unravel_index(int(np.argmax(heatmap)), heatmap.shape)
    return int(i) - n // 2, int(j) - n // 2


def clip_to_grid(dx_px: int, dy_px: int, n: int = POSITION_GRID_N) -> tuple[int, int]:
    half = n // 2
    return int(np.clip(dx_px, -half, half)), int(np.clip(dy_px, -half, half))


def bce_heatmap_loss(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> float:
    """Summed binary cross entropy over all cells, predictions clipped to [eps, 1-eps]."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    p = np.clip(pred, eps, 1.0 - eps)
    return float(-np.sum(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)))


def bce_heatmap_grad(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> np.ndarray:
    """Analytic d(loss)/d(pred); zero where the clip is active."""
    p = np.clip(pred, eps, 1.0 - eps)
    grad = -(target / p) + (1.0 - target) / (1.0 - p)
    grad[(pred < eps) | (pred > 1.0 - eps)] = 0.0
    return grad


def feature_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Euclidean distance between flattened feature maps, RMS-normalized.

    Dividing by sqrt(#elements) keeps exp(-d) in a usable range regardless
    of feature-map size.
    """
    diff = np.ravel(u) - np.ravel(v)
    return float(np.linalg.norm(diff) / math.sqrt(diff.size))


def similarity_from_distance(d: float) -> float:
    """Orientation-heatmap entry: e^{-d}, in (0, 1] for d >= 0."""
    if d < 0:
        raise ValueError("distance must be >= 0")
    return float(math.exp(-d))


def contrastive_loss(d_pos: float, d_neg: float) -> float:
    """Hinge pushing the matched similarity above a mismatch by margin 1."""
    return float(max(d_neg - d_pos + 1.0, 0.0))


def contrastive_loss_grad(d_pos: float, d_neg: float) -> tuple[float, float]:
    """(d/dD_p, d/dD_n) of the hinge."""
    if d_neg - d_pos + 1.0 > 0.0:
        return -1.0, 1.0
    return 0.0, 0.0


def contrastive_loss_mean(similarities: np.ndarray, positive_index: int) -> float:
    """Average hinge over the (positive, negative) pairs within one sample."""
    sims = np.asarray(similarities, dtype=float)
    if sims.ndim != 1:
        raise ValueError("similarities must be a flat vector")
    if not 0 <= positive_index < sims.size:
        raise ValueError(f"positive index {positive_index} out of range")
    d_pos = sims[positive_index]
    negatives = np.delete(sims, positive_index)
    return float(np.mean(np.maximum(negatives - d_pos + 1.0, 0.0)))


def quantize_orientation(theta_deg: float) -> int:
    """Bin index 0..10 for an angular error, nearest 2 deg, ties toward zero."""
    magnitude = abs(theta_deg) / ORIENTATION_STEP_DEG
    k = math.ceil(magnitude - 0.5)
    k = int(math.copysign(k, theta_deg)) if theta_deg != 0 else 0
    return int(np.clip(ORIENTATION_CENTER + k, 0, ORIENTATION_BINS - 1))


def orientation_bin_angle(index: int) -> float:
    """Rotation in degrees represented by a bank/bin index."""
    return (index - ORIENTATION_CENTER) * ORIENTATION_STEP_DEG


def mean_iou(pred: np.ndarray, gt: np.ndarray, num_classes: int = 3) -> float:
    """Mean over classes of |pred & gt| / |pred | gt|; absent classes skipped."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    ious = []
    for c in range(num_classes):
        p, g = pred == c, gt == c
        union = np.count_nonzero(p | g)
        if union == 0:
            continue
        ious.append(np.count_nonzero(p & g) / union)
    return float(np.mean(ious)) if ious else 1.0


def iou_from_confusion(confusion: np.ndarray) -> list[float]:
    """Per-class IoU from a (C, C) confusion matrix (rows = ground truth)."""
    ious = []
    for c in range(confusion.shape[0]):
        inter = confusion[c, c]
        union = confusion[c, :].sum() + confusion[:, c].sum() - inter
        ious.append(float(inter / union) if union > 0 else float("nan"))
    return ious
