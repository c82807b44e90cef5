"""Planar polygon primitives shared by the simulator and the rasterizer.

Polygons are (V, 2) float arrays of vertices in counter-clockwise order,
in millimetres unless a function says otherwise. No polygon here has holes;
pegs and hole openings are simple closed contours.
"""

from __future__ import annotations

import math

import numpy as np
from shapely.geometry import Polygon as _ShapelyPolygon


def as_polygon(vertices) -> np.ndarray:
    poly = np.asarray(vertices, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise ValueError(f"polygon needs shape (V>=3, 2), got {poly.shape}")
    return poly


def signed_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise vertex order."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def centroid(poly: np.ndarray) -> np.ndarray:
    """Area centroid of a simple polygon."""
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * np.sum(cross)
    if abs(area) < 1e-12:
        return poly.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * area)
    cy = np.sum((y + yn) * cross) / (6.0 * area)
    return np.array([cx, cy])


def ensure_ccw(poly: np.ndarray) -> np.ndarray:
    return poly if signed_area(poly) > 0 else poly[::-1].copy()


def is_simple(poly: np.ndarray) -> bool:
    """True if the contour does not self-intersect (and has nonzero area)."""
    return bool(_ShapelyPolygon(poly).is_valid)


def transform_polygon(poly: np.ndarray, x: float, y: float, theta_deg: float) -> np.ndarray:
    """Rotate by theta about the origin, then translate by (x, y)."""
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    rot = np.array([[c, -s], [s, c]])
    return poly @ rot.T + np.array([x, y])


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd ray-crossing test for many points against one polygon.

    Rays are cast toward +x with a half-open edge rule, so a grid of query
    points tiles the plane consistently: each point lands inside or outside
    deterministically, and translating both polygon and points by an exact
    integer offset preserves every verdict. Points exactly on the boundary
    may resolve to either side (rasterization accuracy).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    x1, y1 = poly[:, 0][None, :], poly[:, 1][None, :]
    x2, y2 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    hits = straddles & (px < x_cross)
    return hits.sum(axis=1) % 2 == 1


def sample_boundary(poly: np.ndarray, per_edge: int) -> np.ndarray:
    """Vertices plus `per_edge` evenly spaced interior points on every edge."""
    if per_edge < 0:
        raise ValueError("per_edge must be >= 0")
    pts = [poly]
    if per_edge > 0:
        nxt = np.roll(poly, -1, axis=0)
        fractions = (np.arange(1, per_edge + 1) / (per_edge + 1))[:, None, None]
        interp = poly[None] + fractions * (nxt - poly)[None]
        pts.append(interp.reshape(-1, 2))
    return np.concatenate(pts, axis=0)


def dilate_polygon(poly: np.ndarray, radius: float, segments_per_arc: int = 8) -> np.ndarray:
    """Minkowski sum with a disc of `radius`, arcs polygonized.

    `segments_per_arc` counts segments per quarter circle (8 gives 32 per
    full turn). Returns the outer contour, counter-clockwise.
    """
    if radius <= 0:
        raise ValueError("dilation radius must be positive")
    grown = _ShapelyPolygon(poly).buffer(radius, quad_segs=segments_per_arc)
    ring = np.asarray(grown.exterior.coords)[:-1]
    return ensure_ccw(ring)


def boundary_gap(inner: np.ndarray, outer: np.ndarray) -> float:
    """Minimal distance between the two polygon boundaries."""
    a = _ShapelyPolygon(inner).exterior
    b = _ShapelyPolygon(outer).exterior
    return float(a.distance(b))


def polygon_contains_polygon(outer: np.ndarray, inner: np.ndarray) -> bool:
    """Exact containment test (used as an independent reference path)."""
    return bool(_ShapelyPolygon(outer).contains(_ShapelyPolygon(inner)))


def rasterize_polygon(poly: np.ndarray, height: int, width: int) -> np.ndarray:
    """Boolean (height, width) mask of pixels whose integer-center lies inside.

    Pixel (row r, col c) has its center at coordinates (c, r); the polygon
    must already be expressed in pixel units.
    """
    mask = np.zeros((height, width), dtype=bool)
    c0 = max(int(math.floor(poly[:, 0].min())), 0)
    c1 = min(int(math.ceil(poly[:, 0].max())), width - 1)
    r0 = max(int(math.floor(poly[:, 1].min())), 0)
    r1 = min(int(math.ceil(poly[:, 1].max())), height - 1)
    if c0 > c1 or r0 > r1:
        return mask
    cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
    pts = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(float)
    inside = points_in_polygon(pts, poly).reshape(rows.shape)
    mask[r0 : r1 + 1, c0 : c1 + 1] = inside
    return mask
