"""Peg/hole cross-section library.

Four "seen" cross-sections are used for training and ten "unseen" ones for
evaluation, spanning simple to complex, concave to convex, and sharp to
rounded corners. Every peg polygon is centred on its area centroid so the
pose origin coincides with the visual centre for all shapes, and the hole
polygon is the peg dilated by the pair's clearance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import geometry

SHAPE_MANIFEST_VERSION = 1

DEFAULT_CLEARANCE_MM = 1.0

SEEN_SHAPE_IDS = ("square", "circle16", "triangle", "hexagon")
UNSEEN_SHAPE_IDS = (
    "cross",
    "ell",
    "tee",
    "yoke",
    "star5",
    "rounded_square",
    "semicircle",
    "trapezoid",
    "aitch",
    "notched_square",
)


@dataclass(frozen=True)
class ShapeSpec:
    """A peg cross-section, its dilated hole opening, and their clearance."""

    id: str
    peg_polygon: np.ndarray
    hole_polygon: np.ndarray
    clearance: float
    family: str  # "seen" or "unseen"

    def __post_init__(self):
        if self.clearance <= 0:
            raise ValueError("clearance must be positive")
        if self.family not in ("seen", "unseen"):
            raise ValueError(f"unknown family {self.family!r}")

    def with_clearance(self, clearance: float) -> "ShapeSpec":
        """Same peg with the hole re-dilated to a new clearance."""
        return replace(
            self,
            clearance=clearance,
            hole_polygon=geometry.dilate_polygon(self.peg_polygon, clearance),
        )

    @property
    def max_extent(self) -> float:
        """Largest vertex distance from the pose origin, in mm."""
        return float(np.linalg.norm(self.peg_polygon, axis=1).max())


def _centred(vertices) -> np.ndarray:
    poly = geometry.ensure_ccw(geometry.as_polygon(vertices))
    return poly - geometry.centroid(poly)


def _regular_polygon(n: int, circumradius: float, phase_deg: float = 0.0) -> np.ndarray:
    ang = np.radians(phase_deg) + 2 * np.pi * np.arange(n) / n
    return np.stack([circumradius * np.cos(ang), circumradius * np.sin(ang)], axis=1)


def _rounded_rect(w: float, h: float, r: float, seg: int = 8) -> np.ndarray:
    """Axis-aligned rectangle w x h with corner radius r."""
    hw, hh = w / 2 - r, h / 2 - r
    corners = [(hw, hh, 0), (-hw, hh, 90), (-hw, -hh, 180), (hw, -hh, 270)]
    pts = []
    for cx, cy, start in corners:
        for k in range(seg + 1):
            a = math.radians(start + 90 * k / seg)
            pts.append((cx + r * math.cos(a), cy + r * math.sin(a)))
    return np.array(pts)


def _peg_vertices(shape_id: str) -> np.ndarray:
    if shape_id == "square":
        return np.array([(10.0, -10.0), (10.0, 10.0), (-10.0, 10.0), (-10.0, -10.0)])
    if shape_id == "circle16":
        return _regular_polygon(16, 10.0)
    if shape_id == "triangle":
        s = 22.0
        h = s * math.sqrt(3) / 2
        return np.array([(-s / 2, 0.0), (s / 2, 0.0), (0.0, h)])
    if shape_id == "hexagon":
        return _regular_polygon(6, 11.0)
    if shape_id == "cross":
        a, b = 4.0, 12.0  # half arm width, half arm length
        return np.array(
            [
                (a, a), (a, b), (-a, b), (-a, a), (-b, a), (-b, -a),
                (-a, -a), (-a, -b), (a, -b), (a, -a), (b, -a), (b, a),
            ]
        )
    if shape_id == "ell":
        return np.array(
            [(0.0, 0.0), (20.0, 0.0), (20.0, 8.0), (8.0, 8.0), (8.0, 20.0), (0.0, 20.0)]
        )
    if shape_id == "tee":
        return np.array(
            [
                (-12.0, 8.0), (-12.0, 16.0), (12.0, 16.0), (12.0, 8.0),
                (4.0, 8.0), (4.0, -8.0), (-4.0, -8.0), (-4.0, 8.0),
            ]
        )
    if shape_id == "yoke":
        # U channel: outer 20 x 18, inner slot 8 x 12 open at the top
        return np.array(
            [
                (-10.0, -9.0), (10.0, -9.0), (10.0, 9.0), (4.0, 9.0),
                (4.0, -3.0), (-4.0, -3.0), (-4.0, 9.0), (-10.0, 9.0),
            ]
        )
    if shape_id == "star5":
        outer, inner = 12.0, 5.5
        pts = []
        for k in range(5):
            a_out = math.radians(90 + 72 * k)
            a_in = math.radians(90 + 72 * k + 36)
            pts.append((outer * math.cos(a_out), outer * math.sin(a_out)))
            pts.append((inner * math.cos(a_in), inner * math.sin(a_in)))
        return np.array(pts)
    if shape_id == "rounded_square":
        return _rounded_rect(20.0, 20.0, 4.0)
    if shape_id == "semicircle":
        r = 11.0
        arc = [
            (r * math.cos(math.radians(a)), r * math.sin(math.radians(a)))
            for a in np.linspace(0.0, 180.0, 17)
        ]
        return np.array(arc)
    if shape_id == "trapezoid":
        return np.array([(-12.0, -8.0), (12.0, -8.0), (7.0, 8.0), (-7.0, 8.0)])
    if shape_id == "aitch":
        # H: two 6-wide uprights spanning 20 tall, 6-tall crossbar
        return np.array(
            [
                (-9.0, -10.0), (-3.0, -10.0), (-3.0, -3.0), (3.0, -3.0),
                (3.0, -10.0), (9.0, -10.0), (9.0, 10.0), (3.0, 10.0),
                (3.0, 3.0), (-3.0, 3.0), (-3.0, 10.0), (-9.0, 10.0),
            ]
        )
    if shape_id == "notched_square":
        return np.array(
            [
                (10.0, -10.0), (10.0, 10.0), (3.0, 10.0), (3.0, 5.0),
                (-3.0, 5.0), (-3.0, 10.0), (-10.0, 10.0), (-10.0, -10.0),
            ]
        )
    raise KeyError(f"unknown shape id {shape_id!r}")


def make_shape(shape_id: str, clearance: float = DEFAULT_CLEARANCE_MM) -> ShapeSpec:
    family = "seen" if shape_id in SEEN_SHAPE_IDS else "unseen"
    if family == "unseen" and shape_id not in UNSEEN_SHAPE_IDS:
        raise KeyError(f"unknown shape id {shape_id!r}")
    peg = _centred(_peg_vertices(shape_id))
    hole = geometry.dilate_polygon(peg, clearance)
    return ShapeSpec(id=shape_id, peg_polygon=peg, hole_polygon=hole, clearance=clearance, family=family)


def shape_library(clearance: float = DEFAULT_CLEARANCE_MM) -> dict[str, ShapeSpec]:
    """All fourteen shapes keyed by id."""
    return {sid: make_shape(sid, clearance) for sid in SEEN_SHAPE_IDS + UNSEEN_SHAPE_IDS}


def seen_shapes(clearance: float = DEFAULT_CLEARANCE_MM) -> list[ShapeSpec]:
    return [make_shape(sid, clearance) for sid in SEEN_SHAPE_IDS]


def unseen_shapes(clearance: float = DEFAULT_CLEARANCE_MM) -> list[ShapeSpec]:
    return [make_shape(sid, clearance) for sid in UNSEEN_SHAPE_IDS]


def save_library(shapes: list[ShapeSpec] | dict[str, ShapeSpec], path: str | Path) -> None:
    """Write the shape manifest (versioned JSON, vertices in mm)."""
    if isinstance(shapes, dict):
        shapes = list(shapes.values())
    doc = {
        "format_version": SHAPE_MANIFEST_VERSION,
        "shapes": [
            {
                "id": s.id,
                "family": s.family,
                "clearance_mm": s.clearance,
                "peg_polygon_mm": s.peg_polygon.tolist(),
                "hole_polygon_mm": s.hole_polygon.tolist(),
            }
            for s in shapes
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def load_library(path: str | Path) -> dict[str, ShapeSpec]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != SHAPE_MANIFEST_VERSION:
        raise ValueError(f"unsupported shape manifest version {doc.get('format_version')!r}")
    out = {}
    for entry in doc["shapes"]:
        out[entry["id"]] = ShapeSpec(
            id=entry["id"],
            peg_polygon=np.asarray(entry["peg_polygon_mm"], dtype=float),
            hole_polygon=np.asarray(entry["hole_polygon_mm"], dtype=float),
            clearance=float(entry["clearance_mm"]),
            family=entry["family"],
        )
    return out
