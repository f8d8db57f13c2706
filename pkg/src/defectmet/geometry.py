"""Polygon kernels: area, perimeter, equivalent-circle size, Heywood circularity, IoU.

Polygons are sequences of ``(x, y)`` vertices in pixel coordinates.  IoU is
evaluated on the native pixel grid: a pixel belongs to a polygon when its
centre ``(i + 0.5, j + 0.5)`` is inside under the even-odd rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometryError
from .records import DefectInstance, ImageRecord


def as_vertices(polygon) -> np.ndarray:
    arr = np.asarray(polygon, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DegenerateGeometryError(f"polygon must be a sequence of (x, y) pairs, got shape {arr.shape}")
    return arr


def drop_repeated_vertices(polygon) -> list[tuple[float, float]]:
    """Remove consecutive duplicates, including a closing vertex equal to the first."""
    out: list[tuple[float, float]] = []
    for x, y in polygon:
        p = (float(x), float(y))
        if not out or out[-1] != p:
            out.append(p)
    while len(out) > 1 and out[-1] == out[0]:
        out.pop()
    return out


def _checked(polygon) -> np.ndarray:
    v = as_vertices(polygon)
    if len({(x, y) for x, y in v.tolist()}) < 3:
        raise DegenerateGeometryError(f"polygon needs at least 3 distinct vertices, got {len(v)}")
    return v


def polygon_area(polygon) -> float:
    """Shoelace area in px², independent of vertex orientation."""
    v = _checked(polygon)
    x, y = v[:, 0], v[:, 1]
    # centre on the first vertex: large absolute coordinates otherwise cancel badly
    x = x - x[0]
    y = y - y[0]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))) / 2.0


def polygon_perimeter(polygon) -> float:
    """Length of the closed vertex chain in px."""
    v = _checked(polygon)
    d = np.diff(np.vstack([v, v[:1]]), axis=0)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def is_self_intersecting(polygon) -> bool:
    """True when any two edges cross, touch, or fold back over each other.

    Adjacent edges may share their common vertex; anything else counts.
    Collinear runs that continue forward (A, B, C on a line, B between) are fine.
    """
    v = as_vertices(polygon)
    n = len(v)
    if n < 4:
        if n == 3:
            a, b = v[1] - v[0], v[2] - v[1]
            return bool(a[0] * b[1] - a[1] * b[0] == 0 and np.dot(a, b) < 0)
        return False
    p1 = v
    p2 = np.roll(v, -1, axis=0)

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    A1, A2 = p1[:, None, :], p2[:, None, :]
    B1, B2 = p1[None, :, :], p2[None, :, :]
    o1 = orient(A1, A2, B1)
    o2 = orient(A1, A2, B2)
    o3 = orient(B1, B2, A1)
    o4 = orient(B1, B2, A2)
    proper = (np.sign(o1) * np.sign(o2) < 0) & (np.sign(o3) * np.sign(o4) < 0)

    def on_segment(a, b, c):
        # c collinear with a-b assumed; inside the closed bounding box
        return (
            (np.minimum(a[..., 0], b[..., 0]) <= c[..., 0])
            & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
            & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1])
            & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]))
        )

    touching = (
        ((o1 == 0) & on_segment(A1, A2, B1))
        | ((o2 == 0) & on_segment(A1, A2, B2))
        | ((o3 == 0) & on_segment(B1, B2, A1))
        | ((o4 == 0) & on_segment(B1, B2, A2))
    )
    hit = proper | touching

    idx = np.arange(n)
    i, j = np.meshgrid(idx, idx, indexing="ij")
    adjacent = (j == (i + 1) % n) | (i == (j + 1) % n)
    upper = j > i
    if np.any(hit & upper & ~adjacent):
        return True

    # adjacent edges: only a fold-back (collinear, opposite direction) overlaps
    d = p2 - p1
    nxt = np.roll(d, -1, axis=0)
    cross = d[:, 0] * nxt[:, 1] - d[:, 1] * nxt[:, 0]
    dot = (d * nxt).sum(axis=1)
    return bool(np.any((cross == 0) & (dot < 0)))


@dataclass(frozen=True)
class DefectGeometry:
    area_px2: float
    area_nm2: float
    size_nm: float
    perimeter_nm: float
    heywood: float


def geometry_from_polygon(polygon, px_to_nm: float) -> DefectGeometry:
    if not px_to_nm > 0:
        raise DegenerateGeometryError(f"px_to_nm must be positive, got {px_to_nm}")
    area_px2 = polygon_area(polygon)
    if area_px2 <= 0:
        raise DegenerateGeometryError("polygon has zero area")
    area_nm2 = area_px2 * px_to_nm * px_to_nm
    perimeter_nm = polygon_perimeter(polygon) * px_to_nm
    return DefectGeometry(
        area_px2=area_px2,
        area_nm2=area_nm2,
        size_nm=2.0 * math.sqrt(area_nm2 / math.pi),
        perimeter_nm=perimeter_nm,
        heywood=perimeter_nm / (2.0 * math.sqrt(math.pi * area_nm2)),
    )


def defect_geometry(instance: DefectInstance, image: ImageRecord) -> DefectGeometry:
    """Area, equivalent-circle diameter, perimeter and Heywood factor of one defect."""
    return geometry_from_polygon(instance.polygon, image.px_to_nm)


@dataclass(frozen=True)
class Raster:
    """Pixel-centre mask of a polygon over its own bounding box.

    ``mask[r, c]`` covers pixel ``(x0 + c, y0 + r)``.
    """

    x0: int
    y0: int
    mask: np.ndarray

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def x1(self) -> int:
        return self.x0 + self.mask.shape[1]

    @property
    def y1(self) -> int:
        return self.y0 + self.mask.shape[0]


def rasterize(polygon) -> Raster:
    v = _checked(polygon)
    x0 = int(math.floor(v[:, 0].min()))
    y0 = int(math.floor(v[:, 1].min()))
    x1 = int(math.ceil(v[:, 0].max()))
    y1 = int(math.ceil(v[:, 1].max()))
    w, h = max(x1 - x0, 0), max(y1 - y0, 0)
    mask = np.zeros((h, w), dtype=bool)
    if w == 0 or h == 0:
        return Raster(x0, y0, mask)
    px = x0 + 0.5 + np.arange(w)
    py = y0 + 0.5 + np.arange(h)
    xa, ya = v[:, 0], v[:, 1]
    xb, yb = np.roll(xa, -1), np.roll(ya, -1)
    for k in range(len(v)):
        spans = (ya[k] > py) != (yb[k] > py)
        if not spans.any():
            continue
        rows = np.nonzero(spans)[0]
        yr = py[rows]
        xint = xa[k] + (yr - ya[k]) * (xb[k] - xa[k]) / (yb[k] - ya[k])
        mask[rows] ^= px[None, :] < xint[:, None]
    return Raster(x0, y0, mask)


def raster_intersection(a: Raster, b: Raster) -> int:
    x0, x1 = max(a.x0, b.x0), min(a.x1, b.x1)
    y0, y1 = max(a.y0, b.y0), min(a.y1, b.y1)
    if x0 >= x1 or y0 >= y1:
        return 0
    sa = a.mask[y0 - a.y0 : y1 - a.y0, x0 - a.x0 : x1 - a.x0]
    sb = b.mask[y0 - b.y0 : y1 - b.y0, x0 - b.x0 : x1 - b.x0]
    return int(np.count_nonzero(sa & sb))


def raster_iou(a: Raster, b: Raster) -> float:
    """IoU of two rasters; 0.0 when both are empty."""
    inter = raster_intersection(a, b)
    union = a.count + b.count - inter
    return inter / union if union else 0.0


def polygon_iou(a, b) -> float:
    """Intersection over union of two polygons on the shared pixel grid.

    Symmetric, 1.0 for identical polygons and 0.0 for disjoint ones.  Polygons
    too small to cover a single pixel centre only score 1.0 against an
    identical vertex list.
    """
    ra, rb = rasterize(a), rasterize(b)
    if ra.count + rb.count == 0:
        return 1.0 if _same_vertices(a, b) else 0.0
    return raster_iou(ra, rb)


def _same_vertices(a, b) -> bool:
    return as_vertices(a).tolist() == as_vertices(b).tolist()


def iou_matrix(truth_polys: Sequence, pred_polys: Sequence) -> np.ndarray:
    """Dense IoU matrix, rows = truths, columns = predictions.

    Each polygon is rasterised once; pairs with disjoint bounding boxes are
    skipped.
    """
    out = np.zeros((len(truth_polys), len(pred_polys)))
    if not len(truth_polys) or not len(pred_polys):
        return out
    rt = [rasterize(p) for p in truth_polys]
    rp = [rasterize(p) for p in pred_polys]
    tb = np.array([[r.x0, r.y0, r.x1, r.y1] for r in rt])
    pb = np.array([[r.x0, r.y0, r.x1, r.y1] for r in rp])
    overlap = (
        (tb[:, None, 0] < pb[None, :, 2])
        & (pb[None, :, 0] < tb[:, None, 2])
        & (tb[:, None, 1] < pb[None, :, 3])
        & (pb[None, :, 1] < tb[:, None, 3])
    )
    for i, j in zip(*np.nonzero(overlap)):
        a, b = rt[i], rp[j]
        if a.count + b.count == 0:
            out[i, j] = 1.0 if _same_vertices(truth_polys[i], pred_polys[j]) else 0.0
        else:
            out[i, j] = raster_iou(a, b)
    return out
