import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import Point, Polygon as ShapelyPolygon

from defectmet.errors import DegenerateGeometryError
from defectmet.geometry import (
    defect_geometry,
    geometry_from_polygon,
    iou_matrix,
    is_self_intersecting,
    polygon_area,
    polygon_iou,
    polygon_perimeter,
    rasterize,
)
from defectmet.records import DefectClass

from conftest import inst, make_image, random_convex, regular_polygon, square

SQ = square(0, 0, 10)


@pytest.mark.parametrize(
    "poly, area",
    [(SQ, 100.0), (((0, 0), (4, 0), (0, 3)), 6.0), (SQ[::-1], 100.0)],
)
def test_polygon_area_examples(poly, area):
    assert polygon_area(poly) == area


def test_area_rejects_degenerate():
    with pytest.raises(DegenerateGeometryError):
        polygon_area([(0, 0), (1, 1), (0, 0)])


def test_area_matches_shapely_on_random_polygons():
    # exact clipping library as an independent oracle for the shoelace sum
    rng = random.Random(0)
    for _ in range(200):
        p = random_convex(rng, rng.uniform(0, 500), rng.uniform(0, 500), 2, 60)
        assert polygon_area(p) == pytest.approx(ShapelyPolygon(p).area, rel=1e-12)
        assert polygon_perimeter(p) == pytest.approx(ShapelyPolygon(p).length, rel=1e-12)


def test_size_of_pi_area_is_two():
    # unit circle area pi nm^2 -> equivalent diameter 2 nm; use a square of that area
    side = math.sqrt(math.pi)
    g = geometry_from_polygon(square(0, 0, side), 1.0)
    assert g.size_nm == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("side, scale", [(1, 1.0), (10, 0.478516), (37.5, 2.0)])
def test_square_heywood(side, scale):
    g = geometry_from_polygon(square(3, 4, side), scale)
    assert g.heywood == pytest.approx(2 / math.sqrt(math.pi), abs=1e-12)


def test_circle_heywood_against_inscribed_polygon_formula():
    n, r = 360, 50.0
    g = geometry_from_polygon(regular_polygon(60, 60, r, n), 1.0)
    # perimeter 2 n r sin(pi/n); area (n/2) r^2 sin(2 pi/n)
    expected = 2 * n * r * math.sin(math.pi / n) / (2 * math.sqrt(math.pi * 0.5 * n * r * r * math.sin(2 * math.pi / n)))
    assert g.heywood == pytest.approx(expected, rel=1e-12)
    assert abs(g.heywood - 1.0) < 1e-4


def test_heywood_decreases_towards_one():
    hs = [geometry_from_polygon(regular_polygon(0, 0, 20, n), 1.0).heywood for n in (8, 32, 128)]
    assert hs[0] > hs[1] > hs[2] >= 1 - 1e-9


def test_defect_geometry_uses_image_scale():
    im = make_image(px_to_nm=0.5)
    g = defect_geometry(inst(DefectClass.BLACK_DOT, square(0, 0, 10)), im)
    assert g.area_px2 == 100 and g.area_nm2 == 25 and g.perimeter_nm == 20


def test_translation_invariance_of_shape_and_size():
    p = random_convex(random.Random(4), 30, 30, 5, 20)
    q = tuple((x + 123.25, y + 77.5) for x, y in p)
    a, b = geometry_from_polygon(p, 0.3), geometry_from_polygon(q, 0.3)
    assert a.size_nm == pytest.approx(b.size_nm, rel=1e-12)
    assert a.heywood == pytest.approx(b.heywood, rel=1e-12)


# ---------------------------------------------------------------- IoU


def test_iou_examples():
    assert polygon_iou(SQ, SQ) == 1.0
    assert polygon_iou(SQ, square(20, 20, 5)) == 0.0
    assert polygon_iou(SQ, square(5, 0, 10)) == pytest.approx(1 / 3, abs=1e-12)


def _brute_raster(poly):
    """Pixel-centre membership by point-in-polygon on every pixel (independent of the scanline fill)."""
    sp = ShapelyPolygon(poly)
    x0, y0, x1, y1 = (int(math.floor(v)) if i < 2 else int(math.ceil(v)) for i, v in enumerate(sp.bounds))
    cells = set()
    for yy in range(y0, y1):
        for xx in range(x0, x1):
            if sp.contains(Point(xx + 0.5, yy + 0.5)):
                cells.add((xx, yy))
    return cells


def test_raster_matches_brute_force_pixel_centres():
    rng = random.Random(1)
    for _ in range(40):
        p = random_convex(rng, rng.uniform(10, 40), rng.uniform(10, 40), 2, 12)
        r = rasterize(p)
        got = {(r.x0 + c, r.y0 + rr) for rr, c in zip(*np.nonzero(r.mask))}
        assert got == _brute_raster(p)


def test_raster_iou_close_to_exact_iou_for_large_polygons():
    rng = random.Random(2)
    for _ in range(50):
        a = random_convex(rng, 100, 100, 30, 60)
        b = random_convex(rng, rng.uniform(80, 120), rng.uniform(80, 120), 30, 60)
        sa, sb = ShapelyPolygon(a), ShapelyPolygon(b)
        exact = sa.intersection(sb).area / sa.union(sb).area
        assert polygon_iou(a, b) == pytest.approx(exact, abs=0.02)


def test_iou_symmetric_and_matrix_consistent():
    rng = random.Random(5)
    ts = [random_convex(rng, rng.uniform(0, 60), rng.uniform(0, 60), 3, 15) for _ in range(6)]
    ps = [random_convex(rng, rng.uniform(0, 60), rng.uniform(0, 60), 3, 15) for _ in range(5)]
    m = iou_matrix(ts, ps)
    for i, t in enumerate(ts):
        for j, p in enumerate(ps):
            assert m[i, j] == polygon_iou(t, p) == polygon_iou(p, t)


def test_scale_invariance_of_iou():
    rng = random.Random(6)
    for _ in range(30):
        a = random_convex(rng, 40, 40, 8, 20)
        b = random_convex(rng, rng.uniform(30, 50), rng.uniform(30, 50), 8, 20)
        if polygon_area(a) < 100 or polygon_area(b) < 100:
            continue
        lam = rng.uniform(1.5, 4.0)
        sa = [(x * lam, y * lam) for x, y in a]
        sb = [(x * lam, y * lam) for x, y in b]
        assert abs(polygon_iou(a, b) - polygon_iou(sa, sb)) <= 0.01 + 0.05 * (polygon_area(a) < 400)


coord = st.floats(min_value=0, max_value=200, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_iou_bounds_random_pairs(seed):
    rng = random.Random(seed)
    a = random_convex(rng, rng.uniform(0, 50), rng.uniform(0, 50), 1, 20)
    b = random_convex(rng, rng.uniform(0, 50), rng.uniform(0, 50), 1, 20)
    v = polygon_iou(a, b)
    assert 0.0 <= v <= 1.0


def test_iou_bounds_ten_thousand_pairs():
    rng = random.Random(99)
    polys = [random_convex(rng, rng.uniform(0, 80), rng.uniform(0, 80), 1, 20) for _ in range(200)]
    m = iou_matrix(polys[:100], polys[100:])
    assert m.shape == (100, 100)
    assert float(m.min()) >= 0.0 and float(m.max()) <= 1.0


# ---------------------------------------------------------------- self intersection


@pytest.mark.parametrize(
    "poly, expected",
    [
        (SQ, False),
        (((0, 0), (10, 10), (10, 0), (0, 10)), True),  # bow tie
        (((0, 0), (5, 0), (10, 0), (10, 10)), False),  # collinear run forward
        (((0, 0), (10, 0), (5, 0), (5, 5)), True),  # fold back
        (((0, 0), (4, 0), (4, 4), (2, 0), (0, 4)), True),  # touches own edge
    ],
)
def test_self_intersection(poly, expected):
    assert is_self_intersecting(poly) is expected


def test_self_intersection_agrees_with_shapely_validity():
    rng = random.Random(8)
    for _ in range(300):
        pts = [(rng.randint(0, 10), rng.randint(0, 10)) for _ in range(rng.randint(4, 7))]
        clean = []
        for p in pts:
            if not clean or clean[-1] != p:
                clean.append(p)
        if len(clean) > 1 and clean[-1] == clean[0]:
            clean.pop()
        if len(set(clean)) != len(clean) or len(clean) < 4:
            continue
        sp = ShapelyPolygon(clean)
        if sp.area == 0:
            continue
        # shapely calls a ring simple when no edges cross or touch except at neighbours
        assert is_self_intersecting(clean) == (not sp.exterior.is_simple), clean
