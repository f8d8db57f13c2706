from __future__ import annotations

import math
import random

import pytest

from defectmet.records import CLASSES, Dataset, DefectInstance, ImageRecord


def make_image(name="img", width=1024, height=1024, px_to_nm=0.478516, thickness_nm=100.0, **tags):
    base = {"alloy": "A", "irradiation": "I1", "microscope_sample": "M1"}
    base.update(tags)
    return ImageRecord(name, width, height, px_to_nm, thickness_nm, base)


def square(x, y, s):
    return ((x, y), (x + s, y), (x + s, y + s), (x, y + s))


def regular_polygon(cx, cy, r, n, phase=0.0):
    return tuple(
        (cx + r * math.cos(phase + 2 * math.pi * k / n), cy + r * math.sin(phase + 2 * math.pi * k / n))
        for k in range(n)
    )


def random_convex(rng: random.Random, cx, cy, rmin, rmax, nmin=3, nmax=9):
    """Star-shaped around the centre with sorted angles; convex hull keeps it convex."""
    n = rng.randint(nmin, nmax)
    pts = []
    for _ in range(n):
        a = rng.uniform(0, 2 * math.pi)
        r = rng.uniform(rmin, rmax)
        pts.append((cx + r * math.cos(a), cy + r * math.sin(a)))
    hull = _hull(pts)
    if len(hull) < 3:
        return random_convex(rng, cx, cy, rmin, rmax, nmin, nmax)
    return tuple(hull)


def _hull(points):
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def inst(cls, poly, image="img", score=None):
    return DefectInstance(cls, tuple((float(x), float(y)) for x, y in poly), image, score)


def grid_dataset(n_images=4, per_image=30, seed=0, px_to_nm=0.5, size=512, with_preds=False):
    """Images filled with non-overlapping random convex defects on a grid."""
    rng = random.Random(seed)
    images, truths = [], {}
    cell = size // int(math.ceil(math.sqrt(per_image)))
    for i in range(n_images):
        name = f"img{i:03d}"
        images.append(make_image(name, size, size, px_to_nm, 80.0 + 10 * i, alloy="A" if i % 2 else "B"))
        insts = []
        for k in range(per_image):
            gx, gy = (k % (size // cell)) * cell, (k // (size // cell)) * cell
            r = rng.uniform(4, cell / 2 - 3)
            poly = random_convex(rng, gx + cell / 2, gy + cell / 2, 0.6 * r, r, 5, 12)
            insts.append(inst(CLASSES[rng.randrange(3)], poly, name))
        truths[name] = tuple(insts)
    ds = Dataset(tuple(images), truths)
    if with_preds:
        ds = ds.with_predictions(
            {n: tuple(DefectInstance(t.defect_class, t.polygon, n, 1.0) for t in ts) for n, ts in truths.items()}
        )
    return ds


@pytest.fixture
def small_dataset():
    return grid_dataset(3, 16, seed=1, with_preds=True)


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Call ``acceptance(criterion, status, detail)`` to log one report line."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion, status, detail=""):
        lines.append((criterion, status, detail))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in sorted(lines, key=lambda x: str(x[0])):
        terminalreporter.write_line(f"criterion {criterion}: {status}  {detail}".rstrip())
