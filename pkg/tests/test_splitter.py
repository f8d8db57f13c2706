import csv
import io

import pytest
from hypothesis import given, settings, strategies as st

from defectmet.errors import EmptySideError, MissingResultError, RangeError, UnknownTagError
from defectmet.records import CLASSES, Dataset, DefectClass
from defectmet.splitter import (
    LEARNING_CURVE_COLUMNS,
    SplitManifest,
    group_split,
    group_values,
    learning_curve_csv,
    learning_curve_rows,
    load_manifest,
    percent_splits,
    percent_test_size,
    random_split,
)

from conftest import inst, make_image, square

B, L1, L0 = DefectClass.BLACK_DOT, DefectClass.LOOP_111, DefectClass.LOOP_100


def registry(n, tags=None):
    tags = tags or (lambda i: {})
    images = tuple(make_image(f"im{i:03d}", 256, 256, 0.5, **tags(i)) for i in range(n))
    truths = {
        im.name: tuple(inst(CLASSES[(i + k) % 3], square(12 * k, 0, 8), im.name) for k in range(i % 5))
        for i, im in enumerate(images)
    }
    return Dataset(images, truths)


def test_random_split_sizes_and_determinism():
    ds = registry(107)
    m = random_split(ds, 21, seed=42)
    assert (len(m.train_images), len(m.test_images)) == (86, 21)
    assert m == random_split(ds, 21, seed=42)
    assert m.test_images != random_split(ds, 21, seed=43).test_images
    assert set(m.train_images) | set(m.test_images) == set(ds.image_names)
    assert not set(m.train_images) & set(m.test_images)
    for bad in (0, 107, -1):
        with pytest.raises(RangeError):
            random_split(ds, bad, seed=1)


def _splitmix_stream(seed):
    # plain-integer SplitMix64 with the published constants
    mask = (1 << 64) - 1
    state = seed & mask
    while True:
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        yield z ^ (z >> 31)


def _reference_draw(names, k, seed):
    stream = _splitmix_stream(seed)
    pool = sorted(names)
    for i in range(k):
        m = len(pool) - i
        limit = (1 << 64) - ((1 << 64) % m)
        x = next(stream)
        while x >= limit:
            x = next(stream)
        j = i + x % m
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:k])


@pytest.mark.parametrize("seed", [0, 1, 2**63 + 5])
def test_random_split_membership_reproducible_from_generator(seed):
    ds = registry(40)
    m = random_split(ds, 9, seed=seed)
    assert sorted(m.test_images) == _reference_draw(ds.image_names, 9, seed)


@pytest.mark.parametrize(
    "fraction, sizes",
    [(0.10, (164, 18)), (0.25, (137, 45)), (0.50, (91, 91)), (0.75, (46, 136)), (0.90, (18, 164))],
)
def test_percent_split_sizes_182_images(fraction, sizes):
    assert (182 - percent_test_size(182, fraction), percent_test_size(182, fraction)) == sizes
    runs = percent_splits(registry(182), fraction, 3, seed=7)
    assert [(len(m.train_images), len(m.test_images)) for m in runs] == [sizes] * 3
    assert len({m.seed for m in runs}) == 3
    assert len({m.test_images for m in runs}) == 3
    assert [m.method["run"] for m in runs] == [1, 2, 3]


def test_percent_split_errors():
    ds = registry(20)
    for f in (0.0, 1.0, -0.1):
        with pytest.raises(RangeError):
            percent_splits(ds, f, 1, seed=0)
    with pytest.raises(RangeError):
        percent_splits(ds, 0.5, 0, seed=0)
    with pytest.raises(RangeError):
        percent_splits(registry(3), 0.01, 1, seed=0)


@given(st.integers(2, 400), st.floats(0.01, 0.99))
@settings(max_examples=300, deadline=None)
def test_percent_test_size_is_nearest_integer(n, f):
    t = percent_test_size(n, f)
    assert abs(t - f * n) <= 0.5 + 1e-9


def _dataset2_like():
    # 51 images of alloy X, 9 of Y, 47 of Z; irradiation I1 on 12, I2 on 9, rest I3
    def tags(i):
        alloy = "X" if i < 51 else ("Y" if i < 60 else "Z")
        irr = "I1" if i < 12 else ("I2" if i < 21 else "I3")
        return {"alloy": alloy, "irradiation": irr}

    return registry(107, tags)


def test_group_split_with_train_rule():
    ds = _dataset2_like()
    m = group_split(ds, "alloy", "X", train_rule="Y")
    assert (len(m.train_images), len(m.test_images)) == (9, 51)
    assert m.method == {"kind": "group", "tag_key": "alloy", "held_value": "X", "train_value": "Y"}
    m = group_split(ds, "irradiation", "I2", train_rule="I1")
    assert (len(m.train_images), len(m.test_images)) == (12, 9)
    m = group_split(ds, "alloy", "X")
    assert (len(m.train_images), len(m.test_images)) == (56, 51)
    m = group_split(ds, "alloy", {"X", "Y"})
    assert len(m.test_images) == 60
    m = group_split(ds, "alloy", lambda v: v != "Z")
    assert len(m.test_images) == 60


def test_group_split_errors():
    ds = _dataset2_like()
    with pytest.raises(EmptySideError):
        group_split(ds, "alloy", "W")
    with pytest.raises(EmptySideError):
        group_split(ds, "alloy", {"X", "Y", "Z"})
    with pytest.raises(EmptySideError):
        group_split(ds, "alloy", "X", train_rule="X")
    with pytest.raises(UnknownTagError):
        group_split(ds, "microscope", "M1")
    assert group_values(ds, "alloy") == ["X", "Y", "Z"]


def test_counts_audit_and_round_trip():
    ds = _dataset2_like()
    m = random_split(ds, 20, seed=3)
    for side, names in (("train", m.train_images), ("test", m.test_images)):
        counts = m.train_counts if side == "train" else m.test_counts
        for c in CLASSES:
            assert counts[c] == sum(1 for n in names for t in ds.truths_for(n) if t.defect_class == c)
    back = load_manifest(m.to_json().encode(), ds)
    assert back == m
    d = m.to_dict()
    assert set(d) == {"name", "method", "seed", "train", "test", "counts"}
    d["counts"]["train"]["bdot"] += 1
    with pytest.raises(RangeError):
        SplitManifest.from_dict(d).audit(ds)


def test_learning_curve_rows():
    ds = registry(30)
    a = random_split(ds, 10, seed=1, name="b")
    b = random_split(ds, 20, seed=1, name="a")
    c = random_split(ds, 20, seed=2, name="c")
    res = {n: {"bdot": 0.5, "111": 0.6, "100": 0.7, "overall": 0.77} for n in ("a", "b", "c")}
    rows = learning_curve_rows([a, b, c], res)
    keys = [(r["n_train_defects"], r["manifest"]) for r in rows]
    assert keys == sorted(keys)
    assert rows[0]["kind"] == "random" and rows[0]["f1_overall"] == 0.77
    assert learning_curve_rows([], {}) == []
    with pytest.raises(MissingResultError):
        learning_curve_rows([a, b], {"a": res["a"]})
    with pytest.raises(MissingResultError):
        learning_curve_rows([a, a], {"b": res["b"]})
    with pytest.raises(MissingResultError):
        learning_curve_rows([a], {"b": {"bdot": 1.0}})
    text = learning_curve_csv(rows)
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert tuple(parsed[0]) == LEARNING_CURVE_COLUMNS and len(parsed) == 3


def test_learning_curve_single_manifest_row():
    # one manifest holding all defects of a small set, evaluated at overall F1 0.77
    ds = registry(12)
    m = random_split(ds, 1, seed=0, name="only")
    rows = learning_curve_rows([m], {"only": {"bdot": 0.7, "111": 0.8, "100": 0.8, "overall": 0.77}})
    assert len(rows) == 1
    assert (rows[0]["n_train_defects"], rows[0]["f1_overall"], rows[0]["kind"]) == (m.n_train_defects, 0.77, "random")
