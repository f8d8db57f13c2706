import json
import math

import pytest

from defectmet.errors import ParseError, RangeError
from defectmet.matching import dataset_type_scores, find_scores, match_dataset
from defectmet.records import CLASSES, DefectClass
from defectmet.synthetic import PerturbationSpec, perturb

from conftest import grid_dataset
from oracles import binomial_interval_99

B, L1, L0 = DefectClass.BLACK_DOT, DefectClass.LOOP_111, DefectClass.LOOP_100


@pytest.fixture(scope="module")
def big_dataset():
    # 12 images x 900 defects = 10 800 truths
    return grid_dataset(12, 900, seed=21, size=512)


def test_spec_validation():
    with pytest.raises(RangeError):
        PerturbationSpec.uniform_drop(1.5)
    with pytest.raises(RangeError):
        PerturbationSpec(spurious_rate=-1)
    with pytest.raises(RangeError):
        PerturbationSpec(jitter_px=-0.1)
    with pytest.raises(RangeError):
        PerturbationSpec(confusion=((0.5, 0.4, 0.0), (0, 1, 0), (0, 0, 1)))
    with pytest.raises(RangeError):
        PerturbationSpec(confusion=((1, 0), (0, 1)))
    with pytest.raises(ParseError):
        PerturbationSpec.from_dict({"dropout": 0.1})
    spec = PerturbationSpec.from_json(json.dumps({"drop_prob": {"bdot": 0.3}, "seed": 4}).encode())
    assert spec.drop_prob[B] == 0.3 and spec.drop_prob[L1] == 0.0 and spec.seed == 4
    assert PerturbationSpec.from_dict(spec.to_dict()) == spec


def test_zero_spec_is_identity():
    ds = grid_dataset(3, 16, seed=1)
    out, rec = perturb(ds, PerturbationSpec())
    for n in ds.image_names:
        assert [(p.defect_class, p.polygon) for p in out.preds_for(n)] == [
            (t.defect_class, t.polygon) for t in ds.truths_for(n)
        ]
    reports = match_dataset(out, 0.3)
    assert find_scores(reports.values()).f1 == 1.0 == rec.expected_find_f1
    assert all(iou == 1.0 for r in reports.values() for _, _, iou in r.pairs)


def test_drop_all_gives_empty_predictions():
    ds = grid_dataset(3, 16, seed=2)
    out, rec = perturb(ds, PerturbationSpec.uniform_drop(1.0))
    assert all(out.preds_for(n) == () for n in ds.image_names)
    assert rec.expected_find_f1 == 0.0


def test_same_seed_same_output_other_seed_differs():
    ds = grid_dataset(2, 25, seed=3)
    spec = PerturbationSpec.uniform_drop(0.3, spurious_rate=2.0, jitter_px=1.0, seed=9)
    a, _ = perturb(ds, spec)
    b, _ = perturb(ds, spec)
    assert a.predictions == b.predictions
    c, _ = perturb(ds, PerturbationSpec.uniform_drop(0.3, spurious_rate=2.0, jitter_px=1.0, seed=10))
    assert c.predictions != a.predictions


def test_recall_within_binomial_interval():
    ds = grid_dataset(4, 250, seed=4)  # 1000 truths
    out, _ = perturb(ds, PerturbationSpec.uniform_drop(0.2, seed=5))
    s = find_scores(match_dataset(out, 0.3).values())
    assert s.tp + s.fn == 1000
    lo, hi = binomial_interval_99(1000, 0.8)
    assert lo <= s.tp <= hi


def test_recall_converges(big_dataset):
    out, rec = perturb(big_dataset, PerturbationSpec.uniform_drop(0.3, seed=6))
    s = find_scores(match_dataset(out, 0.3).values())
    n = s.tp + s.fn
    assert n >= 10_000
    sigma = math.sqrt(0.7 * 0.3 / n)
    assert abs(s.recall - 0.7) <= 3 * sigma
    assert s.fp == 0


def test_per_class_drop(big_dataset):
    spec = PerturbationSpec(drop_prob={B: 0.5, L1: 0.0, L0: 1.0}, seed=7)
    out, rec = perturb(big_dataset, spec)
    counts = {c: sum(1 for ps in out.predictions.values() for p in ps if p.defect_class == c) for c in CLASSES}
    assert counts[L0] == 0 and counts[L1] == rec.n_truths[L1]
    n = rec.n_truths[B]
    assert abs(counts[B] / n - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_confusion_frequencies_converge(big_dataset):
    conf = ((0.7, 0.2, 0.1), (0.1, 0.8, 0.1), (0.05, 0.15, 0.8))
    out, rec = perturb(big_dataset, PerturbationSpec(confusion=conf, seed=8))
    reports = match_dataset(out, 0.3)
    tally = [[0] * 3 for _ in range(3)]
    for name, r in reports.items():
        ts, ps = out.truths_for(name), out.preds_for(name)
        for t, p, _ in r.pairs:
            tally[CLASSES.index(ts[t].defect_class)][CLASSES.index(ps[p].defect_class)] += 1
    assert sum(map(sum, tally)) == sum(rec.n_truths.values()) >= 10_000
    for i in range(3):
        row = sum(tally[i])
        for j in range(3):
            assert abs(tally[i][j] / row - conf[i][j]) < 0.02
    # type scores see the flips while find scores do not
    assert find_scores(reports.values()).f1 == 1.0
    assert dataset_type_scores(out, reports).macro_f1 < 1.0


def test_spurious_instances_are_false_positives():
    ds = grid_dataset(5, 9, seed=9, size=512)
    out, rec = perturb(ds, PerturbationSpec(spurious_rate=6.0, seed=10))
    reports = match_dataset(out, 0.01)
    assert rec.realised_spurious > 0
    s = find_scores(reports.values())
    assert s.fp == rec.realised_spurious and s.fn == 0
    for name, r in reports.items():
        spurious = {i for i, p in enumerate(out.preds_for(name)) if p.score == 0.5}
        assert set(r.unmatched_preds) == spurious
    assert rec.expected_spurious == pytest.approx(30.0)


def test_default_jitter_keeps_matches():
    ds = grid_dataset(4, 36, seed=11)
    out, _ = perturb(ds, PerturbationSpec(jitter_px=1.0, seed=12))
    s = find_scores(match_dataset(out, 0.3).values())
    assert s.fn == 0 and s.fp == 0
