"""Turn ground truth into fake predictions with known error rates.

Each truth is dropped with a per-class probability, survivors get a class
resampled from a confusion row and their vertices jittered, and spurious
small polygons are added in truth-free space.  The returned expectation
record states what the metrics should converge to, which makes the
matching/metrology pipeline testable end to end.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import ParseError, RangeError
from .geometry import drop_repeated_vertices, is_self_intersecting, polygon_area
from .records import CLASSES, Dataset, DefectClass, DefectInstance, ImageRecord
from .rng import SplitMix64, derive_seed

IDENTITY = tuple(tuple(1.0 if i == j else 0.0 for j in range(3)) for i in range(3))
SPURIOUS_RADIUS_PX = 4.0
SPURIOUS_SIDES = 8
SPURIOUS_SCORE = 0.5
_PLACEMENT_TRIES = 200
_JITTER_TRIES = 20


@dataclass(frozen=True)
class PerturbationSpec:
    drop_prob: Mapping[DefectClass, float] = field(default_factory=lambda: {c: 0.0 for c in CLASSES})
    spurious_rate: float = 0.0
    # rows/columns in CLASSES order: bdot, 111, 100
    confusion: tuple[tuple[float, ...], ...] = IDENTITY
    jitter_px: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for c in CLASSES:
            p = self.drop_prob.get(c)
            if p is None or not 0.0 <= p <= 1.0:
                raise RangeError(f"drop_prob[{c.value}] must lie in [0, 1], got {p!r}")
        if not (self.spurious_rate >= 0 and math.isfinite(self.spurious_rate)):
            raise RangeError(f"spurious_rate must be >= 0, got {self.spurious_rate}")
        if not (self.jitter_px >= 0 and math.isfinite(self.jitter_px)):
            raise RangeError(f"jitter_px must be >= 0, got {self.jitter_px}")
        if len(self.confusion) != 3 or any(len(r) != 3 for r in self.confusion):
            raise RangeError("confusion must be 3x3")
        for i, row in enumerate(self.confusion):
            if any(not 0.0 <= v <= 1.0 for v in row):
                raise RangeError(f"confusion row {i} has entries outside [0, 1]")
            if abs(math.fsum(row) - 1.0) > 1e-12:
                raise RangeError(f"confusion row {i} sums to {math.fsum(row)}, not 1")

    @classmethod
    def uniform_drop(cls, p: float, **kw) -> "PerturbationSpec":
        return cls(drop_prob={c: p for c in CLASSES}, **kw)

    def to_dict(self) -> dict:
        return {
            "drop_prob": {c.value: self.drop_prob[c] for c in CLASSES},
            "spurious_rate": self.spurious_rate,
            "confusion": [list(r) for r in self.confusion],
            "jitter_px": self.jitter_px,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PerturbationSpec":
        unknown = sorted(set(d) - {"drop_prob", "spurious_rate", "confusion", "jitter_px", "seed"})
        if unknown:
            raise ParseError(f"unknown perturbation field(s): {unknown}")
        drop = d.get("drop_prob", 0.0)
        try:
            if isinstance(drop, Mapping):
                drop_prob = {c: float(drop.get(c.value, 0.0)) for c in CLASSES}
            else:
                drop_prob = {c: float(drop) for c in CLASSES}
            return cls(
                drop_prob=drop_prob,
                spurious_rate=float(d.get("spurious_rate", 0.0)),
                confusion=tuple(tuple(float(v) for v in row) for row in d.get("confusion", IDENTITY)),
                jitter_px=float(d.get("jitter_px", 0.0)),
                seed=int(d.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"malformed perturbation spec: {exc}") from exc

    @classmethod
    def from_json(cls, source) -> "PerturbationSpec":
        from .annotation_io import _load_json

        data, name = _load_json(source)
        if not isinstance(data, dict):
            raise ParseError("perturbation spec must be a JSON object", source=name)
        return cls.from_dict(data)


@dataclass(frozen=True)
class ExpectationRecord:
    n_truths: Mapping[DefectClass, int]
    expected_recall: Mapping[DefectClass, float]
    confusion: tuple[tuple[float, ...], ...]
    expected_spurious: float
    expected_find_precision: float
    expected_find_f1: float
    realised_spurious: int = 0

    def to_dict(self) -> dict:
        return {
            "n_truths": {c.value: self.n_truths[c] for c in CLASSES},
            "expected_recall": {c.value: self.expected_recall[c] for c in CLASSES},
            "confusion": [list(r) for r in self.confusion],
            "expected_spurious": self.expected_spurious,
            "expected_find_precision": self.expected_find_precision,
            "expected_find_f1": self.expected_find_f1,
            "realised_spurious": self.realised_spurious,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _bbox(poly):
    xs = [x for x, _ in poly]
    ys = [y for _, y in poly]
    return min(xs), min(ys), max(xs), max(ys)


def _boxes_overlap(a, b, margin=1.0) -> bool:
    return a[0] - margin < b[2] and b[0] - margin < a[2] and a[1] - margin < b[3] and b[1] - margin < a[3]


def _jitter(poly, jitter: float, image: ImageRecord, rng: SplitMix64):
    if jitter == 0:
        return poly
    for _ in range(_JITTER_TRIES):
        moved = [
            (
                min(max(x + rng.uniform(-jitter, jitter), 0.0), float(image.width)),
                min(max(y + rng.uniform(-jitter, jitter), 0.0), float(image.height)),
            )
            for x, y in poly
        ]
        moved = drop_repeated_vertices(moved)
        if len(moved) >= 3 and polygon_area(moved) > 0 and not is_self_intersecting(moved):
            return tuple(moved)
    return poly


def _spurious(image: ImageRecord, occupied: list, rng: SplitMix64):
    r = SPURIOUS_RADIUS_PX
    if image.width < 2 * r + 2 or image.height < 2 * r + 2:
        return None
    for _ in range(_PLACEMENT_TRIES):
        cx = rng.uniform(r + 1, image.width - r - 1)
        cy = rng.uniform(r + 1, image.height - r - 1)
        box = (cx - r, cy - r, cx + r, cy + r)
        if any(_boxes_overlap(box, b) for b in occupied):
            continue
        occupied.append(box)
        return tuple(
            (cx + r * math.cos(2 * math.pi * k / SPURIOUS_SIDES), cy + r * math.sin(2 * math.pi * k / SPURIOUS_SIDES))
            for k in range(SPURIOUS_SIDES)
        )
    return None


def perturb(dataset: Dataset, spec: PerturbationSpec) -> tuple[Dataset, ExpectationRecord]:
    """Derive a prediction set from ``dataset.truths`` under ``spec``.

    Each image uses its own generator seeded from ``spec.seed`` and the image's
    position in name order, so the output depends only on the inputs.
    """
    preds: dict[str, tuple[DefectInstance, ...]] = {}
    n_truths = {c: 0 for c in CLASSES}
    realised_spurious = 0
    for idx, im in enumerate(dataset.images):
        rng = SplitMix64(derive_seed(spec.seed, idx))
        out = []
        truths = dataset.truths_for(im.name)
        for inst in truths:
            n_truths[inst.defect_class] += 1
            # fixed draw order per truth keeps streams aligned across specs
            u_drop = rng.random()
            new_cls = CLASSES[rng.choice_weighted(spec.confusion[CLASSES.index(inst.defect_class)])]
            if u_drop < spec.drop_prob[inst.defect_class]:
                continue
            poly = _jitter(inst.polygon, spec.jitter_px, im, rng)
            out.append(DefectInstance(new_cls, poly, im.name, 1.0))
        n_spur = rng.poisson(spec.spurious_rate)
        # grow truth boxes by the jitter so spurious shapes stay clear of moved survivors
        j = spec.jitter_px
        occupied = [(x0 - j, y0 - j, x1 + j, y1 + j) for x0, y0, x1, y1 in (_bbox(t.polygon) for t in truths)]
        for _ in range(n_spur):
            poly = _spurious(im, occupied, rng)
            if poly is None:
                break
            cls = CLASSES[rng.below(3)]
            out.append(DefectInstance(cls, poly, im.name, SPURIOUS_SCORE))
            realised_spurious += 1
        preds[im.name] = tuple(out)

    total = sum(n_truths.values())
    exp_tp = sum(n_truths[c] * (1.0 - spec.drop_prob[c]) for c in CLASSES)
    exp_fp = spec.spurious_rate * len(dataset.images)
    precision = exp_tp / (exp_tp + exp_fp) if exp_tp + exp_fp > 0 else 0.0
    recall = exp_tp / total if total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    record = ExpectationRecord(
        n_truths=n_truths,
        expected_recall={c: 1.0 - spec.drop_prob[c] for c in CLASSES},
        confusion=spec.confusion,
        expected_spurious=exp_fp,
        expected_find_precision=precision,
        expected_find_f1=f1,
        realised_spurious=realised_spurious,
    )
    return dataset.with_predictions(preds), record
