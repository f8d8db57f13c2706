"""IoU-threshold matching of predicted to true defects, and find/type scores.

Matching is class-agnostic and one-to-one.  All candidate pairs with
IoU >= threshold are ranked by IoU (descending, ties by truth then prediction
index) and accepted greedily while both members are free.  This is the
order-independent form of "each prediction takes its best truth, and a truth
claimed twice keeps the higher-IoU claimant".
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import InvariantViolation, RangeError
from .geometry import iou_matrix
from .records import CLASSES, Dataset, DefectClass, DefectInstance


@dataclass(frozen=True)
class MatchReport:
    image_name: str
    iou_threshold: float
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_truths: tuple[int, ...]
    unmatched_preds: tuple[int, ...]

    @property
    def n_truths(self) -> int:
        return len(self.pairs) + len(self.unmatched_truths)

    @property
    def n_preds(self) -> int:
        return len(self.pairs) + len(self.unmatched_preds)

    def check(self) -> None:
        ts = [t for t, _, _ in self.pairs]
        ps = [p for _, p, _ in self.pairs]
        if len(set(ts)) != len(ts) or len(set(ps)) != len(ps):
            raise InvariantViolation(f"{self.image_name}: an index is matched twice")
        if any(iou < self.iou_threshold for _, _, iou in self.pairs):
            raise InvariantViolation(f"{self.image_name}: pair below threshold")
        if set(ts) & set(self.unmatched_truths) or set(ps) & set(self.unmatched_preds):
            raise InvariantViolation(f"{self.image_name}: index both matched and unmatched")

    def to_dict(self) -> dict:
        return {
            "image_name": self.image_name,
            "iou_threshold": self.iou_threshold,
            "pairs": [[t, p, iou] for t, p, iou in self.pairs],
            "unmatched_truths": list(self.unmatched_truths),
            "unmatched_preds": list(self.unmatched_preds),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MatchReport":
        return cls(
            image_name=d["image_name"],
            iou_threshold=float(d["iou_threshold"]),
            pairs=tuple((int(t), int(p), float(iou)) for t, p, iou in d["pairs"]),
            unmatched_truths=tuple(int(i) for i in d["unmatched_truths"]),
            unmatched_preds=tuple(int(i) for i in d["unmatched_preds"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class PrfScores:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other: "PrfScores") -> "PrfScores":
        return PrfScores(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_row(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def _check_threshold(iou_threshold: float) -> None:
    if not 0.0 < iou_threshold <= 1.0:
        raise RangeError(f"IoU threshold must lie in (0, 1], got {iou_threshold}")


def match_from_iou(iou: np.ndarray, iou_threshold: float, image_name: str = "") -> MatchReport:
    """Greedy one-to-one matching on a precomputed truth x prediction IoU matrix."""
    _check_threshold(iou_threshold)
    n_t, n_p = iou.shape
    ti, pi = np.nonzero(iou >= iou_threshold)
    # lexsort: last key is primary
    order = np.lexsort((pi, ti, -iou[ti, pi]))
    t_used = np.zeros(n_t, dtype=bool)
    p_used = np.zeros(n_p, dtype=bool)
    pairs = []
    for k in order:
        t, p = int(ti[k]), int(pi[k])
        if t_used[t] or p_used[p]:
            continue
        t_used[t] = p_used[p] = True
        pairs.append((t, p, float(iou[t, p])))
    pairs.sort(key=lambda x: (x[0], x[1]))
    report = MatchReport(
        image_name=image_name,
        iou_threshold=float(iou_threshold),
        pairs=tuple(pairs),
        unmatched_truths=tuple(int(i) for i in np.nonzero(~t_used)[0]),
        unmatched_preds=tuple(int(i) for i in np.nonzero(~p_used)[0]),
    )
    report.check()
    return report


def match_instances(
    truths: Sequence[DefectInstance], preds: Sequence[DefectInstance], iou_threshold: float, image_name: str = ""
) -> MatchReport:
    """Match predictions to truths of one image; class labels are ignored."""
    _check_threshold(iou_threshold)
    if not image_name:
        image_name = (truths[0].source_image if truths else preds[0].source_image if preds else "")
    iou = iou_matrix([t.polygon for t in truths], [p.polygon for p in preds])
    return match_from_iou(iou, iou_threshold, image_name)


def find_scores(reports: MatchReport | Iterable[MatchReport]) -> PrfScores:
    """Defect-find counts; several reports are summed before P/R/F1 (micro)."""
    if isinstance(reports, MatchReport):
        reports = [reports]
    total = PrfScores()
    for r in reports:
        total = total + PrfScores(tp=len(r.pairs), fp=len(r.unmatched_preds), fn=len(r.unmatched_truths))
    return total


@dataclass(frozen=True)
class TypeScores:
    per_class: Mapping[DefectClass, PrfScores]

    @property
    def macro_f1(self) -> float:
        return sum(self.per_class[c].f1 for c in CLASSES) / len(CLASSES)

    @property
    def micro(self) -> PrfScores:
        total = PrfScores()
        for c in CLASSES:
            total = total + self.per_class[c]
        return total

    def overall(self, average: str = "macro") -> float:
        if average == "macro":
            return self.macro_f1
        if average == "micro":
            return self.micro.f1
        raise ValueError(f"unknown average {average!r}")

    def __add__(self, other: "TypeScores") -> "TypeScores":
        return TypeScores({c: self.per_class[c] + other.per_class[c] for c in CLASSES})


def type_scores(report: MatchReport, truths: Sequence[DefectInstance], preds: Sequence[DefectInstance]) -> TypeScores:
    """Per-class defect-type counts on top of a class-agnostic match.

    A matched pair with disagreeing classes is a false positive for the
    predicted class and a false negative for the true class.
    """
    tp = {c: 0 for c in CLASSES}
    fp = {c: 0 for c in CLASSES}
    fn = {c: 0 for c in CLASSES}
    for t, p, _ in report.pairs:
        ct, cp = truths[t].defect_class, preds[p].defect_class
        if ct == cp:
            tp[ct] += 1
        else:
            fp[cp] += 1
            fn[ct] += 1
    for p in report.unmatched_preds:
        fp[preds[p].defect_class] += 1
    for t in report.unmatched_truths:
        fn[truths[t].defect_class] += 1
    return TypeScores({c: PrfScores(tp[c], fp[c], fn[c]) for c in CLASSES})


def sum_type_scores(items: Iterable[TypeScores]) -> TypeScores:
    total = TypeScores({c: PrfScores() for c in CLASSES})
    for ts in items:
        total = total + ts
    return total


def _map_ordered(fn, items: list, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def dataset_iou_matrices(dataset: Dataset, threads: int = 1) -> dict[str, np.ndarray]:
    """IoU matrix per image (name order); computed once and reused across thresholds."""
    names = dataset.image_names

    def one(name):
        return iou_matrix([t.polygon for t in dataset.truths_for(name)], [p.polygon for p in dataset.preds_for(name)])

    return dict(zip(names, _map_ordered(one, names, threads)))


def match_dataset(
    dataset: Dataset, iou_threshold: float, *, threads: int = 1, ious: Optional[Mapping[str, np.ndarray]] = None
) -> dict[str, MatchReport]:
    if dataset.predictions is None:
        raise RangeError("dataset has no predictions")
    ious = ious if ious is not None else dataset_iou_matrices(dataset, threads)
    return {n: match_from_iou(ious[n], iou_threshold, n) for n in dataset.image_names}


def f1_vs_iou_sweep(
    dataset: Dataset, thresholds: Sequence[float], *, threads: int = 1, ious: Optional[Mapping[str, np.ndarray]] = None
) -> dict[float, PrfScores]:
    """Pooled defect-find scores at each threshold (sorted ascending)."""
    for t in thresholds:
        _check_threshold(t)
    ious = ious if ious is not None else dataset_iou_matrices(dataset, threads)
    return {
        float(t): find_scores(match_dataset(dataset, t, ious=ious).values()) for t in sorted(set(thresholds))
    }


def dataset_type_scores(dataset: Dataset, reports: Mapping[str, MatchReport]) -> TypeScores:
    return sum_type_scores(
        type_scores(reports[n], dataset.truths_for(n), dataset.preds_for(n)) for n in dataset.image_names
    )
