"""Materials statistics of true vs predicted defect populations.

Size is the equivalent-circle diameter in nm, shape the Heywood factor and
density the areal count per nm².  Percent errors always compare means of two
distributions, never means of per-defect errors.  Sums go through
``math.fsum`` so every statistic is independent of instance order.

Error groups: one per defect class, ``overall`` (mean of the available
per-class errors) and ``all`` (classes pooled into one distribution).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .errors import EmptySeriesError, RangeError, ZeroBaselineError
from .geometry import DefectGeometry, defect_geometry
from .matching import MatchReport
from .records import CLASSES, Dataset, DefectClass, DefectInstance, ImageRecord

QUANTITIES = ("size", "shape", "density")
GROUPS = tuple(c.value for c in CLASSES) + ("overall", "all")

DEFAULT_SIZE_BIN_NM = 2.0
DEFAULT_HEYWOOD_BIN = 0.05
DEFAULT_DENSITY_DISPLAY_SCALE = 1e4
DEFAULT_OUTLIER_CUTOFF_DISPLAY = 10.0


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def bin_index(value: float, width: float) -> int:
    """Index ``k`` with ``k*width <= value < (k+1)*width``, exact at the edges."""
    k = math.floor(value / width)
    if k * width > value:
        k -= 1
    elif (k + 1) * width <= value:
        k += 1
    return k


@dataclass(frozen=True)
class ClassStats:
    defect_class: DefectClass
    count: int
    areal_density_per_nm2: float
    mean_size_nm: Optional[float] = None
    mean_heywood: Optional[float] = None


def _stats_from_geoms(cls: DefectClass, geoms: Sequence[DefectGeometry], image: ImageRecord) -> ClassStats:
    n = len(geoms)
    return ClassStats(
        defect_class=cls,
        count=n,
        areal_density_per_nm2=n / image.area_nm2,
        mean_size_nm=_mean([g.size_nm for g in geoms]) if n else None,
        mean_heywood=_mean([g.heywood for g in geoms]) if n else None,
    )


def class_stats(instances: Sequence[DefectInstance], image: ImageRecord) -> dict[DefectClass, ClassStats]:
    by_class: dict[DefectClass, list[DefectGeometry]] = {c: [] for c in CLASSES}
    for inst in instances:
        by_class[inst.defect_class].append(defect_geometry(inst, image))
    return {c: _stats_from_geoms(c, by_class[c], image) for c in CLASSES}


def percent_error_of_means(true_values: Sequence[float], pred_values: Sequence[float]) -> float:
    """``100 * |mean(pred) - mean(true)| / mean(true)``."""
    true_values, pred_values = list(true_values), list(pred_values)
    if not true_values or not pred_values:
        raise EmptySeriesError(
            f"cannot compare means: {len(true_values)} true and {len(pred_values)} predicted values"
        )
    mt, mp = _mean(true_values), _mean(pred_values)
    if mt == 0:
        raise ZeroBaselineError("true mean is zero")
    return 100.0 * abs(mp - mt) / abs(mt)


# ---------------------------------------------------------------- geometry cache


@dataclass(frozen=True)
class ImageGeometry:
    image: ImageRecord
    truths: tuple[DefectInstance, ...]
    preds: tuple[DefectInstance, ...]
    truth_geoms: tuple[DefectGeometry, ...]
    pred_geoms: tuple[DefectGeometry, ...]


def dataset_geometry(dataset: Dataset) -> dict[str, ImageGeometry]:
    out = {}
    for im in dataset.images:
        t, p = dataset.truths_for(im.name), dataset.preds_for(im.name)
        out[im.name] = ImageGeometry(
            im, t, p, tuple(defect_geometry(i, im) for i in t), tuple(defect_geometry(i, im) for i in p)
        )
    return out


def _series(ig: ImageGeometry, variant: str, report: Optional[MatchReport]):
    """(true, pred) lists of (class, geometry) for one image and variant."""
    if variant == "all":
        return (
            [(i.defect_class, g) for i, g in zip(ig.truths, ig.truth_geoms)],
            [(i.defect_class, g) for i, g in zip(ig.preds, ig.pred_geoms)],
        )
    if report is None:
        raise RangeError(f"found-only statistics need a match report for {ig.image.name}")
    true_side = [(ig.truths[t].defect_class, ig.truth_geoms[t]) for t, _, _ in report.pairs]
    pred_side = [(ig.preds[p].defect_class, ig.pred_geoms[p]) for _, p, _ in report.pairs]
    return true_side, pred_side


def _attr(quantity: str) -> str:
    return {"size": "size_nm", "shape": "heywood"}[quantity]


# ---------------------------------------------------------------- error report


@dataclass(frozen=True)
class ErrorEntry:
    scope: str  # "image", "image_mean" or "pooled"
    image: str  # empty unless scope == "image"
    quantity: str
    group: str
    pct_error: Optional[float]
    note: str = ""


@dataclass(frozen=True)
class ErrorReport:
    variant: str  # "all" or "found"
    entries: tuple[ErrorEntry, ...]
    size_mae_nm: Optional[float] = None
    density_mae_per_nm2: Optional[float] = None

    def get(self, scope: str, quantity: str, group: str, image: str = "") -> Optional[float]:
        for e in self.entries:
            if (e.scope, e.quantity, e.group, e.image) == (scope, quantity, group, image):
                return e.pct_error
        raise KeyError((scope, quantity, group, image))

    def pooled(self, quantity: str, group: str = "overall") -> Optional[float]:
        return self.get("pooled", quantity, group)

    def images(self) -> list[str]:
        return sorted({e.image for e in self.entries if e.scope == "image"})


def _safe_pct(true_values, pred_values) -> tuple[Optional[float], str]:
    try:
        return percent_error_of_means(true_values, pred_values), ""
    except EmptySeriesError:
        return None, "empty series"
    except ZeroBaselineError:
        return None, "zero baseline"


def _overall(values: Iterable[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def _group_entries(scope, image, quantity, true_side, pred_side) -> list[ErrorEntry]:
    entries = []
    per_class = []
    for c in CLASSES:
        t = [v for k, v in true_side if k == c]
        p = [v for k, v in pred_side if k == c]
        val, note = _safe_pct(t, p)
        per_class.append(val)
        entries.append(ErrorEntry(scope, image, quantity, c.value, val, note))
    entries.append(ErrorEntry(scope, image, quantity, "overall", _overall(per_class)))
    val, note = _safe_pct([v for _, v in true_side], [v for _, v in pred_side])
    entries.append(ErrorEntry(scope, image, quantity, "all", val, note))
    return entries


def error_report(
    dataset: Dataset,
    match_reports: Optional[Mapping[str, MatchReport]] = None,
    variant: str = "all",
    *,
    geometry: Optional[Mapping[str, ImageGeometry]] = None,
) -> ErrorReport:
    """Per-image, mean-of-per-image and pooled percent errors.

    ``variant="all"`` compares full truth and prediction populations and also
    yields density errors; ``variant="found"`` compares the two sides of the
    matched pairs only (truths grouped by true class, predictions by predicted
    class).  Undefined errors (empty side, zero baseline) are kept as ``None``
    with a note instead of aborting.
    """
    if variant not in ("all", "found"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "found" and match_reports is None:
        raise RangeError("found-only variant needs match reports")
    geometry = geometry if geometry is not None else dataset_geometry(dataset)
    quantities = ("size", "shape", "density") if variant == "all" else ("size", "shape")
    entries: list[ErrorEntry] = []
    pooled_true: dict[str, list] = {q: [] for q in quantities}
    pooled_pred: dict[str, list] = {q: [] for q in quantities}
    size_abs: list[float] = []
    dens_abs: list[float] = []

    for name in dataset.image_names:
        ig = geometry[name]
        tr, pr = _series(ig, variant, None if match_reports is None else match_reports.get(name))
        for q in ("size", "shape"):
            a = _attr(q)
            ts = [(c, getattr(g, a)) for c, g in tr]
            ps = [(c, getattr(g, a)) for c, g in pr]
            entries.extend(_group_entries("image", name, q, ts, ps))
            pooled_true[q].extend(ts)
            pooled_pred[q].extend(ps)
        for c in CLASSES:
            t = [g.size_nm for k, g in tr if k == c]
            p = [g.size_nm for k, g in pr if k == c]
            if t and p:
                size_abs.append(abs(_mean(p) - _mean(t)))
        if variant == "all":
            area = ig.image.area_nm2
            td = [(c, sum(1 for k, _ in tr if k == c) / area) for c in CLASSES]
            pd = [(c, sum(1 for k, _ in pr if k == c) / area) for c in CLASSES]
            per_class = []
            for (c, t), (_, p) in zip(td, pd):
                val, note = _safe_pct([t], [p])
                per_class.append(val)
                entries.append(ErrorEntry("image", name, "density", c.value, val, note))
                if t > 0 or p > 0:
                    dens_abs.append(abs(p - t))
            entries.append(ErrorEntry("image", name, "density", "overall", _overall(per_class)))
            val, note = _safe_pct([len(tr) / area], [len(pr) / area])
            entries.append(ErrorEntry("image", name, "density", "all", val, note))
            pooled_true["density"].extend(td)
            pooled_pred["density"].extend(pd)

    for q in quantities:
        if q == "density":
            # per-image densities are the series; "all" sums classes per image
            n_img = len(dataset.image_names)
            per_class = []
            for c in CLASSES:
                t = [v for k, v in pooled_true[q] if k == c]
                p = [v for k, v in pooled_pred[q] if k == c]
                val, note = _safe_pct(t, p)
                per_class.append(val)
                entries.append(ErrorEntry("pooled", "", q, c.value, val, note))
            entries.append(ErrorEntry("pooled", "", q, "overall", _overall(per_class)))
            t_all = [math.fsum(v for _, v in pooled_true[q][i * 3 : i * 3 + 3]) for i in range(n_img)]
            p_all = [math.fsum(v for _, v in pooled_pred[q][i * 3 : i * 3 + 3]) for i in range(n_img)]
            val, note = _safe_pct(t_all, p_all)
            entries.append(ErrorEntry("pooled", "", q, "all", val, note))
        else:
            entries.extend(_group_entries("pooled", "", q, pooled_true[q], pooled_pred[q]))
        for g in GROUPS:
            vals = [e.pct_error for e in entries if e.scope == "image" and e.quantity == q and e.group == g]
            entries.append(ErrorEntry("image_mean", "", q, g, _overall(vals)))

    return ErrorReport(
        variant=variant,
        entries=tuple(entries),
        size_mae_nm=_overall(size_abs),
        density_mae_per_nm2=_overall(dens_abs) if variant == "all" else None,
    )


def bar_rows(report: ErrorReport, quantity: str) -> list[dict]:
    """Per-image percent errors by class, then the per-image average and pooled rows."""
    cols = [c.value for c in CLASSES] + ["overall"]
    rows = []
    for name in report.images():
        rows.append({"label": name, **{g: report.get("image", quantity, g, name) for g in cols}})
    rows.append({"label": "per-image average", **{g: report.get("image_mean", quantity, g) for g in cols}})
    rows.append({"label": "full distribution", **{g: report.get("pooled", quantity, g) for g in cols}})
    return rows


# ---------------------------------------------------------------- histograms


@dataclass(frozen=True)
class HistogramTable:
    quantity: str  # "size_nm" or "heywood"
    variant: str
    bin_width: float
    bin_edges: tuple[float, ...]
    true_counts: tuple[int, ...]
    pred_counts: tuple[int, ...]
    per_class: Mapping[DefectClass, tuple[tuple[int, ...], tuple[int, ...]]] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        series = [("all", self.true_counts, self.pred_counts)]
        series += [(c.value, *self.per_class[c]) for c in CLASSES if c in self.per_class]
        for group, tc, pc in series:
            for k in range(len(tc)):
                out.append(
                    {
                        "group": group,
                        "bin_lo": self.bin_edges[k],
                        "bin_hi": self.bin_edges[k + 1],
                        "true_count": tc[k],
                        "pred_count": pc[k],
                    }
                )
        return out


def histogram(
    dataset: Dataset,
    quantity: str = "size_nm",
    bin_width: float = DEFAULT_SIZE_BIN_NM,
    per_class: bool = True,
    *,
    match_reports: Optional[Mapping[str, MatchReport]] = None,
    geometry: Optional[Mapping[str, ImageGeometry]] = None,
) -> HistogramTable:
    """Shared-edge histograms of true and predicted values.

    Edges are multiples of ``bin_width`` (anchored at 0) covering the pooled
    min and max.  Bins are left-closed; a value on the top edge of the data
    range opens one more bin, so the last bin is effectively closed too.
    Passing ``match_reports`` restricts both series to matched pairs.
    """
    if not bin_width > 0:
        raise RangeError(f"bin width must be positive, got {bin_width}")
    if quantity not in ("size_nm", "heywood"):
        raise ValueError(f"unknown histogram quantity {quantity!r}")
    geometry = geometry if geometry is not None else dataset_geometry(dataset)
    variant = "all" if match_reports is None else "found"
    tr: list[tuple[DefectClass, float]] = []
    pr: list[tuple[DefectClass, float]] = []
    for name in dataset.image_names:
        t, p = _series(geometry[name], variant, None if match_reports is None else match_reports.get(name))
        tr.extend((c, getattr(g, quantity)) for c, g in t)
        pr.extend((c, getattr(g, quantity)) for c, g in p)
    values = [v for _, v in tr] + [v for _, v in pr]
    if not values:
        return HistogramTable(
            quantity, variant, bin_width, (), (), (), {c: ((), ()) for c in CLASSES} if per_class else {}
        )
    lo = bin_index(min(values), bin_width)
    hi = bin_index(max(values), bin_width)
    nbins = hi - lo + 1
    edges = tuple((lo + k) * bin_width for k in range(nbins + 1))

    def count(series, cls=None):
        counts = [0] * nbins
        for c, v in series:
            if cls is None or c == cls:
                counts[bin_index(v, bin_width) - lo] += 1
        return tuple(counts)

    table = HistogramTable(
        quantity=quantity,
        variant=variant,
        bin_width=bin_width,
        bin_edges=edges,
        true_counts=count(tr),
        pred_counts=count(pr),
        per_class={c: (count(tr, c), count(pr, c)) for c in CLASSES} if per_class else {},
    )
    if sum(table.true_counts) != len(tr) or sum(table.pred_counts) != len(pr):
        from .errors import InvariantViolation

        raise InvariantViolation("histogram lost counts")
    return table


# ---------------------------------------------------------------- parity


@dataclass(frozen=True)
class ParityRow:
    image: str
    defect_class: DefectClass
    true_count: int
    pred_count: int
    true_size_nm: Optional[float]
    pred_size_nm: Optional[float]
    true_heywood: Optional[float]
    pred_heywood: Optional[float]
    true_density_per_nm2: float
    pred_density_per_nm2: float


def parity_table(
    dataset: Dataset,
    match_reports: Optional[Mapping[str, MatchReport]] = None,
    *,
    geometry: Optional[Mapping[str, ImageGeometry]] = None,
) -> list[ParityRow]:
    """One row per (image, class) with true and predicted values.

    Size and shape come from the matched pairs when ``match_reports`` is
    given, otherwise from all defects.  Densities always use all defects.
    """
    if dataset.predictions is None:
        raise RangeError("parity table needs predictions")
    geometry = geometry if geometry is not None else dataset_geometry(dataset)
    rows = []
    for name in dataset.image_names:
        ig = geometry[name]
        tr, pr = _series(ig, "all" if match_reports is None else "found",
                         None if match_reports is None else match_reports.get(name))
        area = ig.image.area_nm2
        for c in CLASSES:
            tg = [g for k, g in tr if k == c]
            pg = [g for k, g in pr if k == c]
            n_true_all = sum(1 for i in ig.truths if i.defect_class == c)
            n_pred_all = sum(1 for i in ig.preds if i.defect_class == c)
            rows.append(
                ParityRow(
                    image=name,
                    defect_class=c,
                    true_count=len(tg),
                    pred_count=len(pg),
                    true_size_nm=_mean([g.size_nm for g in tg]) if tg else None,
                    pred_size_nm=_mean([g.size_nm for g in pg]) if pg else None,
                    true_heywood=_mean([g.heywood for g in tg]) if tg else None,
                    pred_heywood=_mean([g.heywood for g in pg]) if pg else None,
                    true_density_per_nm2=n_true_all / area,
                    pred_density_per_nm2=n_pred_all / area,
                )
            )
    return rows


def outlier_view(
    rows: Sequence[ParityRow],
    cutoff_display: float = DEFAULT_OUTLIER_CUTOFF_DISPLAY,
    display_scale: float = DEFAULT_DENSITY_DISPLAY_SCALE,
) -> list[ParityRow]:
    """Rows whose true density, in display units, lies below ``cutoff_display``."""
    return [r for r in rows if r.true_density_per_nm2 * display_scale < cutoff_display]


def parity_summary(rows: Sequence[ParityRow]) -> dict[str, dict[str, Optional[float]]]:
    """MAE and RMSE of size (nm), shape and density (#/nm²) over rows with both sides."""
    out = {}
    for q, (ta, pa) in {
        "size": ("true_size_nm", "pred_size_nm"),
        "shape": ("true_heywood", "pred_heywood"),
        "density": ("true_density_per_nm2", "pred_density_per_nm2"),
    }.items():
        diffs = [
            getattr(r, pa) - getattr(r, ta)
            for r in rows
            if getattr(r, ta) is not None and getattr(r, pa) is not None
        ]
        if q == "density":
            # a class absent on both sides is not a data point
            diffs = [
                r.pred_density_per_nm2 - r.true_density_per_nm2
                for r in rows
                if r.true_density_per_nm2 > 0 or r.pred_density_per_nm2 > 0
            ]
        out[q] = {
            "n": len(diffs),
            "mae": math.fsum(abs(d) for d in diffs) / len(diffs) if diffs else None,
            "rmse": math.sqrt(math.fsum(d * d for d in diffs) / len(diffs)) if diffs else None,
        }
    return out
