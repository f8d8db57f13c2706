"""Report bundles: CSV/JSON emission, matching readers, atomic output.

A bundle is built in memory as ``{relative filename: bytes}`` and written in
one go, so a run either leaves a complete directory or nothing.

CSV conventions: comma separated, ``\\n`` line endings, floats written with
``repr`` (lossless), missing values as the empty string.
"""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any, Mapping, Sequence

from .hardening import HardeningConstants, HardeningResult, dataset_hardening, hardening_error
from .matching import (
    dataset_iou_matrices,
    dataset_type_scores,
    f1_vs_iou_sweep,
    find_scores,
    match_dataset,
)
from .metrology import (
    ErrorReport,
    bar_rows,
    dataset_geometry,
    error_report,
    histogram,
    outlier_view,
    parity_summary,
    parity_table,
)
from .records import CLASSES, Dataset

ERROR_COLUMNS = ("variant", "scope", "image", "quantity", "group", "pct_error", "note")
FIND_COLUMNS = ("iou_threshold", "tp", "fp", "fn", "precision", "recall", "f1")
TYPE_COLUMNS = ("group", "tp", "fp", "fn", "precision", "recall", "f1")
HIST_COLUMNS = ("group", "bin_lo", "bin_hi", "true_count", "pred_count")
BAR_COLUMNS = ("label", "bdot", "111", "100", "overall")
PARITY_COLUMNS = (
    "image",
    "class",
    "true_count",
    "pred_count",
    "true_size_nm",
    "pred_size_nm",
    "true_heywood",
    "pred_heywood",
    "true_density_per_nm2",
    "pred_density_per_nm2",
    "true_density_display",
    "pred_density_display",
)
HARDENING_COLUMNS = ("image", "side", "mode", "MPa")
HARDENING_TERM_COLUMNS = (
    "image",
    "side",
    "class",
    "bin_center_nm",
    "assigned_size_nm",
    "count",
    "rho_per_nm3",
    "delta_sigma_MPa",
)
HARDENING_ERROR_COLUMNS = ("mode", "n_images", "mae_MPa", "mape_pct", "n_zero_baseline")


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_bytes(rows: Sequence[Mapping], columns: Sequence[str]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue().encode("utf-8")


def _parse_cell(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(source, *, typed: bool = True) -> list[dict]:
    """Read a CSV written by this package back into dicts."""
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    rows = list(csv.DictReader(io.StringIO(text)))
    if not typed:
        return rows
    # keep identifier-like columns as text even when they look numeric
    keep = {"image", "label", "group", "class", "manifest", "kind", "side", "mode", "note", "variant", "scope"}
    return [{k: (v if k in keep else _parse_cell(v)) for k, v in r.items()} for r in rows]


def json_bytes(obj: Any) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n").encode("utf-8")


def write_bundle(out_dir, files: Mapping[str, bytes]) -> Path:
    """Write ``files`` under ``out_dir`` atomically (temp dir + rename).

    An existing ``out_dir`` is replaced only once the new bundle is complete.
    """
    out = Path(out_dir).resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
    try:
        for rel, data in sorted(files.items()):
            path = tmp / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        old = None
        if out.exists():
            old = out.parent / f".{out.name}.old-{os.getpid()}"
            os.rename(out, old)
        os.rename(tmp, out)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


# ---------------------------------------------------------------- evaluate


def _error_rows(report: ErrorReport) -> list[dict]:
    return [
        {
            "variant": report.variant,
            "scope": e.scope,
            "image": e.image,
            "quantity": e.quantity,
            "group": e.group,
            "pct_error": e.pct_error,
            "note": e.note,
        }
        for e in report.entries
    ]


def _error_summary(report: ErrorReport, density_scale: float) -> dict:
    quantities = sorted({e.quantity for e in report.entries})
    out: dict[str, Any] = {
        scope: {q: {e.group: e.pct_error for e in report.entries if e.scope == scope and e.quantity == q} for q in quantities}
        for scope in ("pooled", "image_mean")
    }
    out["size_mae_nm"] = report.size_mae_nm
    out["density_mae_per_nm2"] = report.density_mae_per_nm2
    out["density_mae_display"] = (
        None if report.density_mae_per_nm2 is None else report.density_mae_per_nm2 * density_scale
    )
    return out


def _parity_rows(rows, density_scale: float) -> list[dict]:
    return [
        {
            "image": r.image,
            "class": r.defect_class.value,
            "true_count": r.true_count,
            "pred_count": r.pred_count,
            "true_size_nm": r.true_size_nm,
            "pred_size_nm": r.pred_size_nm,
            "true_heywood": r.true_heywood,
            "pred_heywood": r.pred_heywood,
            "true_density_per_nm2": r.true_density_per_nm2,
            "pred_density_per_nm2": r.pred_density_per_nm2,
            "true_density_display": r.true_density_per_nm2 * density_scale,
            "pred_density_display": r.pred_density_per_nm2 * density_scale,
        }
        for r in rows
    ]


def evaluate_bundle(dataset: Dataset, config: Mapping[str, Any], *, threads: int = 1) -> dict[str, bytes]:
    """Every evaluation output for ``dataset`` as ``{filename: bytes}``.

    ``config`` needs ``iou_thresholds`` (first entry is the primary threshold),
    ``bin_size_nm``, ``bin_heywood``, ``density_scale``, ``outlier_cutoff`` and
    ``type_average``; it is echoed verbatim as ``config.json``.
    """
    thresholds = list(config["iou_thresholds"])
    primary = thresholds[0]
    scale = config["density_scale"]

    ious = dataset_iou_matrices(dataset, threads)
    reports = match_dataset(dataset, primary, ious=ious)
    sweep = f1_vs_iou_sweep(dataset, thresholds, ious=ious)
    find = find_scores(reports.values())
    types = dataset_type_scores(dataset, reports)
    geom = dataset_geometry(dataset)
    err_all = error_report(dataset, reports, "all", geometry=geom)
    err_found = error_report(dataset, reports, "found", geometry=geom)
    parity_all = parity_table(dataset, geometry=geom)
    parity_found = parity_table(dataset, reports, geometry=geom)
    outliers = outlier_view(parity_all, config["outlier_cutoff"], scale)

    files: dict[str, bytes] = {}
    files["config.json"] = json_bytes(dict(config))
    files["find_scores.csv"] = csv_bytes(
        [{"iou_threshold": t, **s.as_row()} for t, s in sweep.items()], FIND_COLUMNS
    )
    type_rows = [{"group": c.value, **types.per_class[c].as_row()} for c in CLASSES]
    type_rows.append({"group": "micro", **types.micro.as_row()})
    type_rows.append({"group": "macro", "f1": types.macro_f1})
    files["type_scores.csv"] = csv_bytes(type_rows, TYPE_COLUMNS)
    files["errors_all.csv"] = csv_bytes(_error_rows(err_all), ERROR_COLUMNS)
    files["errors_found.csv"] = csv_bytes(_error_rows(err_found), ERROR_COLUMNS)
    for variant, rep in (("all", None), ("found", reports)):
        for qty, width in (("size_nm", config["bin_size_nm"]), ("heywood", config["bin_heywood"])):
            h = histogram(dataset, qty, width, True, match_reports=rep, geometry=geom)
            files[f"hist_{qty}_{variant}.csv"] = csv_bytes(h.rows(), HIST_COLUMNS)
    files["parity_all.csv"] = csv_bytes(_parity_rows(parity_all, scale), PARITY_COLUMNS)
    files["parity_found.csv"] = csv_bytes(_parity_rows(parity_found, scale), PARITY_COLUMNS)
    files["parity_outlier_view.csv"] = csv_bytes(_parity_rows(outliers, scale), PARITY_COLUMNS)
    for q in ("size", "shape", "density"):
        files[f"bars_{q}_all.csv"] = csv_bytes(bar_rows(err_all, q), BAR_COLUMNS)
    for q in ("size", "shape"):
        files[f"bars_{q}_found.csv"] = csv_bytes(bar_rows(err_found, q), BAR_COLUMNS)
    files["matches.json"] = json_bytes([reports[n].to_dict() for n in dataset.image_names])

    summary = {
        "n_images": len(dataset.images),
        "n_truths": sum(len(dataset.truths_for(n)) for n in dataset.image_names),
        "n_preds": sum(len(dataset.preds_for(n)) for n in dataset.image_names),
        "iou_threshold": primary,
        "find": find.as_row(),
        "sweep": [{"iou_threshold": t, **s.as_row()} for t, s in sweep.items()],
        "type": {c.value: types.per_class[c].as_row() for c in CLASSES},
        "type_f1": {
            **{c.value: types.per_class[c].f1 for c in CLASSES},
            "overall": types.overall(config["type_average"]),
            "macro": types.macro_f1,
            "micro": types.micro.f1,
        },
        "errors": {
            "all": _error_summary(err_all, scale),
            "found": _error_summary(err_found, scale),
        },
        "parity": {
            "all": parity_summary(parity_all),
            "found": parity_summary(parity_found),
            "outlier_view": parity_summary(outliers),
        },
        "density_display_scale": scale,
    }
    if config.get("manifest_data") is not None:
        summary["manifest"] = config["manifest_data"]
    files["summary.json"] = json_bytes(summary)
    return files


# ---------------------------------------------------------------- hardening


def hardening_bundle(
    dataset: Dataset,
    constants: HardeningConstants,
    bin_width_nm: float,
    config: Mapping[str, Any],
    *,
    assigned_size: str = "center",
) -> dict[str, bytes]:
    sides: dict[str, dict[str, HardeningResult]] = {
        "truths": dataset_hardening(dataset, constants, bin_width_nm, side="truths", assigned_size=assigned_size)
    }
    if dataset.predictions is not None:
        sides["predictions"] = dataset_hardening(
            dataset, constants, bin_width_nm, side="predictions", assigned_size=assigned_size
        )
    totals, terms = [], []
    for side, results in sides.items():
        for name in sorted(results):
            r = results[name]
            for mode in ("linear", "quadrature"):
                totals.append({"image": name, "side": side, "mode": mode, "MPa": r.total(mode)})
            for t in r.terms:
                terms.append(
                    {
                        "image": name,
                        "side": side,
                        "class": t.defect_class.value,
                        "bin_center_nm": t.bin_center_nm,
                        "assigned_size_nm": t.assigned_size_nm,
                        "count": t.count,
                        "rho_per_nm3": t.rho_per_nm3,
                        "delta_sigma_MPa": t.delta_sigma_MPa,
                    }
                )
    doc: dict[str, Any] = {
        "constants": constants.to_dict(),
        "bin_width_nm": bin_width_nm,
        "assigned_size": assigned_size,
        "results": {side: [results[n].to_dict() for n in sorted(results)] for side, results in sides.items()},
    }
    files = {
        "config.json": json_bytes(dict(config)),
        "hardening.csv": csv_bytes(totals, HARDENING_COLUMNS),
        "hardening_terms.csv": csv_bytes(terms, HARDENING_TERM_COLUMNS),
    }
    if "predictions" in sides:
        errs = hardening_error(sides["truths"], sides["predictions"])
        err_rows = [
            {
                "mode": e.mode,
                "n_images": e.n_images,
                "mae_MPa": e.mae_MPa,
                "mape_pct": e.mape_pct,
                "n_zero_baseline": e.n_zero_baseline,
            }
            for e in errs.values()
        ]
        doc["error"] = {row["mode"]: row for row in err_rows}
        files["hardening_error.csv"] = csv_bytes(err_rows, HARDENING_ERROR_COLUMNS)
    files["hardening.json"] = json_bytes(doc)
    return files
