"""``defectmet`` command line: evaluate, split, hardening, learning-curve, synth.

Exit codes: 0 success, 1 bad input (a structured JSON error on stderr),
2 internal invariant violation.  ``DEFECTMET_THREADS`` caps worker threads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .annotation_io import image_names_in, load_label_map, parse_metadata, parse_predictions, parse_truths
from .errors import DefectMetError, InvariantViolation, MissingResultError
from .hardening import HardeningConstants
from .metrology import (
    DEFAULT_DENSITY_DISPLAY_SCALE,
    DEFAULT_HEYWOOD_BIN,
    DEFAULT_OUTLIER_CUTOFF_DISPLAY,
    DEFAULT_SIZE_BIN_NM,
)
from .records import Dataset
from .reporting import csv_bytes, evaluate_bundle, hardening_bundle, json_bytes, write_bundle
from .splitter import (
    LEARNING_CURVE_COLUMNS,
    SplitManifest,
    group_split,
    group_values,
    learning_curve_rows,
    load_manifest,
    percent_splits,
    random_split,
)
from .annotation_io import dump_native
from .synthetic import PerturbationSpec, perturb

log = logging.getLogger("defectmet")

DEFAULT_IOU = 0.3


def thread_count() -> int:
    cap = os.environ.get("DEFECTMET_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise DefectMetError(f"DEFECTMET_THREADS must be an integer, got {cap!r}") from None
    return n


def _path(p: Optional[str]) -> Optional[str]:
    return None if p is None else str(Path(p).resolve())


def _require(path: Optional[str], flag: str) -> str:
    if path is None:
        raise DefectMetError(f"{flag} is required")
    if not Path(path).is_file():
        raise DefectMetError(f"{flag}: no such file: {path}")
    return path


def _load(args, *, need_preds: bool) -> Dataset:
    truths_path = _require(args.truths, "--truths")
    meta_path = _require(args.metadata, "--metadata")
    names = set(image_names_in(truths_path))
    preds_path = None
    if need_preds or getattr(args, "preds", None):
        preds_path = _require(args.preds, "--preds")
        names |= set(image_names_in(preds_path))
    registry = parse_metadata(meta_path, names)
    label_map = load_label_map(_require(args.labels, "--labels")) if getattr(args, "labels", None) else None
    via_opts = {"label_map": label_map, "label_key": getattr(args, "label_key", None)}
    truths = parse_truths(truths_path, registry, **via_opts)
    # restrict to images that have annotations; metadata may list more
    annotated = set(truths.truths)
    ds = truths.subset(annotated)
    if preds_path is not None:
        preds = parse_predictions(preds_path, registry)
        extra = sorted(set(preds.predictions) - annotated)
        if extra:
            raise DefectMetError(f"predictions for images without ground truth: {extra}")
        ds = ds.with_predictions({n: preds.predictions.get(n, ()) for n in ds.image_names})
    return ds


# ---------------------------------------------------------------- subcommands


def cmd_evaluate(args) -> int:
    thresholds = args.iou or [DEFAULT_IOU]
    ds = _load(args, need_preds=True)
    manifest_data = None
    if args.manifest:
        m = load_manifest(_require(args.manifest, "--manifest"), ds)
        manifest_data = m.to_dict()
        ds = ds.subset(m.test_images)
    config = {
        "command": "evaluate",
        "truths": _path(args.truths),
        "preds": _path(args.preds),
        "metadata": _path(args.metadata),
        "labels": _path(args.labels),
        "label_key": args.label_key,
        "manifest": _path(args.manifest),
        "iou_thresholds": thresholds,
        "bin_size_nm": args.bin_size_nm,
        "bin_heywood": args.bin_heywood,
        "density_scale": args.density_scale,
        "outlier_cutoff": args.outlier_cutoff,
        "type_average": args.type_average,
        "version": __version__,
    }
    files = evaluate_bundle(ds, {**config, "manifest_data": manifest_data}, threads=thread_count())
    files["config.json"] = json_bytes(config)
    write_bundle(args.out, files)
    return 0


def cmd_split(args) -> int:
    ds = _load(args, need_preds=False)
    if args.method == "random":
        if args.n_test is None:
            raise DefectMetError("--n-test is required for method=random")
        manifests = [random_split(ds, args.n_test, args.seed)]
    elif args.method == "percent":
        if args.fraction is None:
            raise DefectMetError("--fraction is required for method=percent")
        manifests = percent_splits(ds, args.fraction, args.runs, args.seed)
    else:
        if not args.tag:
            raise DefectMetError("--tag is required for method=group")
        held = args.held or group_values(ds, args.tag)
        manifests = [group_split(ds, args.tag, h, args.train_value) for h in held]
    files = {f"{m.name}.manifest.json": m.to_json().encode("utf-8") for m in manifests}
    files["config.json"] = json_bytes(
        {
            "command": "split",
            "truths": _path(args.truths),
            "metadata": _path(args.metadata),
            "labels": _path(args.labels),
            "label_key": args.label_key,
            "method": args.method,
            "n_test": args.n_test,
            "fraction": args.fraction,
            "runs": args.runs,
            "tag": args.tag,
            "held": args.held,
            "train_value": args.train_value,
            "seed": args.seed,
            "version": __version__,
        }
    )
    write_bundle(args.out, files)
    return 0


def cmd_hardening(args) -> int:
    constants = HardeningConstants.from_json(_require(args.constants, "--constants")) if args.constants else HardeningConstants()
    ds = _load(args, need_preds=False)
    config = {
        "command": "hardening",
        "truths": _path(args.truths),
        "preds": _path(args.preds),
        "metadata": _path(args.metadata),
        "labels": _path(args.labels),
        "label_key": args.label_key,
        "constants": _path(args.constants),
        "bin_size_nm": args.bin_size_nm,
        "assigned_size": args.assigned_size,
        "version": __version__,
    }
    files = hardening_bundle(ds, constants, args.bin_size_nm, config, assigned_size=args.assigned_size)
    write_bundle(args.out, files)
    return 0


def collect_learning_curve(results_dir) -> list[dict]:
    root = Path(results_dir)
    if not root.is_dir():
        raise MissingResultError(f"no such results directory: {results_dir}")
    summaries = sorted(root.rglob("summary.json"))
    if not summaries:
        raise MissingResultError(f"no evaluation summaries under {results_dir}")
    manifests: list[SplitManifest] = []
    results: dict[str, dict] = {}
    seen: dict[str, list[str]] = {}
    for path in summaries:
        doc = json.loads(path.read_text(encoding="utf-8"))
        if "manifest" not in doc:
            raise MissingResultError(f"{path} is not tagged with a manifest")
        m = SplitManifest.from_dict(doc["manifest"])
        seen.setdefault(m.name, []).append(str(path.relative_to(root)))
        manifests.append(m)
        results[m.name] = doc["type_f1"]
    dupes = {k: v for k, v in seen.items() if len(v) > 1}
    if dupes:
        raise MissingResultError(f"duplicate manifest names: {dupes}")
    # stand-alone manifests in the tree must each have a result
    for path in sorted(root.rglob("*.manifest.json")):
        m = load_manifest(path)
        if m.name not in results:
            manifests.append(m)
    return learning_curve_rows(manifests, results)


def cmd_learning_curve(args) -> int:
    rows = collect_learning_curve(args.results)
    out = Path(args.out)
    if out.suffix.lower() == ".csv":
        write_bundle(out.parent / f".{out.name}.d", {out.name: csv_bytes(rows, LEARNING_CURVE_COLUMNS)})
        os.replace(out.parent / f".{out.name}.d" / out.name, out)
        os.rmdir(out.parent / f".{out.name}.d")
    else:
        write_bundle(out, {"learning_curve.csv": csv_bytes(rows, LEARNING_CURVE_COLUMNS)})
    return 0


def cmd_synth(args) -> int:
    spec = PerturbationSpec.from_json(_require(args.spec, "--spec")) if args.spec else PerturbationSpec()
    if args.seed is not None:
        spec = PerturbationSpec(spec.drop_prob, spec.spurious_rate, spec.confusion, spec.jitter_px, args.seed)
    ds = _load(args, need_preds=False)
    preds, expectation = perturb(ds, spec)
    files = {
        "predictions.json": dump_native(preds.predictions, ds.image_names),
        "expectation.json": expectation.to_json().encode("utf-8"),
        "spec.json": json_bytes(spec.to_dict()),
        "config.json": json_bytes(
            {
                "command": "synth",
                "truths": _path(args.truths),
                "metadata": _path(args.metadata),
                "labels": _path(args.labels),
                "label_key": args.label_key,
                "spec": spec.to_dict(),
                "version": __version__,
            }
        ),
    }
    write_bundle(args.out, files)
    return 0


# ---------------------------------------------------------------- parser


def _inputs(p: argparse.ArgumentParser, preds: bool = True) -> None:
    p.add_argument("--truths", help="ground truth: VIA export or native JSON")
    if preds:
        p.add_argument("--preds", help="predictions in native JSON")
    p.add_argument("--metadata", help="image metadata CSV")
    p.add_argument("--labels", help="JSON label map for VIA class strings")
    p.add_argument("--label-key", help="region_attributes key holding the class label")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defectmet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("evaluate", help="find/type scores, percent errors, histograms, parity tables")
    _inputs(ev)
    ev.add_argument("--iou", type=float, action="append", help="IoU threshold; repeat for a sweep (first is primary)")
    ev.add_argument("--bin-size-nm", type=float, default=DEFAULT_SIZE_BIN_NM)
    ev.add_argument("--bin-heywood", type=float, default=DEFAULT_HEYWOOD_BIN)
    ev.add_argument("--density-scale", type=float, default=DEFAULT_DENSITY_DISPLAY_SCALE)
    ev.add_argument("--outlier-cutoff", type=float, default=DEFAULT_OUTLIER_CUTOFF_DISPLAY,
                    help="parity outlier view keeps rows with true density below this (display units)")
    ev.add_argument("--type-average", choices=("macro", "micro"), default="macro")
    ev.add_argument("--manifest", help="evaluate only the test images of this split manifest")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("split", help="write train/test split manifests")
    _inputs(sp, preds=False)
    sp.add_argument("--method", choices=("random", "percent", "group"), required=True)
    sp.add_argument("--n-test", type=int)
    sp.add_argument("--fraction", type=float)
    sp.add_argument("--runs", type=int, default=3)
    sp.add_argument("--tag")
    sp.add_argument("--held", action="append", help="held-out tag value (repeatable; default: one manifest per value)")
    sp.add_argument("--train-value", help="restrict training images to this tag value")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_split)

    hd = sub.add_parser("hardening", help="dispersed-barrier hardening per image")
    _inputs(hd)
    hd.add_argument("--constants", help="JSON overriding M, mu_GPa, b_nm, alpha_111, alpha_100, alpha_bd")
    hd.add_argument("--bin-size-nm", type=float, default=DEFAULT_SIZE_BIN_NM)
    hd.add_argument("--assigned-size", choices=("center", "mean"), default="center")
    hd.add_argument("--out", required=True)
    hd.set_defaults(func=cmd_hardening)

    lc = sub.add_parser("learning-curve", help="join manifest-tagged summaries into a learning-curve CSV")
    lc.add_argument("--results", required=True, help="directory of evaluate bundles run with --manifest")
    lc.add_argument("--out", required=True, help="output CSV path, or a directory")
    lc.set_defaults(func=cmd_learning_curve)

    sy = sub.add_parser("synth", help="perturb ground truth into predictions with known error rates")
    _inputs(sy, preds=False)
    sy.add_argument("--spec", help="perturbation spec JSON")
    sy.add_argument("--seed", type=int)
    sy.add_argument("--out", required=True)
    sy.set_defaults(func=cmd_synth)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DefectMetError, OSError, json.JSONDecodeError) as exc:
        return _fail(1, exc)
    except (InvariantViolation, AssertionError) as exc:
        return _fail(2, exc)


if __name__ == "__main__":
    sys.exit(main())
