"""Readers and writers for annotation, prediction and image-metadata files.

Three inputs are understood:

* VGG Image Annotator (VIA) JSON, either the plain annotation export (a map
  of ``filename+size`` keys to image entries) or a full project export with
  ``_via_img_metadata``.  Only polygon regions are accepted.
* The native interchange JSON::

      {"images": [{"name": str,
                   "instances": [{"class": "bdot"|"111"|"100",
                                  "polygon": [[x, y], ...],
                                  "score": number|null}]}]}

* A metadata CSV with header
  ``name,width,height,px_to_nm,thickness_nm,alloy,irradiation,microscope_sample``.
  ``name`` may be a glob (``map*_70kx``) covering several images; a
  thickness of ``unreported`` means 100 nm.

Sources may be paths, bytes, text, or binary/text file objects.
"""

from __future__ import annotations

import csv
import fnmatch
import io
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .errors import DegenerateGeometryError, DuplicateImageError, MissingMetadataError, ParseError, RangeError
from .geometry import drop_repeated_vertices, is_self_intersecting, polygon_area
from .records import CLASSES, Dataset, DefectClass, DefectInstance, ImageRecord

log = logging.getLogger(__name__)

DEFAULT_LABEL_MAP: dict[str, DefectClass] = {
    "111": DefectClass.LOOP_111,
    "100": DefectClass.LOOP_100,
    "bdot": DefectClass.BLACK_DOT,
    "black dot": DefectClass.BLACK_DOT,
}

# region_attributes keys tried, in order, when no explicit label key is given
LABEL_KEYS = ("class", "type", "label", "defect", "defect_type", "name")

METADATA_COLUMNS = ("name", "width", "height", "px_to_nm", "thickness_nm", "alloy", "irradiation", "microscope_sample")
TAG_COLUMNS = ("alloy", "irradiation", "microscope_sample")
UNREPORTED = {"unreported", "not reported", "100 (not reported)"}
DEFAULT_THICKNESS_NM = 100.0


# ---------------------------------------------------------------- helpers


def _read_bytes(source) -> tuple[bytes, str]:
    """Return raw bytes and a display name for any supported source."""
    if isinstance(source, (bytes, bytearray)):
        return bytes(source), "<bytes>"
    if isinstance(source, (str, os.PathLike)) and not (isinstance(source, str) and source.lstrip().startswith(("{", "["))):
        path = Path(source)
        return path.read_bytes(), str(path)
    if isinstance(source, str):
        return source.encode("utf-8"), "<string>"
    data = source.read()
    name = getattr(source, "name", "<stream>")
    return (data.encode("utf-8") if isinstance(data, str) else data), str(name)


def _load_json(source) -> tuple[Any, str]:
    raw, name = _read_bytes(source)
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise ParseError("file is not valid UTF-8", offset=exc.start, source=name) from exc
    try:
        return json.loads(text), name
    except json.JSONDecodeError as exc:
        bom = 3 if raw.startswith(b"\xef\xbb\xbf") else 0
        offset = bom + len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON: {exc.msg}", offset=offset, source=name) from exc


def load_label_map(source) -> dict[str, DefectClass]:
    """Read a JSON object mapping annotation strings to class names.

    Values may be native labels (``"bdot"``) or display names (``"BlackDot"``).
    """
    data, name = _load_json(source)
    if not isinstance(data, dict):
        raise ParseError("label map must be a JSON object", source=name)
    out: dict[str, DefectClass] = {}
    for key, value in data.items():
        out[str(key).strip().lower()] = _class_from_name(str(value), name)
    return out


def _class_from_name(value: str, source: str = "") -> DefectClass:
    for c in CLASSES:
        if value == c.value or value.lower() == c.display.lower():
            return c
    raise ParseError(f"unknown defect class {value!r}", source=source or None)


class Registry:
    """Name lookup over image records, tolerant of file extensions."""

    def __init__(self, records: Iterable[ImageRecord]):
        self.records: dict[str, ImageRecord] = {}
        for rec in records:
            if rec.name in self.records:
                raise DuplicateImageError(f"duplicate image name {rec.name!r}")
            self.records[rec.name] = rec

    def resolve(self, name: str) -> ImageRecord:
        if name in self.records:
            return self.records[name]
        base = os.path.basename(name)
        for candidate in (base, os.path.splitext(base)[0]):
            if candidate in self.records:
                return self.records[candidate]
        raise MissingMetadataError(f"no metadata for image {name!r}")


def _clean_polygon(points, image: ImageRecord, where: str) -> tuple[tuple[float, float], ...]:
    pts = []
    for p in points:
        try:
            x, y = float(p[0]), float(p[1])
        except (TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"{where}: bad vertex {p!r}") from exc
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError(f"{where}: non-finite vertex {p!r}")
        cx = min(max(x, 0.0), float(image.width))
        cy = min(max(y, 0.0), float(image.height))
        if (cx, cy) != (x, y):
            log.warning("%s: vertex (%g, %g) clamped to image bounds", where, x, y)
        pts.append((cx, cy))
    poly = drop_repeated_vertices(pts)
    if len(poly) < 3:
        raise ParseError(f"{where}: polygon has fewer than 3 distinct vertices")
    if is_self_intersecting(poly):
        raise ParseError(f"{where}: polygon is self-intersecting")
    try:
        if polygon_area(poly) <= 0:
            raise ParseError(f"{where}: polygon has zero area")
    except DegenerateGeometryError as exc:
        raise ParseError(f"{where}: {exc}") from exc
    return tuple(poly)


def _group(records: Registry, pairs: Iterable[tuple[ImageRecord, list[DefectInstance]]]):
    grouped: dict[str, list[DefectInstance]] = {}
    for rec, insts in pairs:
        if rec.name in grouped:
            raise DuplicateImageError(f"image {rec.name!r} appears twice in the annotation file")
        grouped[rec.name] = insts
    return {k: tuple(v) for k, v in sorted(grouped.items())}


# ---------------------------------------------------------------- VIA


def _via_entries(data: Any, name: str) -> list[dict]:
    if isinstance(data, dict) and "_via_img_metadata" in data:
        data = data["_via_img_metadata"]
    if not isinstance(data, dict):
        raise ParseError("VIA export must be a JSON object", source=name)
    entries = []
    for key, entry in data.items():
        if not isinstance(entry, dict) or "filename" not in entry:
            raise ParseError(f"entry {key!r} has no filename", source=name)
        entries.append(entry)
    return entries


def _via_label(attrs: Any, label_key: Optional[str], where: str) -> str:
    if not isinstance(attrs, dict):
        raise ParseError(f"{where}: region_attributes must be an object")
    if label_key is not None:
        if label_key not in attrs:
            raise ParseError(f"{where}: region_attributes lacks key {label_key!r}")
        value = attrs[label_key]
    else:
        keys = [k for k in LABEL_KEYS if k in attrs]
        if keys:
            value = attrs[keys[0]]
        elif len(attrs) == 1:
            value = next(iter(attrs.values()))
        else:
            raise ParseError(f"{where}: cannot tell which region attribute holds the class: {sorted(attrs)}")
    if isinstance(value, dict):
        # checkbox-style attributes: {"111": true}
        picked = [k for k, on in value.items() if on]
        if len(picked) != 1:
            raise ParseError(f"{where}: expected exactly one checked class, got {picked}")
        value = picked[0]
    return str(value)


def parse_vgg_annotations(
    source,
    registry: Sequence[ImageRecord],
    *,
    label_map: Optional[Mapping[str, DefectClass]] = None,
    label_key: Optional[str] = None,
) -> Dataset:
    """Parse a VIA JSON export into truth instances grouped by image.

    Images listed in ``registry`` but absent from the file get no entry; an
    image present in the file with zero regions maps to an empty tuple.
    """
    data, name = _load_json(source)
    lmap = {k.lower(): v for k, v in (label_map or DEFAULT_LABEL_MAP).items()}
    reg = Registry(registry)
    pairs = []
    for entry in _via_entries(data, name):
        rec = reg.resolve(entry["filename"])
        regions = entry.get("regions") or []
        if isinstance(regions, dict):  # VIA 1.x keyed regions
            regions = [regions[k] for k in sorted(regions, key=lambda s: int(s) if str(s).isdigit() else s)]
        insts = []
        for i, region in enumerate(regions):
            where = f"{name}: {entry['filename']} region {i}"
            shape = region.get("shape_attributes") or {}
            if shape.get("name") != "polygon":
                raise ParseError(f"{where}: shape {shape.get('name')!r} is not a polygon")
            xs, ys = shape.get("all_points_x"), shape.get("all_points_y")
            if not isinstance(xs, list) or not isinstance(ys, list) or len(xs) != len(ys):
                raise ParseError(f"{where}: all_points_x / all_points_y missing or of unequal length")
            label = _via_label(region.get("region_attributes", {}), label_key, where)
            cls = lmap.get(label.strip().lower())
            if cls is None:
                raise ParseError(f"{where}: unknown class label {label!r}")
            poly = _clean_polygon(zip(xs, ys), rec, where)
            insts.append(DefectInstance(cls, poly, rec.name, None))
        pairs.append((rec, insts))
    truths = _group(reg, pairs)
    return Dataset(images=tuple(reg.records.values()), truths=truths)


# ---------------------------------------------------------------- native JSON


def _parse_native_mapping(source, registry: Sequence[ImageRecord], *, require_score: bool):
    data, name = _load_json(source)
    if not isinstance(data, dict) or not isinstance(data.get("images"), list):
        raise ParseError('native file must be an object with an "images" list', source=name)
    reg = Registry(registry)
    pairs = []
    for k, img in enumerate(data["images"]):
        if not isinstance(img, dict) or "name" not in img:
            raise ParseError(f"images[{k}] has no name", source=name)
        rec = reg.resolve(str(img["name"]))
        insts = []
        for i, obj in enumerate(img.get("instances") or []):
            where = f"{name}: {img['name']} instance {i}"
            if not isinstance(obj, dict):
                raise ParseError(f"{where}: instance must be an object")
            label = obj.get("class")
            try:
                cls = DefectClass(str(label))
            except ValueError:
                raise ParseError(f"{where}: unknown class label {label!r}") from None
            score = obj.get("score")
            if score is None:
                if require_score:
                    raise ParseError(f"{where}: prediction has no score")
            else:
                if isinstance(score, bool) or not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
                    raise ParseError(f"{where}: score {score!r} outside [0, 1]")
                score = float(score)
            poly = obj.get("polygon")
            if not isinstance(poly, list):
                raise ParseError(f"{where}: polygon must be a list of [x, y] pairs")
            insts.append(DefectInstance(cls, _clean_polygon(poly, rec, where), rec.name, score))
        pairs.append((rec, insts))
    return reg, _group(reg, pairs)


def parse_native(source, registry: Sequence[ImageRecord]) -> Dataset:
    """Parse native JSON as ground truth (scores optional)."""
    reg, truths = _parse_native_mapping(source, registry, require_score=False)
    return Dataset(images=tuple(reg.records.values()), truths=truths)


def parse_predictions(source, registry: Sequence[ImageRecord]) -> Dataset:
    """Parse native JSON as predictions; every instance needs a score in [0, 1]."""
    reg, preds = _parse_native_mapping(source, registry, require_score=True)
    return Dataset(images=tuple(reg.records.values()), truths={}, predictions=preds)


def parse_truths(source, registry: Sequence[ImageRecord], **via_options) -> Dataset:
    """Parse truths from either a VIA export or native JSON, by content."""
    data, _ = _load_json(source)
    if isinstance(data, dict) and isinstance(data.get("images"), list):
        return parse_native(json.dumps(data), registry)
    return parse_vgg_annotations(json.dumps(data), registry, **via_options)


def dump_native(instances: Mapping[str, Sequence[DefectInstance]], image_names: Optional[Iterable[str]] = None) -> bytes:
    """Serialise instances to native JSON bytes (images in name order)."""
    names = sorted(instances) if image_names is None else sorted(image_names)
    doc = {
        "images": [
            {
                "name": n,
                "instances": [
                    {
                        "class": inst.defect_class.value,
                        "polygon": [[x, y] for x, y in inst.polygon],
                        "score": inst.score,
                    }
                    for inst in instances.get(n, ())
                ],
            }
            for n in names
        ]
    }
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def image_names_in(source) -> list[str]:
    """Image names referenced by a VIA or native JSON file (for glob expansion)."""
    data, _ = _load_json(source)
    if isinstance(data, dict) and isinstance(data.get("images"), list):
        return [str(img.get("name")) for img in data["images"] if isinstance(img, dict)]
    return [os.path.splitext(os.path.basename(str(e["filename"])))[0] for e in _via_entries(data, "")]


# ---------------------------------------------------------------- metadata CSV


def _is_pattern(name: str) -> bool:
    return any(ch in name for ch in "*?[")


def _positive(row: dict, key: str, where: str, cast=float):
    raw = (row.get(key) or "").strip()
    try:
        value = cast(raw)
    except ValueError:
        try:
            value = cast(float(raw))
        except ValueError:
            raise ParseError(f"{where}: {key}={raw!r} is not a number") from None
    if not (value > 0 and math.isfinite(value)):
        raise RangeError(f"{where}: {key} must be positive, got {raw!r}")
    return value


def parse_metadata(source, image_names: Optional[Iterable[str]] = None) -> list[ImageRecord]:
    """Read the metadata CSV into one record per concrete image.

    Glob rows are expanded against ``image_names``; literal rows win over
    globs, and a name claimed by two glob rows is rejected as ambiguous.
    Without ``image_names`` glob rows cannot be expanded and are skipped.
    """
    raw, src = _read_bytes(source)
    text = raw.decode("utf-8-sig")
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in METADATA_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ParseError(f"metadata header lacks columns {missing}", source=src)
    literal: dict[str, ImageRecord] = {}
    patterns: list[tuple[str, dict, str]] = []
    for lineno, row in enumerate(reader, start=2):
        where = f"{src}: line {lineno}"
        name = (row.get("name") or "").strip()
        if not name:
            raise ParseError(f"{where}: empty name")
        if _is_pattern(name):
            patterns.append((name, row, where))
            continue
        if name in literal:
            raise DuplicateImageError(f"{where}: duplicate image name {name!r}")
        literal[name] = _record(name, row, where)
    out = dict(literal)
    if patterns:
        if image_names is None:
            log.warning("%s: %d glob rows skipped (no image names to expand against)", src, len(patterns))
        else:
            for concrete in sorted(set(image_names)):
                if concrete in literal:
                    continue
                hits = [(p, row, where) for p, row, where in patterns if fnmatch.fnmatchcase(concrete, p)]
                if len(hits) > 1:
                    raise DuplicateImageError(
                        f"image {concrete!r} matches several metadata rows: {[h[0] for h in hits]}"
                    )
                if hits:
                    _, row, where = hits[0]
                    out[concrete] = _record(concrete, row, where)
    return [out[k] for k in sorted(out)]


def _record(name: str, row: dict, where: str) -> ImageRecord:
    thick_raw = (row.get("thickness_nm") or "").strip()
    if thick_raw.lower() in UNREPORTED:
        thickness = DEFAULT_THICKNESS_NM
    else:
        thickness = _positive(row, "thickness_nm", where)
    tags = {k: (row.get(k) or "").strip() for k in TAG_COLUMNS}
    for k, v in row.items():
        if k and k not in METADATA_COLUMNS:
            tags[k] = (v or "").strip()
    return ImageRecord(
        name=name,
        width=_positive(row, "width", where, int),
        height=_positive(row, "height", where, int),
        px_to_nm=_positive(row, "px_to_nm", where),
        thickness_nm=thickness,
        group_tags=tags,
    )


def dump_metadata(records: Iterable[ImageRecord]) -> str:
    recs = sorted(records, key=lambda r: r.name)
    extra = sorted({k for r in recs for k in r.group_tags if k not in TAG_COLUMNS})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(METADATA_COLUMNS) + extra)
    for r in recs:
        w.writerow(
            [r.name, r.width, r.height, repr(r.px_to_nm), repr(r.thickness_nm)]
            + [r.group_tags.get(k, "") for k in TAG_COLUMNS]
            + [r.group_tags.get(k, "") for k in extra]
        )
    return buf.getvalue()
