"""In-memory record types shared by every module."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional

Point = tuple[float, float]
Polygon = tuple[Point, ...]


class DefectClass(str, enum.Enum):
    # values are the short labels used in the native interchange JSON
    BLACK_DOT = "bdot"
    LOOP_111 = "111"
    LOOP_100 = "100"

    @property
    def display(self) -> str:
        return {"bdot": "BlackDot", "111": "Loop111", "100": "Loop100"}[self.value]

    def __str__(self) -> str:
        return self.value


# canonical ordering used in every table
CLASSES: tuple[DefectClass, ...] = (DefectClass.BLACK_DOT, DefectClass.LOOP_111, DefectClass.LOOP_100)


@dataclass(frozen=True)
class DefectInstance:
    defect_class: DefectClass
    polygon: Polygon
    source_image: str
    score: Optional[float] = None

    def canonical_key(self) -> tuple:
        return (CLASSES.index(self.defect_class), self.polygon, -1.0 if self.score is None else self.score)


@dataclass(frozen=True)
class ImageRecord:
    name: str
    width: int
    height: int
    px_to_nm: float
    thickness_nm: float
    group_tags: Mapping[str, str] = field(default_factory=dict)

    @property
    def area_nm2(self) -> float:
        return (self.width * self.px_to_nm) * (self.height * self.px_to_nm)

    @property
    def volume_nm3(self) -> float:
        return self.area_nm2 * self.thickness_nm

    def __hash__(self) -> int:
        return hash((self.name, self.width, self.height, self.px_to_nm, self.thickness_nm))


@dataclass(frozen=True)
class Dataset:
    """Images plus truth and (optionally) predicted instances keyed by image name.

    ``images`` is kept sorted by name; instance lists keep file order.
    """

    images: tuple[ImageRecord, ...]
    truths: Mapping[str, tuple[DefectInstance, ...]]
    predictions: Optional[Mapping[str, tuple[DefectInstance, ...]]] = None

    def __post_init__(self) -> None:
        names = [im.name for im in self.images]
        if len(set(names)) != len(names):
            from .errors import DuplicateImageError

            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DuplicateImageError(f"duplicate image names: {', '.join(dupes)}")
        object.__setattr__(self, "images", tuple(sorted(self.images, key=lambda im: im.name)))
        known = set(names)
        for label, mapping in (("truth", self.truths), ("prediction", self.predictions or {})):
            stray = sorted(set(mapping) - known)
            if stray:
                from .errors import MissingMetadataError

                raise MissingMetadataError(f"{label} entries for unknown images: {', '.join(stray)}")

    @property
    def image_names(self) -> list[str]:
        return [im.name for im in self.images]

    def image(self, name: str) -> ImageRecord:
        for im in self.images:
            if im.name == name:
                return im
        raise KeyError(name)

    def truths_for(self, name: str) -> tuple[DefectInstance, ...]:
        return tuple(self.truths.get(name, ()))

    def preds_for(self, name: str) -> tuple[DefectInstance, ...]:
        if self.predictions is None:
            return ()
        return tuple(self.predictions.get(name, ()))

    def class_counts(self, names=None, *, side: str = "truths") -> dict[DefectClass, int]:
        mapping = self.truths if side == "truths" else (self.predictions or {})
        counts = {c: 0 for c in CLASSES}
        for name in self.image_names if names is None else names:
            for inst in mapping.get(name, ()):
                counts[inst.defect_class] += 1
        return counts

    def subset(self, names) -> "Dataset":
        keep = set(names)
        return Dataset(
            images=tuple(im for im in self.images if im.name in keep),
            truths={k: v for k, v in self.truths.items() if k in keep},
            predictions=None
            if self.predictions is None
            else {k: v for k, v in self.predictions.items() if k in keep},
        )

    def with_predictions(self, predictions: Mapping[str, tuple[DefectInstance, ...]]) -> "Dataset":
        return Dataset(images=self.images, truths=self.truths, predictions=predictions)

    def canonical(self) -> "Dataset":
        """Same content with instances sorted and empty lists filled in for every image."""

        def canon(mapping):
            return {
                im.name: tuple(sorted(mapping.get(im.name, ()), key=DefectInstance.canonical_key))
                for im in self.images
            }

        return Dataset(
            images=self.images,
            truths=canon(self.truths),
            predictions=None if self.predictions is None else canon(self.predictions),
        )
