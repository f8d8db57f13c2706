"""Train/test split manifests: random, leave-out-percent and grouped leave-out.

All randomness comes from :class:`defectmet.rng.SplitMix64`, and images are
always drawn from the name-sorted list, so a seed pins a manifest exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .errors import EmptySideError, InvariantViolation, MissingResultError, ParseError, RangeError, UnknownTagError
from .records import CLASSES, Dataset, DefectClass
from .rng import SplitMix64, derive_seed

Rule = Union[str, Iterable[str], Callable[[str], bool]]


@dataclass(frozen=True)
class SplitManifest:
    name: str
    method: Mapping  # {"kind": "random"} / {"kind": "percent", ...} / {"kind": "group", ...}
    seed: Optional[int]
    train_images: tuple[str, ...]
    test_images: tuple[str, ...]
    train_counts: Mapping[DefectClass, int]
    test_counts: Mapping[DefectClass, int]

    @property
    def kind(self) -> str:
        return self.method["kind"]

    @property
    def n_train_defects(self) -> int:
        return sum(self.train_counts.values())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "method": dict(self.method),
            "seed": self.seed,
            "train": list(self.train_images),
            "test": list(self.test_images),
            "counts": {
                "train": {c.value: self.train_counts[c] for c in CLASSES},
                "test": {c.value: self.test_counts[c] for c in CLASSES},
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitManifest":
        try:
            return cls(
                name=str(d["name"]),
                method=dict(d["method"]),
                seed=d.get("seed"),
                train_images=tuple(d["train"]),
                test_images=tuple(d["test"]),
                train_counts={c: int(d["counts"]["train"][c.value]) for c in CLASSES},
                test_counts={c: int(d["counts"]["test"][c.value]) for c in CLASSES},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed manifest: {exc}") from exc

    def audit(self, dataset: Dataset) -> None:
        """Check the partition and recount defects against ``dataset``."""
        train, test = set(self.train_images), set(self.test_images)
        if train & test:
            raise InvariantViolation(f"{self.name}: images on both sides: {sorted(train & test)}")
        unknown = (train | test) - set(dataset.image_names)
        if unknown:
            raise RangeError(f"{self.name}: images not in dataset: {sorted(unknown)}")
        if dict(dataset.class_counts(self.train_images)) != dict(self.train_counts) or dict(
            dataset.class_counts(self.test_images)
        ) != dict(self.test_counts):
            raise RangeError(f"{self.name}: stored defect counts disagree with the dataset")


def load_manifest(source, dataset: Optional[Dataset] = None) -> SplitManifest:
    from .annotation_io import _load_json

    data, _ = _load_json(source)
    m = SplitManifest.from_dict(data)
    if dataset is not None:
        m.audit(dataset)
    return m


def _manifest(dataset, name, method, seed, test_names, train_names=None) -> SplitManifest:
    test = sorted(test_names)
    if train_names is None:
        held = set(test)
        train = [n for n in dataset.image_names if n not in held]
    else:
        train = sorted(train_names)
    m = SplitManifest(
        name=name,
        method=method,
        seed=seed,
        train_images=tuple(train),
        test_images=tuple(test),
        train_counts=dataset.class_counts(train),
        test_counts=dataset.class_counts(test),
    )
    if set(m.train_images) & set(m.test_images):
        raise InvariantViolation(f"{name}: train and test overlap")
    if train_names is None and len(train) + len(test) != len(dataset.images):
        raise InvariantViolation(f"{name}: split does not cover the dataset")
    return m


def random_split(dataset: Dataset, n_test_images: int, seed: int, name: Optional[str] = None) -> SplitManifest:
    """Hold out ``n_test_images`` images drawn uniformly without replacement."""
    n = len(dataset.images)
    if not 0 < n_test_images < n:
        raise RangeError(f"n_test must satisfy 0 < n_test < {n}, got {n_test_images}")
    test = SplitMix64(seed).sample(dataset.image_names, n_test_images)
    return _manifest(
        dataset, name or f"random_n{n_test_images}_s{seed}", {"kind": "random", "n_test": n_test_images}, seed, test
    )


def percent_test_size(n_images: int, leave_out_fraction: float) -> int:
    """Test-set size for a leave-out fraction.

    The train size is ``(1 - f) * n`` rounded half up; the test set gets the
    rest.  This is what makes 182 images split 137/45 at f=0.25 and 46/136 at
    f=0.75.  The fraction is taken at its decimal value so 0.1 means 1/10.
    """
    f = Fraction(repr(float(leave_out_fraction)))
    train = int((1 - f) * n_images + Fraction(1, 2))
    return n_images - train


def percent_splits(
    dataset: Dataset, leave_out_fraction: float, n_runs: int, seed: int
) -> list[SplitManifest]:
    if not 0.0 < leave_out_fraction < 1.0:
        raise RangeError(f"leave-out fraction must lie in (0, 1), got {leave_out_fraction}")
    if n_runs < 1:
        raise RangeError(f"n_runs must be >= 1, got {n_runs}")
    n = len(dataset.images)
    n_test = percent_test_size(n, leave_out_fraction)
    if not 0 < n_test < n:
        raise RangeError(f"fraction {leave_out_fraction} of {n} images leaves an empty side")
    pct = f"{leave_out_fraction * 100:g}"
    out = []
    for run in range(1, n_runs + 1):
        run_seed = derive_seed(seed, run)
        test = SplitMix64(run_seed).sample(dataset.image_names, n_test)
        out.append(
            _manifest(
                dataset,
                f"percent{pct}_run{run}",
                {"kind": "percent", "fraction": float(leave_out_fraction), "run": run, "base_seed": seed},
                run_seed,
                test,
            )
        )
    return out


def _rule_fn(rule: Rule) -> Callable[[str], bool]:
    if callable(rule):
        return rule
    if isinstance(rule, str):
        return lambda v: v == rule
    values = set(rule)
    return lambda v: v in values


def _rule_label(rule: Rule) -> str:
    if isinstance(rule, str):
        return rule
    if callable(rule):
        return getattr(rule, "__name__", "rule")
    return "+".join(sorted(rule))


def group_split(
    dataset: Dataset,
    tag_key: str,
    held_out_rule: Rule,
    train_rule: Optional[Rule] = None,
    name: Optional[str] = None,
) -> SplitManifest:
    """Hold out images whose ``tag_key`` value matches ``held_out_rule``.

    Rules are a tag value, a collection of values, or a predicate.  Without
    ``train_rule`` the train set is every other image; with it, only images
    matching ``train_rule`` (and not held out) are trained on.
    """
    lacking = [im.name for im in dataset.images if tag_key not in im.group_tags]
    if lacking:
        raise UnknownTagError(f"images without tag {tag_key!r}: {lacking[:5]}{' ...' if len(lacking) > 5 else ''}")
    held = _rule_fn(held_out_rule)
    test = [im.name for im in dataset.images if held(im.group_tags[tag_key])]
    train = None
    if train_rule is not None:
        tr = _rule_fn(train_rule)
        train = [im.name for im in dataset.images if tr(im.group_tags[tag_key]) and im.name not in set(test)]
    n_train = len(train) if train is not None else len(dataset.images) - len(test)
    if not test or not n_train:
        raise EmptySideError(
            f"leave-out {tag_key}={_rule_label(held_out_rule)!r} gives {n_train} train / {len(test)} test images"
        )
    method = {"kind": "group", "tag_key": tag_key, "held_value": _rule_label(held_out_rule)}
    if train_rule is not None:
        method["train_value"] = _rule_label(train_rule)
    return _manifest(dataset, name or f"group_{tag_key}_{_rule_label(held_out_rule)}", method, None, test, train)


def group_values(dataset: Dataset, tag_key: str) -> list[str]:
    lacking = [im.name for im in dataset.images if tag_key not in im.group_tags]
    if lacking:
        raise UnknownTagError(f"images without tag {tag_key!r}: {lacking[:5]}")
    return sorted({im.group_tags[tag_key] for im in dataset.images})


# ---------------------------------------------------------------- learning curves

LEARNING_CURVE_COLUMNS = (
    "n_train_defects",
    "manifest",
    "kind",
    "n_train_bdot",
    "n_train_111",
    "n_train_100",
    "f1_bdot",
    "f1_111",
    "f1_100",
    "f1_overall",
)


def learning_curve_rows(manifests: Sequence[SplitManifest], results: Mapping[str, Mapping]) -> list[dict]:
    """Join manifest train counts with evaluated type F1 scores.

    ``results`` maps manifest name to ``{"bdot": f1, "111": f1, "100": f1,
    "overall": f1}``.  Rows sort by training defect count, then name.
    """
    names = [m.name for m in manifests]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise MissingResultError(f"duplicate manifest names: {dupes}")
    absent = sorted(set(names) ^ set(results))
    if absent:
        raise MissingResultError(f"manifest/result pairs incomplete for: {absent}")
    rows = []
    for m in manifests:
        r = results[m.name]
        try:
            rows.append(
                {
                    "n_train_defects": m.n_train_defects,
                    "manifest": m.name,
                    "kind": m.kind,
                    **{f"n_train_{c.value}": m.train_counts[c] for c in CLASSES},
                    **{f"f1_{c.value}": float(r[c.value]) for c in CLASSES},
                    "f1_overall": float(r["overall"]),
                }
            )
        except KeyError as exc:
            raise MissingResultError(f"result for {m.name} lacks {exc}") from None
    rows.sort(key=lambda row: (row["n_train_defects"], row["manifest"]))
    return rows


def learning_curve_csv(rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(LEARNING_CURVE_COLUMNS), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
