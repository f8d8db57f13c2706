"""Dispersed-barrier hardening from per-image defect populations.

Each (class, size bin) population contributes

    delta_sigma = M * alpha[class] * mu * b * sqrt(rho * d)

with ``rho`` the bin count per image volume (nm⁻³) and ``d`` the bin's
assigned size (nm).  With ``mu`` in MPa and ``b``, ``d`` in nm the result is
in MPa.  Contributions are combined linearly and in quadrature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .errors import MismatchedImageSetError, ParseError, RangeError
from .geometry import defect_geometry
from .metrology import DEFAULT_SIZE_BIN_NM, bin_index
from .records import CLASSES, Dataset, DefectClass, DefectInstance, ImageRecord

# JSON field names follow the usual table of DBH constants
CONSTANT_FIELDS = ("M", "mu_GPa", "b_nm", "alpha_111", "alpha_100", "alpha_bd")
_ALPHA_FIELD = {DefectClass.LOOP_111: "alpha_111", DefectClass.LOOP_100: "alpha_100", DefectClass.BLACK_DOT: "alpha_bd"}


@dataclass(frozen=True)
class HardeningConstants:
    taylor_M: float = 3.06
    shear_mu_MPa: float = 82_000.0
    burgers_b_nm: float = 0.249
    alpha: Mapping[DefectClass, float] = field(
        default_factory=lambda: {DefectClass.LOOP_111: 0.11, DefectClass.LOOP_100: 0.32, DefectClass.BLACK_DOT: 0.10}
    )

    def __post_init__(self) -> None:
        for name in ("taylor_M", "shear_mu_MPa", "burgers_b_nm"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise RangeError(f"{name} must be positive, got {v!r}")
        missing = [c.value for c in CLASSES if c not in self.alpha]
        if missing:
            raise RangeError(f"alpha missing for classes {missing}")
        for c in CLASSES:
            a = self.alpha[c]
            if not (isinstance(a, (int, float)) and math.isfinite(a) and a > 0):
                raise RangeError(f"alpha for {c.value} must be positive, got {a!r}")

    def to_dict(self) -> dict:
        d = {"M": self.taylor_M, "mu_GPa": self.shear_mu_MPa / 1000.0, "b_nm": self.burgers_b_nm}
        d.update({_ALPHA_FIELD[c]: self.alpha[c] for c in CLASSES})
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "HardeningConstants":
        unknown = sorted(set(d) - set(CONSTANT_FIELDS) - {"mu_MPa"})
        if unknown:
            raise ParseError(f"unknown hardening constant(s): {unknown}")
        base = cls()
        if "mu_GPa" in d and "mu_MPa" in d:
            raise ParseError("give either mu_GPa or mu_MPa, not both")
        mu = base.shear_mu_MPa
        if "mu_GPa" in d:
            mu = _num(d["mu_GPa"], "mu_GPa") * 1000.0
        elif "mu_MPa" in d:
            mu = _num(d["mu_MPa"], "mu_MPa")
        alpha = dict(base.alpha)
        for c, key in _ALPHA_FIELD.items():
            if key in d:
                alpha[c] = _num(d[key], key)
        return cls(
            taylor_M=_num(d.get("M", base.taylor_M), "M"),
            shear_mu_MPa=mu,
            burgers_b_nm=_num(d.get("b_nm", base.burgers_b_nm), "b_nm"),
            alpha=alpha,
        )

    @classmethod
    def from_json(cls, source) -> "HardeningConstants":
        from .annotation_io import _load_json

        data, name = _load_json(source)
        if not isinstance(data, dict):
            raise ParseError("constants file must be a JSON object", source=name)
        return cls.from_dict(data)


def _num(v, key: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{key} must be a number, got {v!r}")
    return float(v)


def volume_density(count: int, image: ImageRecord) -> float:
    """Defects per nm³: count over imaged area times foil thickness."""
    if image.width <= 0 or image.height <= 0 or image.px_to_nm <= 0 or image.thickness_nm <= 0:
        raise RangeError(f"image {image.name!r} has nonpositive dimensions, scale or thickness")
    if count < 0:
        raise RangeError("count must be >= 0")
    return count / (image.width * image.px_to_nm * image.height * image.px_to_nm * image.thickness_nm)


def dbh_term(constants: HardeningConstants, defect_class: DefectClass, rho_per_nm3: float, d_nm: float) -> float:
    if rho_per_nm3 < 0:
        raise RangeError(f"density must be >= 0, got {rho_per_nm3}")
    if not d_nm > 0:
        raise RangeError(f"size must be positive, got {d_nm}")
    return (
        constants.taylor_M
        * constants.alpha[defect_class]
        * constants.shear_mu_MPa
        * constants.burgers_b_nm
        * math.sqrt(rho_per_nm3 * d_nm)
    )


@dataclass(frozen=True)
class HardeningTerm:
    defect_class: DefectClass
    bin_center_nm: float
    assigned_size_nm: float
    count: int
    rho_per_nm3: float
    delta_sigma_MPa: float


@dataclass(frozen=True)
class HardeningResult:
    image_name: str
    terms: tuple[HardeningTerm, ...]
    total_linear_MPa: float
    total_quadrature_MPa: float

    def total(self, mode: str) -> float:
        if mode == "linear":
            return self.total_linear_MPa
        if mode == "quadrature":
            return self.total_quadrature_MPa
        raise ValueError(f"unknown summation mode {mode!r}")

    def to_dict(self) -> dict:
        return {
            "image": self.image_name,
            "total_linear_MPa": self.total_linear_MPa,
            "total_quadrature_MPa": self.total_quadrature_MPa,
            "terms": [
                {
                    "class": t.defect_class.value,
                    "bin_center_nm": t.bin_center_nm,
                    "assigned_size_nm": t.assigned_size_nm,
                    "count": t.count,
                    "rho_per_nm3": t.rho_per_nm3,
                    "delta_sigma_MPa": t.delta_sigma_MPa,
                }
                for t in self.terms
            ],
        }


def image_hardening(
    instances: Sequence[DefectInstance],
    image: ImageRecord,
    constants: Optional[HardeningConstants] = None,
    size_bin_width_nm: float = DEFAULT_SIZE_BIN_NM,
    *,
    assigned_size: str = "center",
) -> HardeningResult:
    """Hardening of one image from its size-binned defect populations.

    ``assigned_size`` picks the ``d`` used for a bin: ``"center"`` (default)
    or ``"mean"`` (mean size of the defects in the bin).
    """
    constants = constants or HardeningConstants()
    if not size_bin_width_nm > 0:
        raise RangeError(f"bin width must be positive, got {size_bin_width_nm}")
    if assigned_size not in ("center", "mean"):
        raise ValueError(f"unknown assigned_size {assigned_size!r}")
    bins: dict[tuple[int, int], list[float]] = {}
    for inst in instances:
        size = defect_geometry(inst, image).size_nm
        key = (CLASSES.index(inst.defect_class), bin_index(size, size_bin_width_nm))
        bins.setdefault(key, []).append(size)
    terms = []
    for (ci, k) in sorted(bins):
        sizes = bins[(ci, k)]
        cls = CLASSES[ci]
        center = (k + 0.5) * size_bin_width_nm
        d = center if assigned_size == "center" else math.fsum(sizes) / len(sizes)
        rho = volume_density(len(sizes), image)
        terms.append(HardeningTerm(cls, center, d, len(sizes), rho, dbh_term(constants, cls, rho, d)))
    contrib = [t.delta_sigma_MPa for t in terms]
    return HardeningResult(
        image_name=image.name,
        terms=tuple(terms),
        total_linear_MPa=math.fsum(contrib),
        total_quadrature_MPa=math.sqrt(math.fsum(c * c for c in contrib)),
    )


def dataset_hardening(
    dataset: Dataset,
    constants: Optional[HardeningConstants] = None,
    size_bin_width_nm: float = DEFAULT_SIZE_BIN_NM,
    *,
    side: str = "truths",
    assigned_size: str = "center",
) -> dict[str, HardeningResult]:
    get = dataset.truths_for if side == "truths" else dataset.preds_for
    return {
        im.name: image_hardening(get(im.name), im, constants, size_bin_width_nm, assigned_size=assigned_size)
        for im in dataset.images
    }


@dataclass(frozen=True)
class HardeningError:
    mode: str
    n_images: int
    mae_MPa: Optional[float]
    mape_pct: Optional[float]
    n_zero_baseline: int = 0


def hardening_error(
    truth_results: Mapping[str, HardeningResult], pred_results: Mapping[str, HardeningResult]
) -> dict[str, HardeningError]:
    """MAE and mean absolute percent error of per-image totals, per summation mode.

    Images whose true hardening is zero enter the MAE but not the MAPE.
    """
    if set(truth_results) != set(pred_results):
        only_t = sorted(set(truth_results) - set(pred_results))
        only_p = sorted(set(pred_results) - set(truth_results))
        raise MismatchedImageSetError(f"image sets differ: truth-only {only_t}, prediction-only {only_p}")
    out = {}
    names = sorted(truth_results)
    for mode in ("linear", "quadrature"):
        abs_err = []
        pct = []
        zero = 0
        for n in names:
            t, p = truth_results[n].total(mode), pred_results[n].total(mode)
            abs_err.append(abs(p - t))
            if t > 0:
                pct.append(100.0 * abs(p - t) / t)
            else:
                zero += 1
        out[mode] = HardeningError(
            mode=mode,
            n_images=len(names),
            mae_MPa=math.fsum(abs_err) / len(abs_err) if abs_err else None,
            mape_pct=math.fsum(pct) / len(pct) if pct else None,
            n_zero_baseline=zero,
        )
    return out


def constants_json(constants: HardeningConstants) -> str:
    return json.dumps(constants.to_dict(), indent=1, sort_keys=True)
