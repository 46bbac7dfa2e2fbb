"""SCORE2 ten-year risk from a coefficient config.

The linear predictor is a sum of ``coefficient * (value - center) / scale``
terms, optionally multiplied by the transformed value of an interaction
variable (age in SCORE2).  Risk is ``1 - S0 ** exp(lp)`` followed by the
log-log recalibration ``1 - exp(-exp(scale1 + scale2 * ln(-ln(1 - risk))))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

import numpy as np

from .cohort import SEXES, AssessmentRecord, score2_eligible
from .errors import IncompleteInputError, InvalidInputError, SaturationError

DEFAULT_THRESHOLD = 0.08

EXPECTED_UNITS = {
    "age": "years",
    "sbp": "mmHg",
    "total_chol": "mmol/L",
    "hdl_chol": "mmol/L",
    "smoker": "boolean",
}


@dataclass(frozen=True)
class Score2Term:
    variable: str
    center: float
    scale: float
    coefficient: float
    interaction: str | None = None

    @property
    def key(self) -> tuple:
        return (self.variable, self.interaction)


@dataclass(frozen=True)
class Calibration:
    scale1: float = 0.0
    scale2: float = 1.0


@dataclass(frozen=True)
class Score2Coefficients:
    terms: Mapping[str, tuple]
    baseline_survival: Mapping[str, float]
    calibration: Mapping[str, Calibration]
    units: Mapping[str, str] = field(default_factory=dict)
    provenance: str = ""
    name: str = ""

    def __post_init__(self):
        for sex, s0 in self.baseline_survival.items():
            if not (0.0 < s0 < 1.0):
                raise InvalidInputError(f"baseline_survival_10y for {sex} must lie in (0, 1)")
        for sex, terms in self.terms.items():
            keys = [t.key for t in terms]
            if len(set(keys)) != len(keys):
                raise InvalidInputError(f"duplicate SCORE2 term for {sex}")
            mains = {t.variable for t in terms if t.interaction is None}
            for t in terms:
                if t.scale == 0:
                    raise InvalidInputError(f"term {t.variable!r} has zero scale")
                if t.interaction is not None and t.interaction not in mains:
                    raise InvalidInputError(
                        f"interaction with {t.interaction!r} needs a main term for it ({sex})")
        used = {t.variable for terms in self.terms.values() for t in terms}
        for var in used:
            declared = self.units.get(var)
            expected = EXPECTED_UNITS.get(var)
            if expected is None:
                raise InvalidInputError(f"unsupported SCORE2 variable {var!r}")
            if declared != expected:
                raise InvalidInputError(f"{var}: config unit {declared!r}, expected {expected!r}")

    def _per_sex(self, table: Mapping, sex: str | None):
        if sex is None:
            values = list(table.values())
            if all(v == values[0] for v in values):
                return values[0]
            raise InvalidInputError("sex-specific constants require the participant's sex")
        if sex not in table:
            raise InvalidInputError(f"no constants for sex {sex!r}")
        return table[sex]

    def s0(self, sex: str | None = None) -> float:
        return self._per_sex(self.baseline_survival, sex)

    def calib(self, sex: str | None = None) -> Calibration:
        return self._per_sex(self.calibration, sex)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Score2Coefficients":
        try:
            terms = {
                sex: tuple(Score2Term(str(t["variable"]), float(t["center"]), float(t["scale"]),
                                      float(t["coefficient"]), t.get("interaction"))
                           for t in rows)
                for sex, rows in doc["sex"].items()
            }
            s0 = doc["baseline_survival_10y"]
            cal = doc["calibration"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed SCORE2 config: {exc}") from None
        if not isinstance(s0, Mapping):
            s0 = {sex: s0 for sex in terms}
        if "scale1" in cal:
            cal = {sex: cal for sex in terms}
        return cls(
            terms=terms,
            baseline_survival={k: float(v) for k, v in s0.items()},
            calibration={k: Calibration(float(v["scale1"]), float(v["scale2"])) for k, v in cal.items()},
            units=dict(doc.get("units", {})),
            provenance=str(doc.get("provenance", "")),
            name=str(doc.get("name", "")),
        )


def load_coefficients(path=None) -> Score2Coefficients:
    """Load a coefficient config; ``None`` selects the bundled demo set."""
    if path is None:
        text = resources.files("vdrisk").joinpath("data/score2_demo.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"SCORE2 config is not valid JSON: {exc}") from None
    return Score2Coefficients.from_dict(doc)


def _value(source, variable: str):
    if isinstance(source, AssessmentRecord):
        v = getattr(source, variable, None)
    else:
        v = source.get(variable)
    if v is None or (isinstance(v, float) and math.isnan(v)):
        raise IncompleteInputError(variable)
    return float(v)


def linear_predictor(record, coeffs: Score2Coefficients, check_eligible: bool = True) -> float:
    """SCORE2 linear predictor for one participant.

    ``record`` is an :class:`AssessmentRecord` or a mapping with ``sex`` and
    the configured variables.
    """
    sex = record.sex if isinstance(record, AssessmentRecord) else record.get("sex")
    if sex not in coeffs.terms:
        raise InvalidInputError(f"no SCORE2 terms for sex {sex!r}")
    if check_eligible and isinstance(record, AssessmentRecord):
        if not score2_eligible(record.age, record.prior_cvd, record.diabetes):
            raise InvalidInputError(f"{record.participant_id} is not SCORE2-eligible")
    terms = coeffs.terms[sex]
    transformed = {}
    for t in terms:
        if t.interaction is None:
            transformed[t.variable] = (_value(record, t.variable) - t.center) / t.scale
    lp = 0.0
    for t in terms:
        x = (_value(record, t.variable) - t.center) / t.scale
        if t.interaction is not None:
            x *= transformed[t.interaction]
        lp += t.coefficient * x
    return lp


@dataclass(frozen=True)
class RiskEstimate:
    linear_predictor: float
    uncalibrated_risk: float
    calibrated_risk: float
    stratum: str


def calibrate(risk, cal: Calibration):
    """Log-log recalibration of a ten-year risk."""
    return 1.0 - np.exp(-np.exp(cal.scale1 + cal.scale2 * np.log(-np.log(1.0 - risk))))


def ten_year_risk(lp: float, coeffs: Score2Coefficients, sex: str | None = None,
                  threshold: float = DEFAULT_THRESHOLD) -> RiskEstimate:
    if not math.isfinite(lp):
        raise InvalidInputError("linear predictor must be finite")
    uncal = 1.0 - coeffs.s0(sex) ** math.exp(lp)
    if not (0.0 < uncal < 1.0):
        raise SaturationError(f"risk saturated at {uncal} for linear predictor {lp}")
    cal = float(calibrate(uncal, coeffs.calib(sex)))
    if not (0.0 < cal < 1.0):
        raise SaturationError(f"calibrated risk saturated at {cal}")
    return RiskEstimate(lp, uncal, cal, stratify_score2(cal, threshold))


def stratify_score2(risk: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    return "high" if risk >= threshold else "low"


def score_record(record: AssessmentRecord, coeffs: Score2Coefficients,
                 threshold: float = DEFAULT_THRESHOLD) -> RiskEstimate:
    return ten_year_risk(linear_predictor(record, coeffs), coeffs, record.sex, threshold)


def score_columns(cols: Mapping[str, np.ndarray], coeffs: Score2Coefficients):
    """Vectorised scoring of cohort columns.

    Returns ``(eligible, lp, uncalibrated, calibrated)``; entries are NaN for
    participants that are ineligible or lack an input.
    """
    n = len(cols["age"])
    eligible = ((cols["age"] >= 40) & (cols["age"] <= 69)
                & ~cols["prior_cvd"].astype(bool) & ~cols["diabetes"].astype(bool))
    lp = np.full(n, np.nan)
    uncal = np.full(n, np.nan)
    cal = np.full(n, np.nan)
    sexes = cols["sex"] if "sex" in cols else np.where(cols["male"], "male", "female")
    for sex in SEXES:
        if sex not in coeffs.terms:
            continue
        sel = eligible & (sexes == sex)
        values = {}
        for t in coeffs.terms[sex]:
            values[t.variable] = np.asarray(cols[t.variable], dtype=np.float64)
        main = {t.variable: (values[t.variable] - t.center) / t.scale
                for t in coeffs.terms[sex] if t.interaction is None}
        acc = np.zeros(n)
        for t in coeffs.terms[sex]:
            x = (values[t.variable] - t.center) / t.scale
            if t.interaction is not None:
                x = x * main[t.interaction]
            acc += t.coefficient * x
        sel &= np.isfinite(acc)
        lp[sel] = acc[sel]
        u = 1.0 - coeffs.s0(sex) ** np.exp(acc[sel])
        uncal[sel] = u
        cal[sel] = calibrate(u, coeffs.calib(sex))
    return eligible, lp, uncal, cal
