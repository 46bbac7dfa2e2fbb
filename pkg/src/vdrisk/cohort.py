"""Participants, outcomes, label rules, synthetic cohorts and split planning."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit, ndtr, ndtri

from .errors import CohortParseError, InvalidInputError, ValidationError
from .rng import Streams

ASSESSMENTS = ("baseline", "y5", "y10")
SEXES = ("male", "female")
ENDPOINTS = ("all_cause_death", "cardiac_death", "mi", "stroke")

# Age bins and counts of the baseline examination (35-45 ... 65-75).
BASELINE_AGE_BINS = ((35, 45), (45, 55), (55, 65), (65, 75))
BASELINE_AGE_COUNTS = (3100, 3751, 3791, 3604)

SCORE2_INPUTS = ("age", "sex", "smoker", "sbp", "total_chol", "hdl_chol")

CSV_COLUMNS = [
    "participant_id", "assessment", "age", "sex", "sbp", "dbp",
    "antihypertensive_med", "smoker", "diabetes", "prior_cvd",
    "total_chol", "hdl_chol", "vd_confidence", "hypertension_label",
] + [f"{e}_{suffix}" for e in ENDPOINTS for suffix in ("time_days", "event")]


def classify_hypertension(sbp: float, dbp: float, med: bool) -> bool:
    """Study hypertension rule: SBP >= 140 or DBP >= 90 or on medication."""
    for name, value in (("sbp", sbp), ("dbp", dbp)):
        if value is None or not math.isfinite(value) or value <= 0:
            raise InvalidInputError(f"{name} must be finite and positive, got {value!r}")
    return bool(sbp >= 140 or dbp >= 90 or med)


def score2_eligible(age: float, prior_cvd: bool, diabetes: bool) -> bool:
    if age is None or not math.isfinite(age) or age < 0:
        raise InvalidInputError(f"invalid age {age!r}")
    return bool(40 <= age <= 69 and not prior_cvd and not diabetes)


@dataclass(frozen=True)
class AssessmentRecord:
    """One participant at one examination.

    ``hypertension_label`` is derived; passing a value that disagrees with
    :func:`classify_hypertension` raises :class:`ValidationError`.
    Cholesterol values may be ``None`` (not measured).
    """

    participant_id: str
    assessment: str
    age: int
    sex: str
    sbp: float
    dbp: float
    antihypertensive_med: bool
    smoker: bool
    diabetes: bool
    prior_cvd: bool
    total_chol: float | None
    hdl_chol: float | None
    vd_confidence: float
    hypertension_label: bool | None = None

    def __post_init__(self):
        if self.assessment not in ASSESSMENTS:
            raise ValidationError(f"{self.participant_id}: unknown assessment {self.assessment!r}")
        if self.sex not in SEXES:
            raise ValidationError(f"{self.participant_id}: unknown sex {self.sex!r}")
        if self.age < 35:
            raise ValidationError(f"{self.participant_id}: age {self.age} below 35")
        if not (0.0 <= self.vd_confidence <= 1.0):
            raise ValidationError(f"{self.participant_id}: vd_confidence {self.vd_confidence} outside [0, 1]")
        if not (self.sbp > self.dbp > 0):
            raise ValidationError(f"{self.participant_id}: requires sbp > dbp > 0")
        label = classify_hypertension(self.sbp, self.dbp, self.antihypertensive_med)
        if self.hypertension_label is None:
            object.__setattr__(self, "hypertension_label", label)
        elif bool(self.hypertension_label) != label:
            raise ValidationError(f"{self.participant_id}: stored hypertension label disagrees with rule")

    @property
    def score2_complete(self) -> bool:
        return self.total_chol is not None and self.hdl_chol is not None

    @property
    def score2_eligible(self) -> bool:
        return score2_eligible(self.age, self.prior_cvd, self.diabetes)


@dataclass(frozen=True)
class EndpointOutcome:
    time_days: int
    event: bool

    def __post_init__(self):
        if self.time_days < 0:
            raise ValidationError(f"negative follow-up time {self.time_days}")


@dataclass(frozen=True)
class OutcomeRecord:
    participant_id: str
    endpoints: Mapping[str, EndpointOutcome]

    def __getitem__(self, endpoint: str) -> EndpointOutcome:
        return self.endpoints[endpoint]


# --------------------------------------------------------------------------
# synthetic cohorts


@dataclass(frozen=True)
class EndpointHazard:
    """Exponential event process for one endpoint.

    ``coefficients`` are log hazard ratios per cohort standard deviation of
    the named covariate; ``baseline_rate`` is events per person-year at the
    cohort-average covariate profile.
    """

    baseline_rate: float
    coefficients: Mapping[str, float] = field(default_factory=dict)


HAZARD_COVARIATES = (
    "age", "male", "sbp", "dbp", "antihypertensive_med", "smoker", "diabetes",
    "prior_cvd", "total_chol", "hdl_chol", "vd_confidence", "hypertension_label",
)

LN2 = math.log(2.0)


def default_hazards() -> dict[str, EndpointHazard]:
    return {
        "all_cause_death": EndpointHazard(0.008, {
            "age": math.log(2.0), "vd_confidence": LN2, "male": 0.15,
            "smoker": 0.25, "diabetes": 0.1, "sbp": 0.1,
        }),
        "cardiac_death": EndpointHazard(0.0025, {
            "age": math.log(2.0), "vd_confidence": LN2, "male": 0.25, "smoker": 0.3,
            "prior_cvd": 0.3, "sbp": 0.2, "total_chol": 0.15, "hdl_chol": -0.15,
        }),
        "mi": EndpointHazard(0.003, {
            "age": math.log(1.6), "vd_confidence": LN2, "male": 0.3, "smoker": 0.35,
            "prior_cvd": 0.25, "sbp": 0.15, "total_chol": 0.2, "hdl_chol": -0.2,
        }),
        "stroke": EndpointHazard(0.0015, {
            "age": math.log(1.8), "vd_confidence": LN2, "smoker": 0.2, "sbp": 0.3,
        }),
    }


@dataclass(frozen=True)
class SyntheticCohortConfig:
    """Generator settings.  Defaults follow the baseline examination profile."""

    n: int = 14246
    seed: int = 7
    hypertension: float = 0.501
    smoker: float = 0.194
    diabetes: float = 0.094
    prior_cvd: float = 0.119
    male: float = 0.505
    age_bins: tuple = BASELINE_AGE_BINS
    age_weights: tuple = tuple(c / sum(BASELINE_AGE_COUNTS) for c in BASELINE_AGE_COUNTS)
    # log-odds of hypertension per decade of age; the intercept is solved so
    # the marginal prevalence hits ``hypertension`` exactly in expectation
    hypertension_age_slope: float = 0.8
    medicated_fraction: float = 0.55
    # VD readout: logit = shift * (+-1/2) + age_slope * decades + noise * N(0,1)
    vd_hypertension_shift: float = 1.2
    vd_age_slope: float = 0.3
    vd_noise: float = 1.0
    hazards: Mapping[str, EndpointHazard] = field(default_factory=default_hazards)
    horizon_days: int = 5479
    dropout_rate: float = 0.01
    missing_chol: float = 0.0

    def validate(self) -> None:
        if not isinstance(self.n, (int, np.integer)) or self.n < 0:
            raise InvalidInputError(f"n must be a nonnegative integer, got {self.n!r}")
        for name in ("hypertension", "smoker", "diabetes", "prior_cvd", "male",
                     "medicated_fraction", "missing_chol"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise InvalidInputError(f"{name} must be a probability, got {p!r}")
        if len(self.age_bins) != len(self.age_weights) or not self.age_bins:
            raise InvalidInputError("age_bins and age_weights must align")
        if any(w < 0 for w in self.age_weights) or abs(sum(self.age_weights) - 1.0) > 1e-9:
            raise InvalidInputError("age bin weights must be nonnegative and sum to 1")
        for lo, hi in self.age_bins:
            if not (35 <= lo < hi):
                raise InvalidInputError(f"invalid age bin ({lo}, {hi})")
        if self.horizon_days <= 0 or self.dropout_rate < 0:
            raise InvalidInputError("horizon_days must be positive and dropout_rate nonnegative")
        for endpoint, hz in self.hazards.items():
            if endpoint not in ENDPOINTS:
                raise InvalidInputError(f"unknown endpoint {endpoint!r}")
            if hz.baseline_rate <= 0:
                raise InvalidInputError(f"{endpoint}: baseline rate must be positive")
            for cov in hz.coefficients:
                if cov not in HAZARD_COVARIATES:
                    raise InvalidInputError(f"{endpoint}: unknown covariate {cov!r}")
        missing = set(ENDPOINTS) - set(self.hazards)
        if missing:
            raise InvalidInputError(f"no hazard given for {sorted(missing)}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticCohortConfig":
        data = dict(data)
        if "hazards" in data:
            hazards = default_hazards()
            for name, hz in data["hazards"].items():
                hazards[name] = EndpointHazard(float(hz["baseline_rate"]),
                                               dict(hz.get("coefficients", {})))
            data["hazards"] = hazards
        for key in ("age_bins",):
            if key in data:
                data[key] = tuple(tuple(b) for b in data[key])
        if "age_weights" in data:
            data["age_weights"] = tuple(data["age_weights"])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "seed": self.seed, "hypertension": self.hypertension,
            "smoker": self.smoker, "diabetes": self.diabetes, "prior_cvd": self.prior_cvd,
            "male": self.male, "age_bins": [list(b) for b in self.age_bins],
            "age_weights": list(self.age_weights),
            "hypertension_age_slope": self.hypertension_age_slope,
            "medicated_fraction": self.medicated_fraction,
            "vd_hypertension_shift": self.vd_hypertension_shift,
            "vd_age_slope": self.vd_age_slope, "vd_noise": self.vd_noise,
            "hazards": {k: {"baseline_rate": v.baseline_rate, "coefficients": dict(v.coefficients)}
                        for k, v in self.hazards.items()},
            "horizon_days": self.horizon_days, "dropout_rate": self.dropout_rate,
            "missing_chol": self.missing_chol,
        }


def _hypertension_intercept(cfg: SyntheticCohortConfig) -> float:
    """Logit intercept giving marginal prevalence ``cfg.hypertension``."""
    if cfg.hypertension in (0.0, 1.0):
        return -np.inf if cfg.hypertension == 0.0 else np.inf

    def marginal(a):
        total = 0.0
        for (lo, hi), w in zip(cfg.age_bins, cfg.age_weights):
            if w == 0:
                continue
            # integer ages are uniform over lo..hi-1
            ages = np.arange(lo, hi)
            total += w * float(np.mean(expit(a + cfg.hypertension_age_slope * (ages - 55) / 10)))
        return total - cfg.hypertension

    return optimize.brentq(marginal, -30, 30, xtol=1e-14)


def _truncnorm(u, mean, sd, lo, hi):
    """Inverse-CDF normal truncated to [lo, hi]."""
    a = ndtr((lo - mean) / sd)
    b = ndtr((hi - mean) / sd)
    p = a + u * (b - a)
    p = np.clip(p, 1e-300, 1 - 1e-16)
    return mean + sd * ndtri(p)


# Fixed counter slots per participant stream.
_AGE_BIN, _AGE, _SEX, _HTN, _MED, _SBP, _DBP, _SMOKE, _DIAB, _CVD, _TC, _HDL, _VD, _MISS = range(14)
_EVENT_BASE, _DROPOUT = 20, 40


def generate_synthetic_cohort(config: SyntheticCohortConfig):
    """Draw a synthetic baseline cohort with planted hazards.

    Each participant ``i`` consumes only stream ``i`` of ``Streams(seed)``, so
    the output is independent of evaluation order and identical across runs.

    Returns
    -------
    records : list of AssessmentRecord
    outcomes : list of OutcomeRecord
    """
    config.validate()
    n = int(config.n)
    if n == 0:
        return [], []
    cols = simulate_columns(config)
    return columns_to_records(cols)


def simulate_columns(config: SyntheticCohortConfig) -> dict[str, np.ndarray]:
    """Vectorised core of :func:`generate_synthetic_cohort`."""
    config.validate()
    n = int(config.n)
    rs = Streams(config.seed, domain=1)
    idx = np.arange(n)

    # age: piecewise uniform over integer ages in the configured bins
    edges = np.cumsum(config.age_weights)
    edges[-1] = 1.0
    bin_idx = np.searchsorted(edges, rs.uniform(idx, _AGE_BIN), side="right")
    bin_idx = np.minimum(bin_idx, len(edges) - 1)
    lo = np.array([b[0] for b in config.age_bins])[bin_idx]
    hi = np.array([b[1] for b in config.age_bins])[bin_idx]
    age = np.floor(lo + rs.uniform(idx, _AGE) * (hi - lo)).astype(np.int64)
    age = np.minimum(age, hi - 1)
    decades = (age - 55) / 10.0

    male = rs.uniform(idx, _SEX) < config.male

    a = _hypertension_intercept(config)
    p_htn = expit(a + config.hypertension_age_slope * decades)
    htn = rs.uniform(idx, _HTN) < p_htn
    med = htn & (rs.uniform(idx, _MED) < config.medicated_fraction)

    u_sbp = rs.uniform(idx, _SBP)
    u_dbp = rs.uniform(idx, _DBP)
    sbp_mean = 121.0 + 4.0 * decades + 3.0 * male
    sbp = np.empty(n)
    dbp = np.empty(n)
    # normotensive: SBP < 140 and DBP < 90
    norm = ~htn
    sbp[norm] = np.floor(_truncnorm(u_sbp[norm], sbp_mean[norm], 10.0, 90.0, 140.0))
    # untreated hypertensive: SBP >= 140
    untreated = htn & ~med
    sbp[untreated] = np.ceil(_truncnorm(u_sbp[untreated], sbp_mean[untreated] + 25.0, 12.0, 140.0, 230.0))
    sbp[med] = np.round(_truncnorm(u_sbp[med], sbp_mean[med] + 15.0, 14.0, 95.0, 220.0))
    sbp = np.clip(sbp, 90.0, 230.0)
    sbp[norm] = np.minimum(sbp[norm], 139.0)
    dbp_hi = np.where(norm, np.minimum(89.0, sbp - 20.0), sbp - 20.0)
    dbp = np.round(_truncnorm(u_dbp, 0.55 * sbp + 7.0, 8.0, 50.0, dbp_hi))
    dbp = np.clip(dbp, 50.0, dbp_hi)
    dbp[norm] = np.minimum(dbp[norm], 89.0)

    smoker = rs.uniform(idx, _SMOKE) < config.smoker
    diabetes = rs.uniform(idx, _DIAB) < config.diabetes
    prior_cvd = rs.uniform(idx, _CVD) < config.prior_cvd
    total_chol = np.round(np.clip(5.6 + 1.0 * rs.normal(idx, _TC), 2.5, 10.0), 2)
    hdl_chol = np.round(np.clip(1.6 - 0.3 * male + 0.4 * rs.normal(idx, _HDL), 0.5, 3.5), 2)
    chol_missing = rs.uniform(idx, _MISS) < config.missing_chol

    vd_logit = (config.vd_hypertension_shift * (htn - 0.5)
                + config.vd_age_slope * decades
                + config.vd_noise * rs.normal(idx, _VD))
    vd = np.round(expit(vd_logit), 6)

    cols = {
        "age": age, "male": male, "sbp": sbp, "dbp": dbp,
        "antihypertensive_med": med, "smoker": smoker, "diabetes": diabetes,
        "prior_cvd": prior_cvd, "total_chol": total_chol, "hdl_chol": hdl_chol,
        "vd_confidence": vd, "hypertension_label": htn,
    }

    horizon_years = config.horizon_days / 365.25
    for e_i, endpoint in enumerate(ENDPOINTS):
        hz = config.hazards[endpoint]
        lp = np.zeros(n)
        for cov, beta in sorted(hz.coefficients.items()):
            x = cols[cov].astype(np.float64)
            sd = x.std(ddof=1) if n > 1 else 0.0
            if sd > 0:
                lp += beta * (x - x.mean()) / sd
        rate = hz.baseline_rate * np.exp(lp)
        t_event = rs.exponential(idx, _EVENT_BASE + e_i) / rate
        if config.dropout_rate > 0:
            t_drop = rs.exponential(idx, _DROPOUT + e_i) / config.dropout_rate
        else:
            t_drop = np.full(n, np.inf)
        t_obs = np.minimum(np.minimum(t_event, t_drop), horizon_years)
        cols[f"{endpoint}_event"] = t_event <= np.minimum(t_drop, horizon_years)
        cols[f"{endpoint}_time_days"] = np.minimum(
            np.floor(t_obs * 365.25), config.horizon_days).astype(np.int64)

    cols["participant_id"] = np.array([f"P{i + 1:06d}" for i in range(n)], dtype=object)
    cols["total_chol"] = np.where(chol_missing, np.nan, total_chol)
    cols["hdl_chol"] = np.where(chol_missing, np.nan, hdl_chol)
    return cols


def columns_to_records(cols: Mapping[str, np.ndarray]):
    records, outcomes = [], []
    n = len(cols["participant_id"])
    for i in range(n):
        pid = str(cols["participant_id"][i])
        tc = float(cols["total_chol"][i])
        hdl = float(cols["hdl_chol"][i])
        records.append(AssessmentRecord(
            participant_id=pid,
            assessment="baseline",
            age=int(cols["age"][i]),
            sex="male" if cols["male"][i] else "female",
            sbp=float(cols["sbp"][i]),
            dbp=float(cols["dbp"][i]),
            antihypertensive_med=bool(cols["antihypertensive_med"][i]),
            smoker=bool(cols["smoker"][i]),
            diabetes=bool(cols["diabetes"][i]),
            prior_cvd=bool(cols["prior_cvd"][i]),
            total_chol=None if math.isnan(tc) else tc,
            hdl_chol=None if math.isnan(hdl) else hdl,
            vd_confidence=float(cols["vd_confidence"][i]),
        ))
        outcomes.append(OutcomeRecord(pid, {
            e: EndpointOutcome(int(cols[f"{e}_time_days"][i]), bool(cols[f"{e}_event"][i]))
            for e in ENDPOINTS
        }))
    return records, outcomes


def cohort_columns(records: Sequence[AssessmentRecord],
                   outcomes: Sequence[OutcomeRecord] | None = None) -> dict[str, np.ndarray]:
    """Column arrays for analysis.  Missing cholesterol becomes NaN."""
    cols: dict[str, np.ndarray] = {
        "participant_id": np.array([r.participant_id for r in records], dtype=object),
        "age": np.array([r.age for r in records], dtype=np.float64),
        "male": np.array([r.sex == "male" for r in records], dtype=bool),
        "sex": np.array([r.sex for r in records], dtype=object),
        "sbp": np.array([r.sbp for r in records], dtype=np.float64),
        "dbp": np.array([r.dbp for r in records], dtype=np.float64),
        "total_chol": np.array([np.nan if r.total_chol is None else r.total_chol for r in records]),
        "hdl_chol": np.array([np.nan if r.hdl_chol is None else r.hdl_chol for r in records]),
        "vd_confidence": np.array([r.vd_confidence for r in records], dtype=np.float64),
    }
    for flag in ("antihypertensive_med", "smoker", "diabetes", "prior_cvd", "hypertension_label"):
        cols[flag] = np.array([bool(getattr(r, flag)) for r in records], dtype=bool)
    if outcomes is not None:
        by_id = {o.participant_id: o for o in outcomes}
        for e in ENDPOINTS:
            cols[f"{e}_time_days"] = np.array([by_id[r.participant_id][e].time_days for r in records],
                                              dtype=np.float64)
            cols[f"{e}_event"] = np.array([by_id[r.participant_id][e].event for r in records], dtype=bool)
    return cols


# --------------------------------------------------------------------------
# CSV I/O


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and math.isnan(value):
        return ""
    return format(float(value), ".10g")


def write_cohort(path, records: Sequence[AssessmentRecord], outcomes: Sequence[OutcomeRecord]) -> None:
    by_id = {o.participant_id: o for o in outcomes}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            o = by_id[r.participant_id]
            row = [r.participant_id, r.assessment, _fmt(r.age), r.sex, _fmt(r.sbp), _fmt(r.dbp),
                   _fmt(r.antihypertensive_med), _fmt(r.smoker), _fmt(r.diabetes), _fmt(r.prior_cvd),
                   _fmt(r.total_chol), _fmt(r.hdl_chol), _fmt(r.vd_confidence), _fmt(r.hypertension_label)]
            for e in ENDPOINTS:
                row += [_fmt(o[e].time_days), _fmt(o[e].event)]
            w.writerow(row)


@dataclass
class LoadedCohort:
    """Result of :func:`load_cohort`.

    ``label_mismatches`` lists participants whose stored hypertension label
    disagreed with the rule (records carry the recomputed label);
    ``incomplete_score2`` lists participants missing a SCORE2 input.
    """

    records: list
    outcomes: list
    label_mismatches: list = field(default_factory=list)
    incomplete_score2: list = field(default_factory=list)

    def __iter__(self):
        # allows ``records, outcomes = load_cohort(path)``
        return iter((self.records, self.outcomes))


def _parse_bool(text: str, row: int, col: str) -> bool:
    if text == "1":
        return True
    if text == "0":
        return False
    raise CohortParseError(row, col, f"expected 0 or 1, got {text!r}")


def _parse_float(text: str, row: int, col: str, optional: bool = False):
    if text == "":
        if optional:
            return None
        raise CohortParseError(row, col, "missing value")
    try:
        value = float(text)
    except ValueError:
        raise CohortParseError(row, col, f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise CohortParseError(row, col, f"not finite: {text!r}")
    return value


def _parse_int(text: str, row: int, col: str) -> int:
    value = _parse_float(text, row, col)
    if value != int(value):
        raise CohortParseError(row, col, f"not an integer: {text!r}")
    return int(value)


def load_cohort(path) -> LoadedCohort:
    """Read and validate a cohort CSV.

    Rows are numbered from 1 for the first data row.  Parse failures raise
    :class:`CohortParseError`; violated record invariants raise
    :class:`ValidationError`.
    """
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"no such cohort file: {path}")
    result = LoadedCohort([], [])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise CohortParseError(0, missing[0], "column absent from header")
        for row_no, row in enumerate(reader, start=1):
            pid = row["participant_id"]
            if not pid:
                raise CohortParseError(row_no, "participant_id", "missing value")
            sbp = _parse_float(row["sbp"], row_no, "sbp")
            dbp = _parse_float(row["dbp"], row_no, "dbp")
            med = _parse_bool(row["antihypertensive_med"], row_no, "antihypertensive_med")
            stored = _parse_bool(row["hypertension_label"], row_no, "hypertension_label")
            try:
                label = classify_hypertension(sbp, dbp, med)
            except InvalidInputError as exc:
                raise ValidationError(f"row {row_no}: {exc}") from None
            if label != stored:
                result.label_mismatches.append(pid)
            try:
                rec = AssessmentRecord(
                    participant_id=pid,
                    assessment=row["assessment"],
                    age=_parse_int(row["age"], row_no, "age"),
                    sex=row["sex"],
                    sbp=sbp,
                    dbp=dbp,
                    antihypertensive_med=med,
                    smoker=_parse_bool(row["smoker"], row_no, "smoker"),
                    diabetes=_parse_bool(row["diabetes"], row_no, "diabetes"),
                    prior_cvd=_parse_bool(row["prior_cvd"], row_no, "prior_cvd"),
                    total_chol=_parse_float(row["total_chol"], row_no, "total_chol", optional=True),
                    hdl_chol=_parse_float(row["hdl_chol"], row_no, "hdl_chol", optional=True),
                    vd_confidence=_parse_float(row["vd_confidence"], row_no, "vd_confidence"),
                )
            except ValidationError as exc:
                raise ValidationError(f"row {row_no}: {exc}") from None
            if not rec.score2_complete:
                result.incomplete_score2.append(pid)
            endpoints = {}
            for e in ENDPOINTS:
                t = _parse_int(row[f"{e}_time_days"], row_no, f"{e}_time_days")
                if t < 0:
                    raise ValidationError(f"row {row_no}: {e}_time_days is negative")
                endpoints[e] = EndpointOutcome(t, _parse_bool(row[f"{e}_event"], row_no, f"{e}_event"))
            result.records.append(rec)
            result.outcomes.append(OutcomeRecord(pid, endpoints))
    return result


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class Fold:
    test: np.ndarray
    train: np.ndarray
    val: np.ndarray


@dataclass(frozen=True)
class SplitPlan:
    n: int
    k: int
    folds: tuple

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "folds": [
            {"test": f.test.tolist(), "train": f.train.tolist(), "val": f.val.tolist()}
            for f in self.folds]}


def make_splits(n: int, k: int = 10, val_frac: float = 0.2, seed: int = 0) -> SplitPlan:
    """Disjoint test folds, each complement divided into train and validation.

    Fold sizes are ``n // k`` with the remainder given one-per-fold to the
    first ``n % k`` folds.  The validation share of each complement is
    ``round(val_frac * len(complement))``.
    """
    if k < 1 or k > n:
        raise InvalidInputError(f"need 1 <= k <= n, got k={k}, n={n}")
    if not (0.0 <= val_frac < 1.0):
        raise InvalidInputError(f"val_frac must lie in [0, 1), got {val_frac}")
    if k == 1:
        warnings.warn("k=1 puts the whole cohort in the test set; train and validation are empty",
                      stacklevel=2)
    rs = Streams(seed, domain=2)
    perm = rs.permutation(n, counter=0)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        test = perm[start:start + size]
        start += size
        rest = np.concatenate([perm[:start - size], perm[start:]])
        # per-fold reshuffle so validation sets differ between folds
        order = np.argsort(rs.bits(rest, counter=f + 1), kind="stable")
        rest = rest[order]
        n_val = int(math.floor(val_frac * len(rest) + 0.5))
        folds.append(Fold(test=np.sort(test), train=np.sort(rest[n_val:]), val=np.sort(rest[:n_val])))
    return SplitPlan(n=n, k=k, folds=tuple(folds))
