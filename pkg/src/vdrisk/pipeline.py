"""Analysis steps shared by the CLI subcommands and the synthetic replica."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, logit

from . import score2 as s2
from .aggregation import aggregate_all
from .cohort import ENDPOINTS
from .discrimination import fit_hazard_classifier, nri_idi, roc
from .errors import InvalidInputError
from .rng import Streams
from .survival import CoxModel, c_index_diff_test, cox_fit, km_fit, km_survival_at, normalize_covariates

FIVE_YEARS_DAYS = 1826

# Named covariate sets for the comparison models.
MODELS = {
    "age": ("age",),
    "vd": ("vd_confidence",),
    "score2": ("score2",),
    "age+vd": ("age", "vd_confidence"),
    "score2+vd": ("score2", "vd_confidence"),
    "age+vd+score2": ("age", "vd_confidence", "score2"),
}


def parse_covariates(spec: str | Sequence[str]) -> tuple:
    if isinstance(spec, str):
        if spec in MODELS:
            return MODELS[spec]
        names = tuple(s.strip() for s in spec.replace("+", ",").split(",") if s.strip())
        return tuple("vd_confidence" if n == "vd" else n for n in names)
    return tuple(spec)


def attach_score2(cols: dict, coeffs: s2.Score2Coefficients) -> dict:
    """Add ``score2`` (calibrated risk, NaN when not applicable) and
    ``score2_eligible`` columns."""
    eligible, lp, uncal, cal = s2.score_columns(cols, coeffs)
    cols["score2"] = cal
    cols["score2_lp"] = lp
    cols["score2_uncalibrated"] = uncal
    cols["score2_eligible"] = eligible
    return cols


def complete_mask(cols: Mapping, covariates: Sequence[str]) -> np.ndarray:
    n = len(cols["age"])
    mask = np.ones(n, dtype=bool)
    for name in covariates:
        if name not in cols:
            raise InvalidInputError(f"unknown covariate {name!r}")
        mask &= np.isfinite(np.asarray(cols[name], dtype=np.float64))
    return mask


def censor_at(time: np.ndarray, event: np.ndarray, horizon: float | None):
    """Administrative censoring at ``horizon`` days."""
    if horizon is None:
        return time, event
    return np.minimum(time, horizon), event & (time <= horizon)


def outcome(cols: Mapping, endpoint: str, horizon: float | None = None):
    if endpoint not in ENDPOINTS:
        raise InvalidInputError(f"unknown endpoint {endpoint!r}; choose from {ENDPOINTS}")
    return censor_at(np.asarray(cols[f"{endpoint}_time_days"], dtype=np.float64),
                     np.asarray(cols[f"{endpoint}_event"], dtype=bool), horizon)


@dataclass
class FittedCox:
    model: CoxModel
    covariates: tuple
    mask: np.ndarray
    lp: np.ndarray
    time: np.ndarray
    event: np.ndarray


def fit_cox(cols: Mapping, endpoint: str, covariates: Sequence[str], mask: np.ndarray | None = None,
            horizon: float | None = None, ties: str = "efron") -> FittedCox:
    """Normalize the named covariates on the analysis subset and fit."""
    covariates = tuple(covariates)
    sel = complete_mask(cols, covariates)
    if mask is not None:
        sel &= mask
    t, e = outcome(cols, endpoint, horizon)
    raw = np.column_stack([np.asarray(cols[c], dtype=np.float64)[sel] for c in covariates])
    x = normalize_covariates(raw, covariates)
    model = cox_fit(x, t[sel], e[sel], ties=ties)
    return FittedCox(model, covariates, sel, x.values @ model.coefficients, t[sel], e[sel])


def km_strata(cols: Mapping, endpoint: str, by: str, threshold: float | None = None,
              horizon: float | None = None) -> dict:
    """Kaplan-Meier curves per stratum: ``{label: KmCurve}``.

    ``by`` is ``vd`` (confidence >= threshold, default 0.67),
    ``hypertension`` or ``score2`` (calibrated risk >= threshold, default
    0.08, eligible participants only).
    """
    t, e = outcome(cols, endpoint, horizon)
    if by == "vd":
        thr = 0.67 if threshold is None else threshold
        high = np.asarray(cols["vd_confidence"]) >= thr
        groups = {"high VD": high, "low VD": ~high}
    elif by == "hypertension":
        h = np.asarray(cols["hypertension_label"], dtype=bool)
        groups = {"hypertensive": h, "normotensive": ~h}
    elif by == "score2":
        thr = s2.DEFAULT_THRESHOLD if threshold is None else threshold
        risk = np.asarray(cols["score2"], dtype=np.float64)
        ok = np.isfinite(risk)
        groups = {"high SCORE2": ok & (risk >= thr), "low SCORE2": ok & (risk < thr)}
    else:
        raise InvalidInputError(f"unknown stratification {by!r}")
    return {label: km_fit(t[m], e[m]) for label, m in groups.items() if m.any()}


def binary_outcome(cols: Mapping, endpoint: str, horizon: float):
    """Event within ``horizon`` days; subjects censored earlier are unknown.

    Returns ``(labels, known_mask)``."""
    t, e = outcome(cols, endpoint)
    label = e & (t <= horizon)
    known = label | (t >= horizon)
    return label, known


def classify_by_hazard(cols: Mapping, endpoint: str, horizon: float, model_a: Sequence[str],
                       model_b: Sequence[str], cutpoints: Sequence[float] | None = None) -> dict:
    """Fit two Cox models on the shared complete subset, map each model's log
    relative hazard to a probability of an event within ``horizon`` with a
    logistic classifier, and compare by ROC and NRI/IDI (``b`` is the
    reference, ``a`` the new model)."""
    mask = complete_mask(cols, tuple(model_a) + tuple(model_b))
    label, known = binary_outcome(cols, endpoint, horizon)
    mask &= known
    fa = fit_cox(cols, endpoint, model_a, mask)
    fb = fit_cox(cols, endpoint, model_b, mask)
    y = label[mask]
    ca = fit_hazard_classifier(fa.lp, y)
    cb = fit_hazard_classifier(fb.lp, y)
    pa = ca.predict_proba(fa.lp)
    pb = cb.predict_proba(fb.lp)
    return {
        "n": int(mask.sum()), "n_events": int(y.sum()),
        "roc_a": roc(pa, y), "roc_b": roc(pb, y),
        "classifier_a": ca, "classifier_b": cb,
        "reclass": nri_idi(pb, pa, y, cutpoints),
        "cox_a": fa, "cox_b": fb,
    }


def synthesize_clip_predictions(participant_ids: Sequence[str], confidences: np.ndarray, seed: int,
                                noise: float = 0.3) -> dict:
    """Per-clip confidences scattered in logit space around each
    participant's confidence: 1-4 videos with 2-5 clips each."""
    rs = Streams(seed, domain=4)
    n = len(participant_ids)
    idx = np.arange(n)
    n_videos = 1 + np.floor(rs.uniform(idx, 0) * 4).astype(int)
    n_clips = 2 + np.floor(np.column_stack([rs.uniform(idx, 1 + v) for v in range(4)]) * 4).astype(int)
    draws = np.stack([np.column_stack([rs.normal(idx, 10 + 5 * v + k) for k in range(5)])
                      for v in range(4)], axis=1)
    base = logit(np.clip(np.asarray(confidences, dtype=np.float64), 1e-6, 1 - 1e-6))
    conf = np.round(expit(base[:, None, None] + noise * draws), 6)
    nested = {}
    for i in range(n):
        nested[str(participant_ids[i])] = {
            f"v{v + 1}": conf[i, v, :n_clips[i, v]].tolist() for v in range(n_videos[i])}
    return nested


def aggregate_to_columns(cols: dict, nested: Mapping, threshold: float = 0.5) -> list:
    preds = aggregate_all(nested, threshold)
    by_id = {p.participant_id: p.confidence for p in preds}
    cols["vd_confidence"] = np.array([by_id[str(pid)] for pid in cols["participant_id"]])
    return preds


def compare_models(cols: Mapping, endpoint: str, model_a: Sequence[str], model_b: Sequence[str],
                   horizon: float | None = None, method: str = "ustat", n_perm: int = 10000,
                   seed: int = 0) -> dict:
    mask = complete_mask(cols, tuple(model_a) + tuple(model_b))
    fa = fit_cox(cols, endpoint, model_a, mask, horizon)
    fb = fit_cox(cols, endpoint, model_b, mask, horizon)
    test = c_index_diff_test(fa.lp, fb.lp, fa.time, fa.event, method=method, n_perm=n_perm, seed=seed)
    return {"model_a": list(model_a), "model_b": list(model_b), "endpoint": endpoint,
            "n": int(mask.sum()), "n_events": int(fa.event.sum()), **test.to_dict()}


def survival_at(curves: Mapping, t: float) -> dict:
    return {label: km_survival_at(c, t) for label, c in curves.items()}
