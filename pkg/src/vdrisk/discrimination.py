"""ROC analysis, hazard-based logistic classification, NRI/IDI and group tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import expit

from .errors import InvalidInputError, UndefinedMetricError


def _binary_labels(labels, n: int | None = None) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype != bool:
        if not np.all(np.isin(y, (0, 1))):
            raise InvalidInputError("labels must be boolean or 0/1")
        y = y.astype(bool)
    y = y.reshape(-1)
    if n is not None and y.size != n:
        raise InvalidInputError("labels and scores differ in length")
    return y


@dataclass(frozen=True)
class RocCurve:
    """ROC points from (0, 0) to (1, 1); ``threshold[k]`` is the cut giving
    point ``k`` (score >= threshold predicts positive)."""

    fpr: np.ndarray
    tpr: np.ndarray
    threshold: np.ndarray
    auc: float


def roc(scores, labels) -> RocCurve:
    """Threshold sweep over distinct scores in descending order.

    The area is accumulated from integer trapezoids, so it equals the
    Mann-Whitney statistic with half credit for ties exactly.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = _binary_labels(labels, s.size)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes present")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("scores must be finite")
    thresholds, inv = np.unique(-s, return_inverse=True)
    tp = np.concatenate([[0], np.cumsum(np.bincount(inv, weights=y, minlength=thresholds.size))]).astype(np.int64)
    fp = np.concatenate([[0], np.cumsum(np.bincount(inv, weights=~y, minlength=thresholds.size))]).astype(np.int64)
    twice_u = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = twice_u / (2 * n_pos * n_neg)
    return RocCurve(fp / n_neg, tp / n_pos, np.concatenate([[np.inf], -thresholds]), auc)


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for th, f, t in zip(curve.threshold, curve.fpr, curve.tpr):
            w.writerow(["inf" if math.isinf(th) else format(th, ".10g"), format(f, ".12g"), format(t, ".12g")])


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HazardClassifier:
    """Univariate logistic model ``P(event) = logistic(intercept + slope * h)``."""

    intercept: float
    slope: float
    converged: bool = True
    diagnosis: str | None = None
    slope_se: float = float("nan")

    def __iter__(self):
        return iter((self.intercept, self.slope))

    def predict_proba(self, hazards) -> np.ndarray:
        return expit(self.intercept + self.slope * np.asarray(hazards, dtype=np.float64))


def fit_hazard_classifier(hazards, labels, tol: float = 1e-10, max_iter: int = 100,
                          cap: float = 30.0) -> HazardClassifier:
    """Newton-Raphson logistic fit of labels on a single hazard input.

    The input is standardized internally.  Under complete separation the
    standardized slope is stopped at ``cap`` and reported as not converged.
    """
    x = np.asarray(hazards, dtype=np.float64).reshape(-1)
    y = _binary_labels(labels, x.size).astype(np.float64)
    if y.sum() == 0 or y.sum() == y.size:
        raise UndefinedMetricError("classifier needs both classes present")
    mu = x.mean()
    sd = x.std()
    if sd == 0:
        raise InvalidInputError("hazard input is constant")
    z = (x - mu) / sd
    design = np.column_stack([np.ones_like(z), z])
    beta = np.array([math.log(y.mean() / (1 - y.mean())), 0.0])

    def loglik(b):
        eta = design @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    ll = loglik(beta)
    converged = False
    diagnosis = None
    info = None
    for _ in range(max_iter):
        p = expit(design @ beta)
        grad = design.T @ (y - p)
        info = (design * (p * (1 - p))[:, None]).T @ design
        if np.max(np.abs(grad)) <= tol * max(1.0, y.size):
            converged = True
            break
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            diagnosis = "singular information: complete separation"
            break
        new = beta + step
        new_ll = loglik(new)
        halvings = 0
        while new_ll < ll - 1e-12 * abs(ll) and halvings < 30:
            step /= 2
            new = beta + step
            new_ll = loglik(new)
            halvings += 1
        beta, ll = new, new_ll
        if abs(beta[1]) > cap:
            beta[1] = math.copysign(cap, beta[1])
            diagnosis = f"complete separation: standardized slope capped at {cap}"
            break
    else:
        diagnosis = f"no convergence after {max_iter} iterations"
    se = float("nan")
    if info is not None:
        try:
            se = float(math.sqrt(np.linalg.inv(info)[1, 1]) / sd)
        except (np.linalg.LinAlgError, ValueError):
            pass
    slope = beta[1] / sd
    intercept = beta[0] - beta[1] * mu / sd
    return HazardClassifier(float(intercept), float(slope), converged, diagnosis, se)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReclassResult:
    nri: float
    nri_events: float
    nri_nonevents: float
    idi: float
    mean_new_events: float
    mean_old_events: float
    mean_new_nonevents: float
    mean_old_nonevents: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def nri_idi(p_old, p_new, labels, cutpoints: Sequence[float] | None = None) -> ReclassResult:
    """Net reclassification and integrated discrimination improvement.

    Without ``cutpoints`` the category-free NRI is returned: each subject
    contributes the sign of ``p_new - p_old`` (events) or its negation
    (non-events).  With ``cutpoints`` the sign of the change in risk category
    is used instead.
    """
    old = np.asarray(p_old, dtype=np.float64).reshape(-1)
    new = np.asarray(p_new, dtype=np.float64).reshape(-1)
    if old.size != new.size:
        raise InvalidInputError("probability vectors differ in length")
    if np.any((old < 0) | (old > 1) | (new < 0) | (new > 1)):
        raise InvalidInputError("probabilities must lie in [0, 1]")
    y = _binary_labels(labels, old.size)
    if y.all() or not y.any():
        raise UndefinedMetricError("NRI/IDI need both classes present")
    if cutpoints is None:
        move = np.sign(new - old)
    else:
        cuts = np.sort(np.asarray(cutpoints, dtype=np.float64))
        move = np.sign(np.digitize(new, cuts) - np.digitize(old, cuts)).astype(np.float64)
    nri_e = float(move[y].mean())
    nri_ne = float(-move[~y].mean())
    mne, moe = float(new[y].mean()), float(old[y].mean())
    mnn, mon = float(new[~y].mean()), float(old[~y].mean())
    idi = (mne - moe) - (mnn - mon)
    return ReclassResult(nri_e + nri_ne, nri_e, nri_ne, idi, mne, moe, mnn, mon)


# --------------------------------------------------------------------------
# group comparison

CONTINUOUS_PARAMETERS = ("age", "sbp", "dbp", "total_chol", "hdl_chol", "vd_confidence")
BINARY_PARAMETERS = ("male", "smoker", "diabetes", "prior_cvd", "antihypertensive_med")

GROUP_KEYS = (("high", True), ("high", False), ("low", True), ("low", False))


@dataclass(frozen=True)
class PrevalenceRatio:
    numerator: tuple
    denominator: tuple
    parameter: str
    ratio: float | None
    ci_low: float | None
    ci_high: float | None


@dataclass
class GroupSummary:
    """One (VD stratum, hypertension) cell of the comparison table.

    ``quartiles[param] = (q25, median, q75)``; ``prevalence[param] =
    (count, fraction)``; ``ratios`` holds prevalence ratios with this group
    as numerator.
    """

    key: tuple
    n: int
    quartiles: dict = field(default_factory=dict)
    prevalence: dict = field(default_factory=dict)
    ratios: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.n == 0


def katz_ratio(a: int, n1: int, b: int, n2: int, level: float = 0.95):
    """Prevalence ratio (a/n1)/(b/n2) with a log-normal (Katz) interval.

    Any zero cell adds 0.5 to all four cells.  Returns ``(None,)*3`` when a
    group is empty.
    """
    if n1 == 0 or n2 == 0:
        return None, None, None
    a, b, n1, n2 = float(a), float(b), float(n1), float(n2)
    if min(a, b, n1 - a, n2 - b) == 0:
        a, b, n1, n2 = a + 0.5, b + 0.5, n1 + 1.0, n2 + 1.0
    ratio = (a / n1) / (b / n2)
    se = math.sqrt(1 / a - 1 / n1 + 1 / b - 1 / n2)
    z = stats.norm.ppf(0.5 + level / 2)
    return ratio, ratio * math.exp(-z * se), ratio * math.exp(z * se)


def group_compare(cols: Mapping[str, np.ndarray], vd_threshold: float = 0.5,
                  continuous: Sequence[str] = CONTINUOUS_PARAMETERS,
                  binary: Sequence[str] = BINARY_PARAMETERS) -> list[GroupSummary]:
    """Split a cohort by (VD >= threshold, hypertension label) and summarise.

    ``cols`` is the column mapping from :func:`vdrisk.cohort.cohort_columns`
    (extra columns such as a SCORE2 risk may be added and named in
    ``continuous``).  Quantiles use linear interpolation between order
    statistics; missing values are dropped per parameter.
    """
    vd = np.asarray(cols["vd_confidence"], dtype=np.float64)
    if vd.size == 0:
        raise InvalidInputError("group comparison needs a nonempty cohort")
    htn = np.asarray(cols["hypertension_label"], dtype=bool)
    high = vd >= vd_threshold
    groups = []
    masks = {}
    for key in GROUP_KEYS:
        mask = (high if key[0] == "high" else ~high) & (htn == key[1])
        masks[key] = mask
        g = GroupSummary(key=key, n=int(mask.sum()))
        for param in continuous:
            x = np.asarray(cols[param], dtype=np.float64)[mask]
            x = x[np.isfinite(x)]
            g.quartiles[param] = (tuple(float(q) for q in np.quantile(x, [0.25, 0.5, 0.75]))
                                  if x.size else (math.nan,) * 3)
        for param in binary:
            x = np.asarray(cols[param], dtype=bool)[mask]
            count = int(x.sum())
            g.prevalence[param] = (count, count / x.size if x.size else math.nan)
        groups.append(g)
    by_key = {g.key: g for g in groups}
    for ka, kb in permutations(GROUP_KEYS, 2):
        ga, gb = by_key[ka], by_key[kb]
        for param in binary:
            r = katz_ratio(ga.prevalence[param][0], ga.n, gb.prevalence[param][0], gb.n)
            ga.ratios.append(PrevalenceRatio(ka, kb, param, *r))
    return groups


def _group_label(key: tuple) -> str:
    return f"vd_{key[0]}/{'hypertensive' if key[1] else 'normotensive'}"


def write_group_csv(path, groups: Sequence[GroupSummary]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "n", "parameter", "kind", "q25", "median", "q75", "count", "prevalence"])
        for g in groups:
            for param, (q1, q2, q3) in g.quartiles.items():
                w.writerow([_group_label(g.key), g.n, param, "continuous",
                            _f(q1), _f(q2), _f(q3), "", ""])
            for param, (count, prev) in g.prevalence.items():
                w.writerow([_group_label(g.key), g.n, param, "binary", "", "", "", count, _f(prev)])


def write_ratio_csv(path, groups: Sequence[GroupSummary]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["numerator", "denominator", "parameter", "ratio", "ci_low", "ci_high"])
        for g in groups:
            for r in g.ratios:
                w.writerow([_group_label(r.numerator), _group_label(r.denominator), r.parameter,
                            _f(r.ratio), _f(r.ci_low), _f(r.ci_high)])


def _f(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".10g")
