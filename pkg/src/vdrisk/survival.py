"""Kaplan-Meier curves, Cox proportional hazards and concordance.

Times are nonnegative reals (days in this package); an event flag of False
marks a right-censored observation.  At equal times events are processed
before censorings, so a subject censored at ``t`` is still at risk for
events at ``t``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import (
    CoxOverflowError,
    DegenerateCovariateError,
    InvalidInputError,
    RankDeficiencyError,
    UndefinedMetricError,
)
from .rng import Streams


@dataclass(frozen=True)
class SurvivalSample:
    time: float
    event: bool


def survival_arrays(time, event=None) -> tuple[np.ndarray, np.ndarray]:
    """Coerce ``(time, event)`` arrays or a sequence of samples/pairs."""
    if event is None:
        pairs = [(s.time, s.event) if isinstance(s, SurvivalSample) else tuple(s) for s in time]
        time = [p[0] for p in pairs]
        event = [p[1] for p in pairs]
    t = np.asarray(time, dtype=np.float64).reshape(-1)
    e = np.asarray(event, dtype=bool).reshape(-1)
    if t.shape != e.shape:
        raise InvalidInputError("time and event lengths differ")
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise InvalidInputError("times must be finite and nonnegative")
    return t, e


# --------------------------------------------------------------------------
# Kaplan-Meier


@dataclass(frozen=True)
class KmCurve:
    """Product-limit table over every distinct observed time.

    Rows at censoring-only times carry ``n_events == 0`` and leave the
    survival unchanged.
    """

    time: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray
    n_censored: np.ndarray
    survival: np.ndarray
    greenwood_var: np.ndarray

    @property
    def event_times(self) -> np.ndarray:
        return self.time[self.n_events > 0]

    def rows(self):
        for i in range(len(self.time)):
            yield (self.time[i], int(self.n_at_risk[i]), int(self.n_events[i]),
                   int(self.n_censored[i]), self.survival[i], self.greenwood_var[i])


def km_fit(time, event=None) -> KmCurve:
    t, e = survival_arrays(time, event)
    if t.size == 0:
        raise InvalidInputError("Kaplan-Meier needs at least one sample")
    uniq, inv = np.unique(t, return_inverse=True)
    d = np.bincount(inv, weights=e, minlength=uniq.size).astype(np.int64)
    total = np.bincount(inv, minlength=uniq.size).astype(np.int64)
    c = total - d
    # at risk at time u: everyone with time >= u
    n_risk = total[::-1].cumsum()[::-1]
    factor = 1.0 - d / n_risk
    surv = np.cumprod(factor)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(d > 0, d / (n_risk * (n_risk - d)), 0.0)
        gw = np.where(surv > 0, surv**2 * np.cumsum(terms), 0.0)
    return KmCurve(uniq, n_risk, d, c, surv, gw)


def km_survival_at(curve: KmCurve, t: float) -> float:
    """Right-continuous evaluation of the product-limit step function."""
    if t < 0:
        raise InvalidInputError("t must be nonnegative")
    k = np.searchsorted(curve.time, t, side="right")
    return 1.0 if k == 0 else float(curve.survival[k - 1])


def write_km_csv(path, curve: KmCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "n_at_risk", "n_events", "n_censored", "survival", "greenwood_var"])
        for t, r, d, c, s, v in curve.rows():
            w.writerow([format(t, ".10g"), r, d, c, format(s, ".12g"), format(v, ".12g")])


# --------------------------------------------------------------------------
# covariate normalization


@dataclass(frozen=True)
class NormalizedMatrix:
    """Covariates mapped by ``(x - min) / (max - min)`` then divided by the
    sample SD of the rescaled column.

    ``values`` has shape (n, p); ``transform`` applies the same constants to
    new rows.
    """

    values: np.ndarray
    mins: np.ndarray
    ranges: np.ndarray
    sds: np.ndarray
    names: tuple = ()

    def transform(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        return (raw - self.mins) / self.ranges / self.sds

    @property
    def shape(self):
        return self.values.shape

    def to_dict(self) -> dict:
        return {"names": list(self.names), "min": self.mins.tolist(),
                "range": self.ranges.tolist(), "sd": self.sds.tolist()}


def normalize_covariates(matrix, names: Sequence[str] | None = None) -> NormalizedMatrix:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InvalidInputError("normalization needs at least two rows")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("covariates must be finite")
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(x.shape[1]))
    mins = x.min(axis=0)
    ranges = x.max(axis=0) - mins
    for j in range(x.shape[1]):
        if ranges[j] == 0:
            raise DegenerateCovariateError(names[j])
    scaled = (x - mins) / ranges
    sds = scaled.std(axis=0, ddof=1)
    return NormalizedMatrix(scaled / sds, mins, ranges, sds, names)


# --------------------------------------------------------------------------
# Cox partial likelihood

TIES = ("efron", "breslow")


class _RiskSets:
    """Sorted-time bookkeeping shared by every likelihood evaluation."""

    def __init__(self, x: np.ndarray, time: np.ndarray, event: np.ndarray):
        order = np.lexsort((~event, time))
        self.x = x[order]
        self.time = time[order]
        self.event = event[order]
        ev_times = np.unique(self.time[self.event])
        # first sorted index whose time equals each event time -> risk set start
        self.start = np.searchsorted(self.time, ev_times, side="left")
        ev_idx = np.flatnonzero(self.event)
        self.ev_idx = ev_idx
        self.ev_group = np.searchsorted(ev_times, self.time[ev_idx])
        self.d = np.bincount(self.ev_group, minlength=ev_times.size)
        # Efron: l-th of d tied events removes l/d of the tied risk mass
        rank = np.arange(ev_idx.size) - np.repeat(np.cumsum(self.d) - self.d, self.d)
        self.efron_frac = rank / np.repeat(self.d, self.d)
        self.x_event_sum = self.x[ev_idx].sum(axis=0)


def _loglik(rs: _RiskSets, beta: np.ndarray, ties: str, derivatives: bool = True):
    p = rs.x.shape[1]
    if rs.ev_idx.size == 0:
        return 0.0, np.zeros(p), np.zeros((p, p))
    eta = rs.x @ beta
    if not np.all(np.isfinite(eta)):
        raise CoxOverflowError("non-finite linear predictor; rescale the covariates")
    shift = eta.max()
    w = np.exp(eta - shift)
    # reverse cumulative sums: fixed descending-time accumulation
    s0 = np.cumsum(w[::-1])[::-1][rs.start]
    d0 = np.bincount(rs.ev_group, weights=w[rs.ev_idx], minlength=rs.d.size)
    f = rs.efron_frac if ties == "efron" else np.zeros(rs.ev_idx.size)
    g = rs.ev_group
    den = s0[g] - f * d0[g]
    if np.any(den <= 0) or not np.all(np.isfinite(den)):
        raise CoxOverflowError("risk-set sum underflowed; rescale the covariates")
    value = float(eta[rs.ev_idx].sum() - np.sum(np.log(den) + shift))
    if not math.isfinite(value):
        raise CoxOverflowError("non-finite partial likelihood; rescale the covariates")
    if not derivatives:
        return value, None, None
    wx = w[:, None] * rs.x
    s1 = np.cumsum(wx[::-1], axis=0)[::-1][rs.start]
    d1 = np.zeros((rs.d.size, p))
    np.add.at(d1, rs.ev_group, wx[rs.ev_idx])
    num1 = s1[g] - f[:, None] * d1[g]
    m = num1 / den[:, None]
    grad = rs.x_event_sum - m.sum(axis=0)
    wxx = wx[:, :, None] * rs.x[:, None, :]
    s2 = np.cumsum(wxx[::-1], axis=0)[::-1][rs.start]
    d2 = np.zeros((rs.d.size, p, p))
    np.add.at(d2, rs.ev_group, wxx[rs.ev_idx])
    num2 = s2[g] - f[:, None, None] * d2[g]
    hess = -(num2 / den[:, None, None] - m[:, :, None] * m[:, None, :]).sum(axis=0)
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
        raise CoxOverflowError("non-finite derivatives; rescale the covariates")
    return value, grad, hess


def _design(data) -> tuple[np.ndarray, tuple]:
    if isinstance(data, NormalizedMatrix):
        return data.values, data.names
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x, tuple(f"x{j}" for j in range(x.shape[1]))


def cox_partial_loglik(beta, data, time, event=None, ties: str = "efron"):
    """Tie-corrected log partial likelihood with gradient and Hessian.

    Returns
    -------
    value : float
    gradient : ndarray, shape (p,)
    hessian : ndarray, shape (p, p)
    """
    if ties not in TIES:
        raise InvalidInputError(f"ties must be one of {TIES}")
    x, _ = _design(data)
    t, e = survival_arrays(time, event)
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if x.shape[0] != t.size or x.shape[1] != beta.size:
        raise InvalidInputError("dimension mismatch between beta, covariates and samples")
    return _loglik(_RiskSets(x, t, e), beta, ties)


@dataclass
class CoxModel:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    log_likelihood: float
    c_index: float
    iterations: int
    converged: bool
    ties: str
    gradient_max_norm: float
    names: tuple = ()
    diagnosis: str | None = None
    normalization: NormalizedMatrix | None = field(default=None, repr=False)
    n: int = 0
    n_events: int = 0

    @property
    def hazard_ratios(self) -> np.ndarray:
        return np.exp(self.coefficients)

    def confidence_intervals(self, level: float = 0.95) -> np.ndarray:
        z = stats.norm.ppf(0.5 + level / 2)
        return np.column_stack([self.coefficients - z * self.standard_errors,
                                self.coefficients + z * self.standard_errors])

    def to_dict(self) -> dict:
        out = {
            "covariates": list(self.names),
            "coefficients": self.coefficients.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "hazard_ratios": self.hazard_ratios.tolist(),
            "log_partial_likelihood": self.log_likelihood,
            "c_index": self.c_index,
            "n": self.n,
            "n_events": self.n_events,
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "gradient_max_norm": self.gradient_max_norm,
                "ties": self.ties,
                "diagnosis": self.diagnosis,
            },
        }
        if self.normalization is not None:
            out["normalization"] = self.normalization.to_dict()
        return out


def cox_fit(data, time, event=None, ties: str = "efron", tol: float = 1e-9,
            max_iter: int = 100, beta_bound: float = 50.0, max_halvings: int = 30,
            concordance: bool = True) -> CoxModel:
    """Maximise the partial likelihood by Newton steps with step halving.

    Convergence requires the gradient max-norm to fall to ``tol`` with a
    pending Newton step that is negligible relative to the coefficients.  A
    small gradient with a non-negligible step means the likelihood keeps
    rising towards an infinite coefficient (monotone likelihood); that case,
    and any ``|beta_j| > beta_bound``, returns ``converged=False`` with a
    diagnosis instead of raising.  ``concordance=False`` skips the O(n^2)
    C-index (reported as NaN).
    """
    if ties not in TIES:
        raise InvalidInputError(f"ties must be one of {TIES}")
    x, names = _design(data)
    t, e = survival_arrays(time, event)
    if x.shape[0] != t.size:
        raise InvalidInputError("covariate rows and samples differ in length")
    if not e.any():
        raise InvalidInputError("Cox fit needs at least one event")
    rs = _RiskSets(x, t, e)
    p = x.shape[1]
    beta = np.zeros(p)
    ll, grad, hess = _loglik(rs, beta, ties)
    converged = False
    diagnosis = None
    iterations = 0
    step_tol = 1e-4

    def newton_step(grad, hess):
        try:
            chol = np.linalg.cholesky(-hess)
        except np.linalg.LinAlgError:
            return None
        y = np.linalg.solve(chol, grad)
        return np.linalg.solve(chol.T, y)

    while True:
        step = newton_step(grad, hess)
        gnorm = float(np.max(np.abs(grad)))
        if step is None:
            if np.max(np.abs(beta)) > 0.5 * beta_bound:
                diagnosis = "monotone likelihood: information vanished as coefficients diverged"
                break
            raise RankDeficiencyError("information matrix is singular; covariates are collinear")
        if gnorm <= tol:
            if np.all(np.abs(step) <= step_tol * (1.0 + np.abs(beta))):
                converged = True
            else:
                bad = [names[j] for j in np.flatnonzero(np.abs(step) > step_tol * (1.0 + np.abs(beta)))]
                diagnosis = f"monotone likelihood: coefficient(s) {bad} diverging"
            break
        if iterations >= max_iter:
            diagnosis = f"no convergence after {max_iter} iterations"
            break
        iterations += 1
        new_beta = beta + step
        new_ll = _loglik(rs, new_beta, ties, derivatives=False)[0]
        # decreases below rounding level of the likelihood do not count
        slack = 1e-12 * max(1.0, abs(ll))
        halvings = 0
        while new_ll < ll - slack and halvings < max_halvings:
            step = step / 2
            new_beta = beta + step
            new_ll = _loglik(rs, new_beta, ties, derivatives=False)[0]
            halvings += 1
        if new_ll < ll - slack:
            # no ascent available within rounding: accept the current point
            diagnosis = "step halving exhausted"
            converged = gnorm <= tol
            break
        beta = new_beta
        ll, grad, hess = _loglik(rs, beta, ties)
        if np.any(np.abs(beta) > beta_bound):
            bad = [names[j] for j in np.flatnonzero(np.abs(beta) > beta_bound)]
            diagnosis = f"monotone likelihood: |beta| exceeded {beta_bound} for {bad}"
            break

    try:
        cov = np.linalg.inv(-hess)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        se = np.full(p, np.inf)
    ci = float("nan")
    if concordance:
        try:
            ci = c_index(x @ beta, t, e)
        except UndefinedMetricError:
            pass
    return CoxModel(
        coefficients=beta, standard_errors=se, log_likelihood=ll, c_index=ci,
        iterations=iterations, converged=converged, ties=ties,
        gradient_max_norm=float(np.max(np.abs(grad))), names=names, diagnosis=diagnosis,
        normalization=data if isinstance(data, NormalizedMatrix) else None,
        n=int(t.size), n_events=int(e.sum()),
    )


def predict_relative_hazard(model: CoxModel, covariates, exp: bool = False):
    """Log relative hazard ``beta . x`` for normalized covariate rows.

    Use ``model.normalization.transform`` first when starting from raw
    values.  ``exp=True`` returns the relative hazard itself.
    """
    x = np.asarray(covariates, dtype=np.float64)
    if x.shape[-1] != model.coefficients.size:
        raise InvalidInputError(
            f"expected {model.coefficients.size} covariates, got {x.shape[-1]}")
    lp = x @ model.coefficients
    out = np.exp(lp) if exp else lp
    return float(out) if np.ndim(out) == 0 else out


def write_cox_json(path, model: CoxModel, extra: dict | None = None) -> None:
    doc = model.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round_floats(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _round_floats(obj, digits: int = 10):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float(format(obj, f".{digits}g"))
    if isinstance(obj, dict):
        return {k: _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    return obj


# --------------------------------------------------------------------------
# concordance

_BLOCK = 512


def _pair_blocks(t: np.ndarray, e: np.ndarray):
    """Yield ``(rows, usable)`` where usable[i, j] marks ordered pairs with
    ``i`` failing first: ``e_i`` and (``t_i < t_j`` or tied with ``j``
    censored)."""
    n = t.size
    for lo in range(0, n, _BLOCK):
        rows = slice(lo, min(lo + _BLOCK, n))
        ti = t[rows, None]
        usable = e[rows, None] & ((ti < t[None, :]) | ((ti == t[None, :]) & ~e[None, :]))
        yield rows, usable


def _scores(risk: np.ndarray, rows: slice) -> np.ndarray:
    """Doubled concordance credit: 2 concordant, 1 tied risk, 0 discordant."""
    ri = risk[rows, None]
    return 2 * (ri > risk[None, :]).astype(np.int64) + (ri == risk[None, :])


def concordance_counts(risk, time, event=None) -> tuple[int, int]:
    """Return ``(2 * concordance credit, permissible pairs)`` as integers."""
    t, e = survival_arrays(time, event)
    r = np.asarray(risk, dtype=np.float64).reshape(-1)
    if r.size != t.size:
        raise InvalidInputError("risks and samples differ in length")
    credit = 0
    pairs = 0
    for rows, usable in _pair_blocks(t, e):
        pairs += int(usable.sum())
        credit += int((_scores(r, rows) * usable).sum())
    return credit, pairs


def c_index(risk, time, event=None) -> float:
    """Harrell's concordance: higher risk should fail first; risk ties earn 1/2."""
    credit, pairs = concordance_counts(risk, time, event)
    if pairs == 0:
        raise UndefinedMetricError("no permissible pairs; concordance undefined")
    return credit / (2 * pairs)


@dataclass(frozen=True)
class CIndexComparison:
    c_a: float
    c_b: float
    delta: float
    p_value: float
    std_error: float
    method: str

    def to_dict(self) -> dict:
        return {"c_a": self.c_a, "c_b": self.c_b, "delta": self.delta,
                "p_value": self.p_value, "std_error": self.std_error, "method": self.method}


def _projections(risks: Sequence[np.ndarray], t: np.ndarray, e: np.ndarray):
    """U-statistic kernels and their first-order projections.

    Kernel rows: one concordance kernel per risk vector, then the usable-pair
    kernel.  ``h[m, i]`` is the average symmetric kernel of subject ``i``.
    """
    n = t.size
    k = len(risks) + 1
    row = np.zeros((k, n))
    col = np.zeros((k, n))
    total = np.zeros(k)
    for rows, usable in _pair_blocks(t, e):
        mats = [_scores(r, rows) * usable / 2.0 for r in risks] + [usable.astype(np.float64)]
        for m, a in enumerate(mats):
            row[m, rows] += a.sum(axis=1)
            col[m] += a.sum(axis=0)
            total[m] += a.sum()
    theta = total / (n * (n - 1))
    # symmetric kernel (a_ij + a_ji) / 2 averaged over partners
    h = (row + col) / (2.0 * (n - 1))
    return theta, h


def c_index_diff_test(risks_a, risks_b, time, event=None, method: str = "ustat",
                      n_perm: int = 10000, seed: int = 0) -> CIndexComparison:
    """Two-sided test of equal concordance for two risk scores on one sample.

    ``method="ustat"`` treats both C-indices as ratios of correlated
    U-statistics, estimates their joint covariance from the per-subject
    kernel projections and applies the delta method to the difference.
    ``method="permutation"`` swaps the two models' rank-scores within
    subjects at random and counts differences at least as extreme.
    """
    t, e = survival_arrays(time, event)
    a = np.asarray(risks_a, dtype=np.float64).reshape(-1)
    b = np.asarray(risks_b, dtype=np.float64).reshape(-1)
    if a.size != t.size or b.size != t.size:
        raise InvalidInputError("risk vectors and samples differ in length")
    c_a = c_index(a, t, e)
    c_b = c_index(b, t, e)
    delta = c_a - c_b
    if method == "ustat":
        n = t.size
        theta, h = _projections([a, b], t, e)
        cov = 4.0 / n * np.cov(h)
        ua, ub, ut = theta
        g = np.array([1.0 / ut, -1.0 / ut, -(ua - ub) / ut**2])
        var = float(g @ cov @ g)
        se = math.sqrt(var) if var > 0 else 0.0
        if se <= 1e-15 * max(1.0, abs(delta)):
            p = 1.0 if delta == 0 else 0.0
        else:
            p = float(2 * stats.norm.sf(abs(delta) / se))
        return CIndexComparison(c_a, c_b, delta, min(p, 1.0), se, method)
    if method == "permutation":
        return _permutation_test(a, b, t, e, c_a, c_b, n_perm, seed)
    raise InvalidInputError(f"unknown method {method!r}")


def _permutation_test(a, b, t, e, c_a, c_b, n_perm, seed):
    n = t.size
    ra = stats.rankdata(a) / n
    rb = stats.rankdata(b) / n
    usable = np.zeros((n, n))
    for rows, u in _pair_blocks(t, e):
        usable[rows] = u
    pairs = usable.sum()
    cand = (ra, rb)

    def score(x, y):
        return (2.0 * (x[:, None] > y[None, :]) + (x[:, None] == y[None, :])) * usable

    # S[p][q][i, j]: credit of pair (i, j) when i takes model p, j model q
    s = [[score(cand[p], cand[q]) for q in (0, 1)] for p in (0, 1)]
    rs = Streams(seed, domain=3)
    delta = c_a - c_b
    extreme = 0
    batch = 256
    for lo in range(0, n_perm, batch):
        draws = np.arange(lo, min(lo + batch, n_perm))
        # swap[k, i] == 1: subject i exchanges its two scores in draw k
        swap = np.stack([rs.uniform(draws, i) < 0.5 for i in range(n)], axis=1).astype(np.float64)
        keep = 1.0 - swap
        diff = np.zeros(draws.size)
        for p, xp in ((0, keep), (1, swap)):
            for q, xq in ((0, keep), (1, swap)):
                # model a credit uses (p, q); model b uses the complement choice
                m = s[p][q] - s[1 - p][1 - q]
                diff += np.einsum("ki,ij,kj->k", xp, m, xq)
        d_star = diff / (2 * pairs)
        extreme += int(np.sum(np.abs(d_star) >= abs(delta) - 1e-12))
    p = (1 + extreme) / (1 + n_perm)
    return CIndexComparison(c_a, c_b, delta, float(p), float("nan"), "permutation")
