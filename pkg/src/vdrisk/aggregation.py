"""Clip sampling, clip->video->individual aggregation and stratified accuracy."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .discrimination import roc
from .errors import InvalidInputError, UndefinedMetricError

CLASSIFY_THRESHOLD = 0.5
STRATIFY_THRESHOLD = 0.67
DEFAULT_AGE_BINS = ((35, 45), (45, 55), (55, 65), (65, 75), (75, 85))


@dataclass(frozen=True)
class ClipPlan:
    n_frames: int
    clip_length: int
    ranges: tuple


def plan_clips(n_frames: int, clip_length: int, max_clips: int) -> ClipPlan:
    """Uniformly spaced, non-overlapping clips of ``clip_length`` frames.

    With ``n`` clips the starts are ``floor(i * (T - L) / (n - 1))``; a
    single clip is centred.
    """
    if clip_length < 1 or n_frames < clip_length:
        raise InvalidInputError(f"need n_frames >= clip_length >= 1, got {n_frames}, {clip_length}")
    if max_clips < 1:
        raise InvalidInputError("max_clips must be at least 1")
    n = min(max_clips, n_frames // clip_length)
    if n == 1:
        starts = [(n_frames - clip_length) // 2]
    else:
        # integer floor division: float spacing can land the last clip one frame short
        starts = [i * (n_frames - clip_length) // (n - 1) for i in range(n)]
        # spacing >= L already rules out overlap; the pass guards rounding
        for i in range(1, n):
            starts[i] = max(starts[i], starts[i - 1] + clip_length)
        if starts[-1] + clip_length > n_frames:
            raise InvalidInputError("clips do not fit")  # unreachable for n <= T // L
    return ClipPlan(n_frames, clip_length, tuple((s, s + clip_length) for s in starts))


@dataclass(frozen=True)
class IndividualPrediction:
    participant_id: str
    video_means: tuple
    confidence: float
    label: bool


def aggregate(videos, participant_id: str = "", threshold: float = CLASSIFY_THRESHOLD) -> IndividualPrediction:
    """Mean over clips within each video, then mean of the video means.

    ``videos`` is a sequence of clip-confidence sequences, or a mapping from
    video id to one.
    """
    items = list(videos.items()) if isinstance(videos, Mapping) else list(enumerate(videos))
    if not items:
        raise InvalidInputError(f"{participant_id or 'individual'} has no videos")
    means = []
    for vid, clips in items:
        clips = np.asarray(clips, dtype=np.float64).reshape(-1)
        if clips.size == 0:
            raise InvalidInputError(f"video {vid!r} has no clips")
        if np.any((clips < 0) | (clips > 1)):
            raise InvalidInputError(f"video {vid!r}: confidences must lie in [0, 1]")
        means.append(float(np.mean(clips)))
    conf = float(np.mean(means))
    return IndividualPrediction(participant_id, tuple(means), conf, conf >= threshold)


def classify_vd(confidence: float, threshold: float = CLASSIFY_THRESHOLD) -> str:
    return "high" if confidence >= threshold else "low"


def read_predictions_csv(path) -> dict:
    """``participant_id, video_id, clip_index, confidence`` rows to
    ``{participant: {video: [confidences by clip_index]}}`` (sorted keys)."""
    nested = defaultdict(lambda: defaultdict(list))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=1):
            try:
                clip = int(row["clip_index"])
                conf = float(row["confidence"])
            except (KeyError, ValueError) as exc:
                raise InvalidInputError(f"predictions row {row_no}: {exc}") from None
            nested[row["participant_id"]][row["video_id"]].append((clip, conf))
    out = {}
    for pid in sorted(nested):
        out[pid] = {vid: [c for _, c in sorted(clips)] for vid, clips in sorted(nested[pid].items())}
    return out


def aggregate_all(nested: Mapping, threshold: float = CLASSIFY_THRESHOLD) -> list[IndividualPrediction]:
    return [aggregate(videos, pid, threshold) for pid, videos in nested.items()]


def write_predictions_csv(path, nested: Mapping) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "video_id", "clip_index", "confidence"])
        for pid, videos in nested.items():
            for vid, clips in videos.items():
                for k, c in enumerate(clips):
                    w.writerow([pid, vid, k, format(float(c), ".10g")])


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StratumCounts:
    age_bin: tuple
    sex: str
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def rates(self) -> dict:
        """Within-stratum rates; NaN where a denominator is zero."""
        def div(a, b):
            return a / b if b else math.nan
        return {"tpr": div(self.tp, self.tp + self.fn), "tnr": div(self.tn, self.tn + self.fp),
                "ppv": div(self.tp, self.tp + self.fp), "accuracy": div(self.tp + self.tn, self.n)}


@dataclass
class StratifiedReport:
    strata: list = field(default_factory=list)
    balanced_accuracy: float = math.nan
    f1: float = math.nan
    auc: float = math.nan
    n: int = 0


def balanced_accuracy(pred, labels) -> float:
    pred = np.asarray(pred, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    if y.all() or not y.any():
        raise UndefinedMetricError("balanced accuracy needs both classes")
    return 0.5 * (pred[y].mean() + (~pred[~y]).mean())


def f1_score(pred, labels) -> float:
    pred = np.asarray(pred, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    tp = int(np.sum(pred & y))
    denom = 2 * tp + int(np.sum(pred & ~y)) + int(np.sum(~pred & y))
    return 2 * tp / denom if denom else math.nan


def _age_bin_index(ages: np.ndarray, bins: Sequence[tuple]) -> np.ndarray:
    """Half-open bins, the last one closed on the right."""
    idx = np.full(ages.size, -1)
    for k, (lo, hi) in enumerate(bins):
        upper = ages <= hi if k == len(bins) - 1 else ages < hi
        idx[(ages >= lo) & upper & (idx < 0)] = k
    return idx


def stratified_metrics(confidences, labels, ages, sexes, age_bins: Sequence[tuple] = DEFAULT_AGE_BINS,
                       threshold: float = CLASSIFY_THRESHOLD) -> StratifiedReport:
    """Confusion counts per (age bin, sex) plus overall bACC, F1 and AUC."""
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=bool).reshape(-1)
    ages = np.asarray(ages, dtype=np.float64).reshape(-1)
    sexes = np.asarray(sexes).reshape(-1)
    if not (conf.size == y.size == ages.size == sexes.size):
        raise InvalidInputError("aligned vectors required")
    bin_idx = _age_bin_index(ages, age_bins)
    if np.any(bin_idx < 0):
        bad = ages[bin_idx < 0][0]
        raise InvalidInputError(f"age {bad:g} falls outside every age bin")
    pred = conf >= threshold
    report = StratifiedReport(n=int(conf.size))
    for k, b in enumerate(age_bins):
        for sex in ("male", "female"):
            m = (bin_idx == k) & (sexes == sex)
            report.strata.append(StratumCounts(
                tuple(b), sex,
                tp=int(np.sum(pred[m] & y[m])), fp=int(np.sum(pred[m] & ~y[m])),
                tn=int(np.sum(~pred[m] & ~y[m])), fn=int(np.sum(~pred[m] & y[m]))))
    if y.any() and not y.all():
        report.balanced_accuracy = float(balanced_accuracy(pred, y))
        report.auc = roc(conf, y).auc
    report.f1 = f1_score(pred, y)
    return report


def write_report_csv(path, report: StratifiedReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["age_low", "age_high", "sex", "n", "tp", "fp", "tn", "fn",
                    "tpr", "tnr", "ppv", "accuracy", "fraction_of_total"])
        for s in report.strata:
            r = s.rates()
            w.writerow([s.age_bin[0], s.age_bin[1], s.sex, s.n, s.tp, s.fp, s.tn, s.fn]
                       + ["" if math.isnan(r[k]) else format(r[k], ".10g")
                          for k in ("tpr", "tnr", "ppv", "accuracy")]
                       + [format(s.n / report.n, ".10g") if report.n else ""])
