"""Occlusion attribution, representative-video selection and map summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError
from .scorer import Mask
from .vten import as_video

VARIANTS = ("masked_sequence", "spatiotemporal")


@dataclass(frozen=True)
class MaskSpec:
    """Occlusion geometry.

    ``masked_sequence`` hides a patch in every frame and yields an (H, W)
    map; ``spatiotemporal`` hides it in a window of ``window`` frames and
    yields a (T, H, W) map.
    """

    variant: str = "masked_sequence"
    patch: tuple = (16, 16)
    stride: tuple = (16, 16)
    window: int = 2
    temporal_stride: int | None = None
    baseline: float = 0.0

    def validate(self, shape) -> None:
        T, H, W = shape
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {self.variant!r}")
        ph, pw = self.patch
        if not (1 <= ph <= H and 1 <= pw <= W):
            raise InvalidInputError(f"patch {self.patch} does not fit frames of {H}x{W}")
        if min(self.stride) < 1:
            raise InvalidInputError("stride must be >= 1")
        if self.variant == "spatiotemporal":
            if not (1 <= self.window <= T):
                raise InvalidInputError(f"window {self.window} does not fit {T} frames")
            if self.temporal_stride is not None and self.temporal_stride < 1:
                raise InvalidInputError("temporal stride must be >= 1")


def _starts(length: int, size: int, stride: int) -> list[int]:
    """Window starts at multiples of ``stride`` plus an edge-aligned window
    when the grid would leave trailing cells uncovered."""
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] + size < length:
        starts.append(length - size)
    return starts


def occlusion_masks(shape, spec: MaskSpec) -> list[Mask]:
    T, H, W = shape
    spec.validate(shape)
    rows = _starts(H, spec.patch[0], spec.stride[0])
    cols = _starts(W, spec.patch[1], spec.stride[1])
    if spec.variant == "masked_sequence":
        spans = [(0, T)]
    else:
        ts = spec.temporal_stride or spec.window
        spans = [(t, t + spec.window) for t in _starts(T, spec.window, ts)]
    return [Mask(t0, t1, r, r + spec.patch[0], c, c + spec.patch[1], spec.baseline)
            for t0, t1 in spans for r in rows for c in cols]


def occlude(video, spec: MaskSpec, scorer, video_path=None) -> np.ndarray:
    """Attribution map: score(original) - score(occluded), averaged per cell
    over every mask that covers it.  Positive values mark evidence toward a
    high score."""
    v = as_video(video)
    masks = occlusion_masks(v.shape, spec)
    scores = scorer.score(v, [None] + masks, video_path=video_path)
    if len(scores) != len(masks) + 1:
        raise InvalidInputError("scorer returned the wrong number of scores")
    base = scores[0]
    T, H, W = v.shape
    acc = np.zeros((T, H, W) if spec.variant == "spatiotemporal" else (H, W))
    count = np.zeros_like(acc)
    for m, s in zip(masks, scores[1:]):
        diff = base - s
        if spec.variant == "spatiotemporal":
            acc[m.t0:m.t1, m.r0:m.r1, m.c0:m.c1] += diff
            count[m.t0:m.t1, m.r0:m.r1, m.c0:m.c1] += 1
        else:
            acc[m.r0:m.r1, m.c0:m.c1] += diff
            count[m.r0:m.r1, m.c0:m.c1] += 1
    return acc / count


def dataset_mean(videos: Sequence) -> float:
    """Mean intensity over a video set, usable as ``MaskSpec.baseline``."""
    total = sum(float(np.sum(as_video(v), dtype=np.float64)) for v in videos)
    return total / sum(as_video(v).size for v in videos)


def select_representative(videos: Sequence, n: int) -> list[int]:
    """Indices of the ``n`` videos whose time-averaged frame lies closest
    (Euclidean) to the mean of all time-averaged frames; ties keep input order."""
    if not videos:
        raise InvalidInputError("no videos given")
    frames = [as_video(v).astype(np.float64).mean(axis=0) for v in videos]
    shape = frames[0].shape
    if any(f.shape != shape for f in frames) or any(as_video(v).shape != as_video(videos[0]).shape for v in videos):
        raise InvalidInputError("videos must share dimensions")
    if not (0 <= n <= len(videos)):
        raise InvalidInputError(f"n must lie in [0, {len(videos)}]")
    stack = np.stack(frames)
    center = stack.mean(axis=0)
    dist = np.sqrt(((stack - center) ** 2).reshape(len(frames), -1).sum(axis=1))
    return [int(i) for i in np.argsort(dist, kind="stable")[:n]]


@dataclass(frozen=True)
class SummaryMaps:
    mean: np.ndarray
    median: np.ndarray
    top_positive: np.ndarray
    top_negative: np.ndarray
    count: int


def summarize(maps: Sequence, top_frac: float = 0.05) -> SummaryMaps:
    """Cellwise mean and median plus top-fraction indicator maps.

    The indicators mark the ``ceil(top_frac * cells)`` highest (lowest) cells
    of the mean map by nearest rank, restricted to strictly positive
    (negative) values; rank ties resolve by flat index.
    """
    if not maps:
        raise InvalidInputError("no attribution maps to summarize")
    arrays = [np.asarray(m, dtype=np.float64) for m in maps]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise InvalidInputError("attribution maps differ in shape")
    stack = np.stack(arrays)
    mean = stack.mean(axis=0)
    median = np.median(stack, axis=0)
    flat = mean.reshape(-1)
    k = int(math.ceil(top_frac * flat.size - 1e-9))
    order = np.lexsort((np.arange(flat.size), -flat))[:k]
    top_pos = np.zeros(flat.size, dtype=np.uint8)
    top_pos[order[flat[order] > 0]] = 1
    order = np.lexsort((np.arange(flat.size), flat))[:k]
    top_neg = np.zeros(flat.size, dtype=np.uint8)
    top_neg[order[flat[order] < 0]] = 1
    return SummaryMaps(mean, median, top_pos.reshape(mean.shape), top_neg.reshape(mean.shape), len(maps))
