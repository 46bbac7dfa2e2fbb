"""Black-box occlusion attribution for video scorers."""

from .occlusion import MaskSpec, SummaryMaps, dataset_mean, occlude, occlusion_masks, select_representative, summarize
from .scorer import CallableScorer, LinearScorer, Mask, SubprocessScorer, apply_mask, serve_linear
from .vten import read_vten, write_vten

__all__ = [
    "MaskSpec", "SummaryMaps", "dataset_mean", "occlude", "occlusion_masks", "select_representative",
    "summarize", "CallableScorer", "LinearScorer", "Mask", "SubprocessScorer", "apply_mask",
    "serve_linear", "read_vten", "write_vten",
]
