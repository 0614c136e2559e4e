"""
Proposal post-processing: greedy NMS and relatedness score boosting
"""

from typing import List, Optional, Sequence

import numpy as np

from srg.errors import ArgumentError, DimensionError
from srg.metrics import rank_proposals, tiou_matrix
from srg.models import NmsConfig, Proposal, TemporalInterval


def nms(proposals: Sequence[Proposal], config: NmsConfig) -> List[Proposal]:
    """
    Keep the best remaining proposal, drop every proposal overlapping it by
    more than the threshold, repeat. Output is in rank order.
    """
    ranked = rank_proposals(proposals)
    if not ranked:
        return []
    threshold = config.threshold_for(len(ranked))
    spans = np.array([p.span for p in ranked], dtype=np.float64)
    alive = np.ones(len(ranked), dtype=bool)
    kept = []
    for k in range(len(ranked)):
        if not alive[k]:
            continue
        kept.append(ranked[k])
        rest = np.flatnonzero(alive[k + 1:]) + k + 1
        if rest.size:
            overlaps = tiou_matrix(spans[k:k + 1], spans[rest])[0]
            alive[rest[overlaps > threshold]] = False
    return kept


def snippet_relatedness(o_r: np.ndarray) -> np.ndarray:
    """
    Per-snippet mean of every relatedness cell that points at it: cell (i, c)
    of a [L_S, 2N+1] map describes absolute snippet i + c - N.
    """
    if o_r.ndim != 2 or o_r.shape[1] % 2 != 1:
        raise DimensionError(f"relatedness map must be [L_S, 2N+1], got {o_r.shape}", axis="width")
    num_snippets, width = o_r.shape
    neighbors = (width - 1) // 2
    target = np.arange(num_snippets)[:, None] + np.arange(width)[None, :] - neighbors
    valid = (target >= 0) & (target < num_snippets)
    totals = np.bincount(target[valid], weights=o_r[valid].astype(np.float64), minlength=num_snippets)
    counts = np.bincount(target[valid], minlength=num_snippets)
    return totals / counts


def span_snippets(start: float, end: float, num_snippets: int) -> slice:
    """Snippets covered by a real-valued span, rounded half up and clipped"""
    first = int(np.clip(np.floor(start + 0.5), 0, num_snippets - 1))
    last = int(np.clip(np.floor(end + 0.5), first, num_snippets - 1))
    return slice(first, last + 1)


def boost_scores(proposals: Sequence[Proposal], o_r: Optional[np.ndarray]) -> List[Proposal]:
    """Multiply each confidence by the mean snippet relatedness over its span; order preserved"""
    if o_r is None:
        raise ArgumentError("boosting needs the video's relatedness score map")
    sequence = snippet_relatedness(o_r)
    boosted = []
    for p in proposals:
        support = float(sequence[span_snippets(p.refined_t_s, p.refined_t_e, len(sequence))].mean())
        boosted.append(p.model_copy(update={"c": float(np.clip(p.c * support, 0.0, 1.0))}))
    return boosted


def interval_proposals(
    video_id: str,
    intervals: Sequence[TemporalInterval],
    snippet_scores: np.ndarray,
) -> List[Proposal]:
    """Intervals used directly as proposals, scored by their mean snippet score"""
    return [
        Proposal(
            video_id=video_id,
            refined_t_s=float(iv.t_s),
            refined_t_e=float(iv.t_e),
            c=float(np.clip(snippet_scores[iv.t_s:iv.t_e + 1].mean(), 0.0, 1.0)),
            t_s=iv.t_s,
            t_e=iv.t_e,
        )
        for iv in intervals
    ]
