"""
Temporal interval generation from score maps

Each row of a relatedness map describes one reference snippet. Thresholding
the row and keeping the run of columns that contains the reference itself
gives one interval per row and threshold.
"""

from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np

from srg.errors import ArgumentError, DimensionError
from srg.models import IntervalSource, TemporalInterval
from srg.tign import ScoreMaps

SourceSelection = Literal["RS", "WRS", "both"]


def _check_tau(tau: float):
    if not 0.0 < tau < 1.0:
        raise ArgumentError(f"threshold tau must lie in (0, 1), got {tau}")


def center_runs(scores: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    For every row whose center column reaches tau, the absolute span of the
    maximal run of columns >= tau through the center, clipped to the
    sequence. Returns (rows, t_s, t_e).
    """
    if scores.ndim != 2 or scores.shape[1] % 2 != 1:
        raise DimensionError(f"relatedness map must be [L_S, 2N+1], got {scores.shape}", axis="width")
    num_snippets, width = scores.shape
    neighbors = (width - 1) // 2
    mask = scores >= tau
    rows = np.flatnonzero(mask[:, neighbors])
    if rows.size == 0:
        empty = np.zeros(0, dtype=int)
        return empty, empty, empty

    kept = mask[rows]
    # consecutive supra-threshold columns immediately left / right of the center
    left = np.cumprod(kept[:, neighbors - 1::-1], axis=1).sum(axis=1) if neighbors else np.zeros(rows.size, int)
    right = np.cumprod(kept[:, neighbors + 1:], axis=1).sum(axis=1) if neighbors else np.zeros(rows.size, int)
    t_s = np.maximum(rows - left, 0)
    t_e = np.minimum(rows + right, num_snippets - 1)
    return rows, t_s, t_e


def _to_intervals(runs, source: IntervalSource, tau: float) -> List[TemporalInterval]:
    rows, t_s, t_e = runs
    return [
        TemporalInterval(t_s=int(s), t_e=int(e), source=source, tau=tau, ref_index=int(i))
        for i, s, e in zip(rows, t_s, t_e)
    ]


def gen_intervals_rs(o_r: np.ndarray, tau: float) -> List[TemporalInterval]:
    """One interval per reference row whose own relatedness reaches tau"""
    _check_tau(tau)
    return _to_intervals(center_runs(o_r, tau), "RS", tau)


def binary_weight_map(o_s: np.ndarray, o_e: np.ndarray) -> np.ndarray:
    """
    [L_S, 2N+1] map that is 1 between the most likely start and end of each
    row, in relatedness-row column coordinates. Rows where either head's
    argmax is "none" stay zero. Ties go to the lowest index.
    """
    if o_s.shape != o_e.shape or o_s.ndim != 2:
        raise DimensionError(f"starting map {o_s.shape} and ending map {o_e.shape} differ", axis="boundary")
    num_snippets, width = o_s.shape
    neighbors = width - 2
    none_index = neighbors + 1
    j_s = np.argmax(o_s, axis=1)
    j_e = np.argmax(o_e, axis=1)

    first = neighbors - j_s
    last = neighbors + j_e
    columns = np.arange(2 * neighbors + 1)
    active = (j_s != none_index) & (j_e != none_index) & (first <= last)
    inside = (columns[None, :] >= first[:, None]) & (columns[None, :] <= last[:, None])
    return (inside & active[:, None]).astype(np.float32)


def weighted_relatedness(o_r: np.ndarray, o_s: np.ndarray, o_e: np.ndarray) -> np.ndarray:
    weights = binary_weight_map(o_s, o_e)
    if weights.shape != o_r.shape:
        raise DimensionError(f"weight map {weights.shape} does not match relatedness map {o_r.shape}", axis="width")
    return (o_r + weights) / 2.0


def gen_intervals_wrs(o_r: np.ndarray, o_s: np.ndarray, o_e: np.ndarray, tau: float) -> List[TemporalInterval]:
    """Same selection as gen_intervals_rs on the relatedness map averaged with the boundary weight map"""
    _check_tau(tau)
    return _to_intervals(center_runs(weighted_relatedness(o_r, o_s, o_e), tau), "WRS", tau)


def gen_all(
    maps: ScoreMaps,
    tau_values: Sequence[float],
    source: SourceSelection = "both",
) -> List[TemporalInterval]:
    """
    Union of intervals over every tau, relatedness intervals before weighted
    ones within a tau. Duplicate spans keep their first occurrence.
    """
    if not tau_values:
        raise ArgumentError("at least one tau value is required")
    o_r, o_s, o_e = maps.arrays()
    weighted = weighted_relatedness(o_r, o_s, o_e) if source != "RS" else None

    seen = set()
    merged: List[TemporalInterval] = []
    for tau in tau_values:
        _check_tau(tau)
        batches = []
        if source in ("RS", "both"):
            batches.append(_to_intervals(center_runs(o_r, tau), "RS", tau))
        if source in ("WRS", "both"):
            batches.append(_to_intervals(center_runs(weighted, tau), "WRS", tau))
        for batch in batches:
            for interval in batch:
                key = (interval.t_s, interval.t_e)
                if key not in seen:
                    seen.add(key)
                    merged.append(interval)
    return merged


def spans_by_source(maps: ScoreMaps, tau_values: Sequence[float]) -> Dict[str, List[Tuple[int, int]]]:
    """
    RS and WRS spans, each deduplicated on its own. A span both sources find
    is listed under both, unlike the merged output of gen_all.
    """
    return {source: [(iv.t_s, iv.t_e) for iv in gen_all(maps, tau_values, source)] for source in ("RS", "WRS")}
