"""
Proposal quality metrics: tIoU, Recall@tIoU@AN, AR@AN, AUC of AR vs AN
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from srg.errors import ArgumentError
from srg.helpers import rng_stream
from srg.models import GroundTruthInstance, MetricConfig, Proposal

Span = Tuple[float, float]


def tiou(a: Span, b: Span) -> float:
    """Overlap of inclusive snippet spans, read as real intervals [s, e + 1)"""
    for span in (a, b):
        if span[1] < span[0]:
            raise ArgumentError(f"degenerate span {span}")
    intersection = max(0.0, min(a[1], b[1]) + 1.0 - max(a[0], b[0]))
    union = (a[1] - a[0] + 1.0) + (b[1] - b[0] + 1.0) - intersection
    return intersection / union


def tiou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[n, 2] x [m, 2] spans -> [n, m] tIoU"""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if np.any(a[:, 1] < a[:, 0]) or np.any(b[:, 1] < b[:, 0]):
        raise ArgumentError("degenerate span in tIoU input")
    start = np.maximum(a[:, None, 0], b[None, :, 0])
    end = np.minimum(a[:, None, 1], b[None, :, 1]) + 1.0
    intersection = np.clip(end - start, 0.0, None)
    union = (a[:, 1] - a[:, 0] + 1.0)[:, None] + (b[:, 1] - b[:, 0] + 1.0)[None, :] - intersection
    return intersection / union


def instance_spans(instances: Sequence[GroundTruthInstance]) -> np.ndarray:
    return np.array([(i.start, i.end) for i in instances], dtype=np.float64).reshape(-1, 2)


def rank_proposals(proposals: Sequence[Proposal]) -> List[Proposal]:
    """Confidence descending; ties broken by earlier start, then earlier end"""
    return sorted(proposals, key=lambda p: (-p.c, p.refined_t_s, p.refined_t_e))


class RecallTable:
    """
    Best tIoU reached by the top-k proposals of each video for every k, so any
    (threshold, AN) pair is a lookup.
    """

    def __init__(
        self,
        proposals: Mapping[str, Sequence[Proposal]],
        ground_truth: Mapping[str, Sequence[GroundTruthInstance]],
        normalization: str = "per_video",
    ):
        self.total = sum(len(v) for v in ground_truth.values())
        if self.total == 0:
            raise ArgumentError("ground truth holds no instances")
        self.normalization = normalization
        self.num_videos = len(ground_truth)
        self.videos = sorted(ground_truth)
        self._best: Dict[str, np.ndarray] = {}
        self._ranks: Dict[str, np.ndarray] = {}

        ranked = {vid: rank_proposals(proposals.get(vid, [])) for vid in self.videos}
        for vid in self.videos:
            gt = instance_spans(ground_truth[vid])
            spans = np.array([p.span for p in ranked[vid]], dtype=np.float64).reshape(-1, 2)
            if len(gt) and len(spans):
                # row k: best tIoU per instance among the first k + 1 proposals
                self._best[vid] = np.maximum.accumulate(tiou_matrix(spans, gt), axis=0)
            else:
                self._best[vid] = np.zeros((len(spans), len(gt)))

        if normalization == "corpus":
            pooled = [(-p.c, vid, p.refined_t_s, p.refined_t_e, k) for vid in self.videos for k, p in enumerate(ranked[vid])]
            pooled.sort()
            positions: Dict[str, List[int]] = {vid: [] for vid in self.videos}
            for rank, entry in enumerate(pooled):
                positions[entry[1]].append(rank)
            self._ranks = {vid: np.array(ranks, dtype=np.int64) for vid, ranks in positions.items()}
        elif normalization != "per_video":
            raise ArgumentError(f"unknown AN normalization {normalization!r}")

    def _kept(self, vid: str, an: int) -> int:
        if self.normalization == "per_video":
            return min(an, self._best[vid].shape[0])
        return int(np.searchsorted(self._ranks[vid], an * self.num_videos))

    def recall(self, threshold: float, an: int) -> float:
        if an < 1:
            raise ArgumentError(f"AN must be >= 1, got {an}")
        recalled = 0
        for vid in self.videos:
            kept = self._kept(vid, an)
            if kept:
                recalled += int(np.count_nonzero(self._best[vid][kept - 1] >= threshold))
        return recalled / self.total

    def average_recall(self, thresholds: Sequence[float], an: int) -> float:
        return float(np.mean([self.recall(t, an) for t in thresholds]))

    def auc(self, thresholds: Sequence[float], an_range: Tuple[int, int]) -> float:
        low, high = an_range
        return 100.0 * float(np.mean([self.average_recall(thresholds, an) for an in range(low, high + 1)]))


def recall_at(
    proposals: Mapping[str, Sequence[Proposal]],
    ground_truth: Mapping[str, Sequence[GroundTruthInstance]],
    threshold: float,
    an: int,
    normalization: str = "per_video",
) -> float:
    return RecallTable(proposals, ground_truth, normalization).recall(threshold, an)


def average_recall(
    proposals: Mapping[str, Sequence[Proposal]],
    ground_truth: Mapping[str, Sequence[GroundTruthInstance]],
    config: MetricConfig,
    an: int,
) -> float:
    return RecallTable(proposals, ground_truth, config.an_normalization).average_recall(config.tiou_thresholds, an)


def auc_ar_an(
    proposals: Mapping[str, Sequence[Proposal]],
    ground_truth: Mapping[str, Sequence[GroundTruthInstance]],
    config: MetricConfig,
) -> float:
    """Mean AR@AN over the configured AN range, as a percentage"""
    table = RecallTable(proposals, ground_truth, config.an_normalization)
    return table.auc(config.tiou_thresholds, config.auc_an_range)


def interval_recall(
    spans: Mapping[str, Sequence[Span]],
    ground_truth: Mapping[str, Sequence[GroundTruthInstance]],
    thresholds: Sequence[float],
) -> List[float]:
    """Recall of an untruncated span set at each threshold"""
    total = sum(len(v) for v in ground_truth.values())
    if total == 0:
        raise ArgumentError("ground truth holds no instances")
    best = []
    for vid, instances in ground_truth.items():
        if not instances:
            continue
        candidates = np.array(spans.get(vid, []), dtype=np.float64).reshape(-1, 2)
        if len(candidates):
            best.append(tiou_matrix(candidates, instance_spans(instances)).max(axis=0))
        else:
            best.append(np.zeros(len(instances)))
    best_all = np.concatenate(best)
    return [float(np.count_nonzero(best_all >= t)) / total for t in thresholds]


def random_proposals(
    num_snippets: Mapping[str, int],
    counts: Mapping[str, int],
    seed: int,
) -> Dict[str, List[Proposal]]:
    """
    Uniform random spans per video: two endpoints drawn uniformly over the
    timeline, random confidence for the ranking.
    """
    result: Dict[str, List[Proposal]] = {}
    for vid in sorted(num_snippets):
        rng = rng_stream(seed, "baseline", vid)
        count = counts.get(vid, 0)
        ends = np.sort(rng.integers(0, num_snippets[vid], size=(count, 2)), axis=1)
        scores = rng.random(count)
        result[vid] = [
            Proposal(video_id=vid, refined_t_s=float(s), refined_t_e=float(e), c=float(c))
            for (s, e), c in zip(ends, scores)
        ]
    return result


# ---------------------------------------------------------------------------
# CSV rows: metric, AN, tIoU, value
# ---------------------------------------------------------------------------

@dataclass
class MetricRow:
    metric: str
    an: Optional[int]
    tiou: Optional[float]
    value: float

    def render(self) -> str:
        an = "" if self.an is None else str(self.an)
        threshold = "" if self.tiou is None else f"{self.tiou:.2f}"
        return f"{self.metric},{an},{threshold},{self.value:.6f}"


METRICS_HEADER = "metric,AN,tIoU,value"


def proposal_metric_rows(table: RecallTable, config: MetricConfig, prefix: str = "") -> List[MetricRow]:
    """Recall vs tIoU per AN, AR per AN, the AR vs AN curve and AUC"""
    rows = []
    for an in config.an_values:
        for threshold in config.tiou_thresholds:
            rows.append(MetricRow(f"{prefix}recall", an, threshold, table.recall(threshold, an)))
    for an in config.an_values:
        rows.append(MetricRow(f"{prefix}AR", an, None, table.average_recall(config.tiou_thresholds, an)))
    low, high = config.auc_an_range
    curve = [table.average_recall(config.tiou_thresholds, an) for an in range(low, high + 1)]
    for an, value in zip(range(low, high + 1), curve):
        rows.append(MetricRow(f"{prefix}AR_curve", an, None, value))
    rows.append(MetricRow(f"{prefix}AUC", None, None, 100.0 * float(np.mean(curve))))
    return rows


def format_metric_rows(rows: Iterable[MetricRow], header: bool = True) -> str:
    lines = [METRICS_HEADER] if header else []
    lines.extend(row.render() for row in rows)
    return "\n".join(lines) + "\n"
