"""
Snippet timeline data model and label-map annotation
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from srg.errors import DimensionError, InstanceValidationError
from srg.models import GroundTruthInstance, VideoMeta


@dataclass
class FeatureSequence:
    """Appearance [d_a, L_S] and motion [d_m, L_S] snippet features"""
    appearance: np.ndarray
    motion: np.ndarray

    def __post_init__(self):
        self.appearance = np.ascontiguousarray(self.appearance, dtype=np.float32)
        self.motion = np.ascontiguousarray(self.motion, dtype=np.float32)
        if self.appearance.ndim != 2 or self.motion.ndim != 2:
            raise DimensionError("feature streams must be [channels, snippets]", axis="rank")
        if self.appearance.shape[1] != self.motion.shape[1]:
            raise DimensionError(
                f"appearance has {self.appearance.shape[1]} snippets, motion has {self.motion.shape[1]}",
                axis="time",
            )

    @property
    def num_snippets(self) -> int:
        return self.appearance.shape[1]

    @property
    def appearance_dim(self) -> int:
        return self.appearance.shape[0]

    @property
    def motion_dim(self) -> int:
        return self.motion.shape[0]


@dataclass
class LabelMaps:
    """
    Ground-truth maps for one video. Rows are reference snippets.
    m_r / valid_r: [L_S, 2N+1], column N is the reference snippet itself.
    m_s / m_e: [L_S, N+2], column k is offset k backward (start) or forward
    (end), column N+1 is "none".
    actionness: [L_S], 1 inside any instance.
    """
    m_r: np.ndarray
    m_s: np.ndarray
    m_e: np.ndarray
    valid_r: np.ndarray
    actionness: np.ndarray

    @property
    def neighbors(self) -> int:
        return (self.m_r.shape[1] - 1) // 2


@dataclass
class VideoRecord:
    meta: VideoMeta
    features: FeatureSequence
    instances: List[GroundTruthInstance]

    @property
    def video_id(self) -> str:
        return self.meta.video_id


def relatedness_width(neighbors: int) -> int:
    return 2 * neighbors + 1


def boundary_width(neighbors: int) -> int:
    return neighbors + 2


def validate_instances(instances: Sequence[GroundTruthInstance], num_snippets: int) -> List[GroundTruthInstance]:
    """
    Return the instances sorted by start; raise if any leaves [0, L_S-1] or
    two overlap.
    """
    ordered = sorted(instances, key=lambda inst: (inst.start, inst.end))
    for inst in ordered:
        if inst.end >= num_snippets:
            raise InstanceValidationError(
                f"instance [{inst.start}, {inst.end}] ends beyond the last snippet {num_snippets - 1}"
            )
    for previous, current in zip(ordered, ordered[1:]):
        if current.start <= previous.end:
            raise InstanceValidationError(
                f"instances [{previous.start}, {previous.end}] and [{current.start}, {current.end}] overlap"
            )
    return ordered


def valid_neighbor_mask(num_snippets: int, neighbors: int) -> np.ndarray:
    """1 where reference i + offset lands on an existing snippet"""
    offsets = np.arange(-neighbors, neighbors + 1)
    absolute = np.arange(num_snippets)[:, None] + offsets[None, :]
    return ((absolute >= 0) & (absolute < num_snippets)).astype(np.float32)


def annotate_label_maps(
    instances: Sequence[GroundTruthInstance],
    num_snippets: int,
    neighbors: int,
) -> LabelMaps:
    """
    Build relatedness, starting and ending label maps.

    A reference snippet inside instance [a, b] marks every neighbor of the
    same instance within the window as related, points its start row at
    offset i - a and its end row at offset b - i. Offsets beyond the window
    fall back to "none". Background rows relate to nothing and point both
    boundary rows at "none".
    """
    ordered = validate_instances(instances, num_snippets)
    width_r = relatedness_width(neighbors)
    width_b = boundary_width(neighbors)
    none_index = neighbors + 1

    m_r = np.zeros((num_snippets, width_r), dtype=np.float32)
    m_s = np.zeros((num_snippets, width_b), dtype=np.float32)
    m_e = np.zeros((num_snippets, width_b), dtype=np.float32)
    actionness = np.zeros(num_snippets, dtype=np.float32)
    start_index = np.full(num_snippets, none_index)
    end_index = np.full(num_snippets, none_index)

    offsets = np.arange(-neighbors, neighbors + 1)
    for inst in ordered:
        rows = np.arange(inst.start, inst.end + 1)
        absolute = rows[:, None] + offsets[None, :]
        m_r[rows] = ((absolute >= inst.start) & (absolute <= inst.end)).astype(np.float32)
        back = rows - inst.start
        forward = inst.end - rows
        start_index[rows] = np.where(back <= neighbors, back, none_index)
        end_index[rows] = np.where(forward <= neighbors, forward, none_index)
        actionness[rows] = 1.0

    all_rows = np.arange(num_snippets)
    m_s[all_rows, start_index] = 1.0
    m_e[all_rows, end_index] = 1.0
    return LabelMaps(
        m_r=m_r,
        m_s=m_s,
        m_e=m_e,
        valid_r=valid_neighbor_mask(num_snippets, neighbors),
        actionness=actionness,
    )
