"""
Temporal interval generation network: snippet features -> relatedness,
starting and ending score maps
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from srg.config import PROBABILITY_EPS, RunConfig
from srg.errors import ArgumentError, ConfigurationError, DimensionError, TrainingError
from srg.helpers import rng_stream
from srg.layers import (
    Params,
    apply_conv,
    attention_block,
    cm_block,
    init_attention_block,
    init_cm_block,
    init_conv,
    init_pn_block,
    pn_block,
)
from srg.logger import log_info, log_training_epoch
from srg.optim import Adam, DecaySchedule
from srg.tensor import (
    ComputationTape,
    Tensor,
    backward,
    clamp,
    concat,
    constant,
    log,
    mul,
    reduce_mean,
    reduce_sum,
    sigmoid,
    softmax_rows,
    swap_last,
)
from srg.video import LabelMaps, VideoRecord, annotate_label_maps, boundary_width, relatedness_width


@dataclass(frozen=True)
class TignArchitecture:
    appearance_dim: int
    motion_dim: int
    neighbors: int
    hidden: int = 32
    block: Literal["PN", "CM"] = "PN"
    levels: Tuple[Tuple[int, int], ...] = ((3, 1), (5, 3), (7, 5), (15, 7))
    head_kernel: int = 3
    attention_reduction: int = 8
    attention_kernel: int = 7
    actionness_head: bool = False

    def __post_init__(self):
        if self.head_kernel % 2 == 0:
            raise ConfigurationError(f"head_kernel must be odd to keep the sequence length, got {self.head_kernel}")

    @property
    def width_r(self) -> int:
        return relatedness_width(self.neighbors)

    @property
    def width_s(self) -> int:
        return boundary_width(self.neighbors)

    @property
    def width_e(self) -> int:
        return boundary_width(self.neighbors)

    @classmethod
    def from_config(cls, config: RunConfig, block: Optional[str] = None) -> "TignArchitecture":
        return cls(
            appearance_dim=config.appearance_dim,
            motion_dim=config.motion_dim,
            neighbors=config.neighbors,
            hidden=config.tign_hidden,
            block=block or config.tign_block,
            levels=tuple(tuple(level) for level in config.tign_levels),
            head_kernel=config.head_kernel,
            attention_reduction=config.attention_reduction,
            attention_kernel=config.attention_kernel,
            actionness_head=config.actionness_head,
        )


@dataclass
class ScoreMaps:
    """
    o_r: [L_S, 2N+1] in (0, 1); o_s, o_e: [L_S, N+2], rows sum to 1.
    actionness: [L_S] when the optional head is enabled.
    """
    o_r: Tensor
    o_s: Tensor
    o_e: Tensor
    actionness: Optional[Tensor] = None

    @property
    def num_snippets(self) -> int:
        return self.o_r.shape[0]

    @property
    def neighbors(self) -> int:
        return (self.o_r.shape[1] - 1) // 2

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.o_r.numpy(), self.o_s.numpy(), self.o_e.numpy()


def init_tign(arch: TignArchitecture, rng: np.random.Generator) -> Params:
    params: Params = {}
    init_attention_block(
        params, rng, "tign.att_a", arch.appearance_dim, arch.attention_reduction, arch.attention_kernel
    )
    init_attention_block(params, rng, "tign.att_m", arch.motion_dim, arch.attention_reduction, arch.attention_kernel)
    fused = arch.appearance_dim + arch.motion_dim
    if arch.block == "PN":
        init_pn_block(params, rng, "tign.pn", fused, arch.hidden, arch.levels)
    else:
        init_cm_block(params, rng, "tign.cm", fused, arch.hidden)
    init_conv(params, rng, "tign.head_r", arch.width_r, arch.hidden, arch.head_kernel)
    init_conv(params, rng, "tign.head_s", arch.width_s, arch.hidden, arch.head_kernel)
    init_conv(params, rng, "tign.head_e", arch.width_e, arch.hidden, arch.head_kernel)
    if arch.actionness_head:
        init_conv(params, rng, "tign.head_a", 1, arch.hidden, arch.head_kernel)
    return params


def tign_forward(appearance: np.ndarray, motion: np.ndarray, params: Params, arch: TignArchitecture) -> ScoreMaps:
    """
    Whole-sequence forward pass. appearance: [d_a, L_S], motion: [d_m, L_S].
    """
    if appearance.shape[0] != arch.appearance_dim or motion.shape[0] != arch.motion_dim:
        raise DimensionError(
            f"features are {appearance.shape[0]}+{motion.shape[0]} channels, "
            f"network expects {arch.appearance_dim}+{arch.motion_dim}",
            axis="channel",
        )
    a = attention_block(constant(appearance), params, "tign.att_a")
    m = attention_block(constant(motion), params, "tign.att_m")
    x = concat([a, m], axis=0)
    if arch.block == "PN":
        h = pn_block(x, params, "tign.pn", arch.levels)
    else:
        h = cm_block(x, params, "tign.cm")

    padding = arch.head_kernel // 2
    o_r = sigmoid(swap_last(apply_conv(params, "tign.head_r", h, padding=padding)))
    o_s = softmax_rows(swap_last(apply_conv(params, "tign.head_s", h, padding=padding)))
    o_e = softmax_rows(swap_last(apply_conv(params, "tign.head_e", h, padding=padding)))
    actionness = None
    if arch.actionness_head:
        actionness = sigmoid(apply_conv(params, "tign.head_a", h, padding=padding)[0])
    return ScoreMaps(o_r=o_r, o_s=o_s, o_e=o_e, actionness=actionness)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def _check_map(name: str, prediction: Tensor, target: np.ndarray):
    if prediction.shape != target.shape:
        raise DimensionError(f"{name}: prediction {prediction.shape} vs labels {target.shape}", axis=name)


def _binary_cross_entropy(p: Tensor, target: np.ndarray, weight: np.ndarray, eps: float) -> Tensor:
    """Sum of weighted BCE terms divided by the weight total"""
    p = clamp(p, eps, 1.0 - eps)
    terms = mul(constant(target), log(p)) + mul(constant(1.0 - target), log(1.0 - p))
    total = reduce_sum(mul(constant(weight), terms))
    return total * (-1.0 / max(float(weight.sum()), 1.0))


def _row_cross_entropy(p: Tensor, target: np.ndarray, eps: float) -> Tensor:
    p = clamp(p, eps, 1.0 - eps)
    per_row = reduce_sum(mul(constant(target), log(p)), axis=-1)
    return -reduce_mean(per_row)


def tign_loss_terms(maps: ScoreMaps, labels: LabelMaps, eps: float = PROBABILITY_EPS) -> Dict[str, Tensor]:
    """
    Relatedness BCE averaged over in-range neighbor cells; starting and ending
    cross-entropy averaged over rows; actionness BCE when that head exists.
    """
    _check_map("o_r", maps.o_r, labels.m_r)
    _check_map("o_s", maps.o_s, labels.m_s)
    _check_map("o_e", maps.o_e, labels.m_e)
    terms = {
        "relatedness": _binary_cross_entropy(maps.o_r, labels.m_r, labels.valid_r, eps),
        "start": _row_cross_entropy(maps.o_s, labels.m_s, eps),
        "end": _row_cross_entropy(maps.o_e, labels.m_e, eps),
    }
    if maps.actionness is not None:
        _check_map("actionness", maps.actionness, labels.actionness)
        terms["actionness"] = _binary_cross_entropy(
            maps.actionness, labels.actionness, np.ones_like(labels.actionness), eps
        )
    return terms


def tign_loss(maps: ScoreMaps, labels: LabelMaps, eps: float = PROBABILITY_EPS) -> Tensor:
    terms = list(tign_loss_terms(maps, labels, eps).values())
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainingResult:
    step_losses: List[float] = field(default_factory=list)
    epoch_means: List[float] = field(default_factory=list)
    steps: int = 0

    @property
    def initial_loss(self) -> float:
        return self.epoch_means[0] if self.epoch_means else math.nan

    @property
    def final_loss(self) -> float:
        return self.epoch_means[-1] if self.epoch_means else math.nan


def train_tign(
    videos: Sequence[VideoRecord],
    params: Params,
    arch: TignArchitecture,
    schedule: DecaySchedule,
    epochs: int,
    seed: int,
    tag: str = "tign",
) -> TrainingResult:
    """
    Adam over one video per step, video order shuffled per epoch from the
    seed. Mutates `params` in place.
    """
    if not videos:
        raise ArgumentError("TIGN training needs at least one video")
    labels = [annotate_label_maps(v.instances, v.features.num_snippets, arch.neighbors) for v in videos]
    optimizer = Adam(list(params.values()))
    result = TrainingResult()

    for epoch in range(epochs):
        order = rng_stream(seed, tag, "order", epoch).permutation(len(videos))
        epoch_losses = []
        for index in order:
            video = videos[index]
            with ComputationTape() as tape:
                maps = tign_forward(video.features.appearance, video.features.motion, params, arch)
                loss = tign_loss(maps, labels[index])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"TIGN loss became {value} on {video.video_id}", step=result.steps)
            optimizer.zero_grad()
            backward(tape, loss)
            lr = schedule.lr(result.steps)
            optimizer.step(lr)
            result.steps += 1
            result.step_losses.append(value)
            epoch_losses.append(value)
        result.epoch_means.append(float(np.mean(epoch_losses)))
        log_training_epoch(tag, epoch, result.epoch_means[-1], schedule.lr(result.steps), result.steps)

    log_info(
        "TIGN training finished",
        {"network": tag, "steps": result.steps, "initial_loss": result.initial_loss, "final_loss": result.final_loss},
    )
    return result
