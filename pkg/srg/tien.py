"""
Temporal interval evaluation network: per-interval confidence and boundary
offsets, training sample selection and boundary refinement
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np

from srg.config import MAX_OFFSET, NEGATIVE_TIOU, POSITIVE_TIOU, RunConfig
from srg.errors import ArgumentError, DimensionError, TrainingError
from srg.helpers import rng_stream
from srg.layers import (
    Params,
    attention_block,
    cm_block,
    he_normal,
    init_attention_block,
    init_cm_block,
    init_pn_block,
    pn_block,
)
from srg.logger import log_info, log_training_epoch
from srg.metrics import instance_spans, tiou_matrix
from srg.models import GroundTruthInstance, Proposal, TemporalInterval, TrainingSample
from srg.optim import Adam, DecaySchedule
from srg.tensor import (
    ComputationTape,
    Tensor,
    absolute,
    backward,
    concat,
    constant,
    interpolation_matrix,
    linear_upsample,
    matmul,
    mul,
    parameter,
    reduce_mean,
    sigmoid,
    take,
)
from srg.tign import TrainingResult
from srg.video import FeatureSequence


@dataclass(frozen=True)
class TienArchitecture:
    appearance_dim: int
    motion_dim: int
    hidden: int = 16
    block: Literal["PN", "CM"] = "PN"
    levels: Tuple[Tuple[int, int], ...] = ((1, 3), (3, 3), (5, 3), (7, 3))
    feature_length: int = 128
    context_length: int = 20
    attention_reduction: int = 8
    attention_kernel: int = 7

    @classmethod
    def from_config(cls, config: RunConfig, block: Optional[str] = None) -> "TienArchitecture":
        return cls(
            appearance_dim=config.appearance_dim,
            motion_dim=config.motion_dim,
            hidden=config.tien_hidden,
            block=block or config.tien_block,
            levels=tuple(tuple(level) for level in config.tien_levels),
            feature_length=config.feature_length,
            context_length=config.context_length,
            attention_reduction=config.attention_reduction,
            attention_kernel=config.attention_kernel,
        )


@dataclass
class IntervalFeature:
    """Appearance [d_a, L_fix] and motion [d_m, L_fix] of one context-padded interval"""
    appearance: np.ndarray
    motion: np.ndarray
    t_s: int
    t_e: int


@dataclass
class TienOutput:
    """Per-interval confidence in (0, 1) and offsets in (-0.5, 0.5), each [B]"""
    c: Tensor
    o_s: Tensor
    o_e: Tensor


# ---------------------------------------------------------------------------
# Interval features
# ---------------------------------------------------------------------------

def context_indices(t_s: int, t_e: int, context: int, num_snippets: int) -> np.ndarray:
    """Snippet indices of [t_s - L_C, t_e + L_C], out-of-range ones clamped to the edges"""
    if context < 0:
        raise ArgumentError(f"context length must be >= 0, got {context}")
    return np.clip(np.arange(t_s - context, t_e + context + 1), 0, num_snippets - 1)


def resample_interval(sequence: Tensor, t_s: int, t_e: int, context: int, length: int) -> Tensor:
    """Differentiable [C, L_S] -> [C, length] slice-and-rescale"""
    if length < 2:
        raise ArgumentError(f"rescaled length must be >= 2, got {length}")
    indices = context_indices(t_s, t_e, context, sequence.shape[-1])
    return linear_upsample(take(sequence, (slice(None), indices)), length)


def _resample_array(array: np.ndarray, indices: np.ndarray, length: int) -> np.ndarray:
    matrix = interpolation_matrix(len(indices), length)
    return (array[:, indices].astype(np.float64) @ matrix).astype(np.float32)


def interval_feature(features: FeatureSequence, t_s: int, t_e: int, context: int, length: int) -> IntervalFeature:
    if length < 2:
        raise ArgumentError(f"rescaled length must be >= 2, got {length}")
    indices = context_indices(t_s, t_e, context, features.num_snippets)
    return IntervalFeature(
        appearance=_resample_array(features.appearance, indices, length),
        motion=_resample_array(features.motion, indices, length),
        t_s=t_s,
        t_e=t_e,
    )


def stack_interval_features(
    features: FeatureSequence, spans: Sequence[Tuple[int, int]], arch: TienArchitecture
) -> Tuple[np.ndarray, np.ndarray]:
    """[B, d_a, L_fix] and [B, d_m, L_fix] for a batch of spans of one video"""
    built = [interval_feature(features, s, e, arch.context_length, arch.feature_length) for s, e in spans]
    return np.stack([f.appearance for f in built]), np.stack([f.motion for f in built])


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

def init_tien(arch: TienArchitecture, rng: np.random.Generator) -> Params:
    params: Params = {}
    init_attention_block(
        params, rng, "tien.att_a", arch.appearance_dim, arch.attention_reduction, arch.attention_kernel
    )
    init_attention_block(params, rng, "tien.att_m", arch.motion_dim, arch.attention_reduction, arch.attention_kernel)
    fused = arch.appearance_dim + arch.motion_dim
    if arch.block == "PN":
        init_pn_block(params, rng, "tien.pn", fused, arch.hidden, arch.levels)
    else:
        init_cm_block(params, rng, "tien.cm", fused, arch.hidden)
    params["tien.fc.w"] = parameter(he_normal(rng, (arch.hidden, 3), arch.hidden), name="tien.fc.w")
    params["tien.fc.b"] = parameter(np.zeros(3), name="tien.fc.b")
    return params


def tien_forward(appearance: np.ndarray, motion: np.ndarray, params: Params, arch: TienArchitecture) -> TienOutput:
    """
    appearance: [B, d_a, L_fix], motion: [B, d_m, L_fix]. Global average
    pooling, one fully connected layer to three units, sigmoid; the two
    offset units are shifted to (-0.5, 0.5).
    """
    if appearance.ndim == 2:
        appearance, motion = appearance[None], motion[None]
    if appearance.shape[1] != arch.appearance_dim or motion.shape[1] != arch.motion_dim:
        raise DimensionError(
            f"interval features are {appearance.shape[1]}+{motion.shape[1]} channels, "
            f"network expects {arch.appearance_dim}+{arch.motion_dim}",
            axis="channel",
        )
    if appearance.shape[0] != motion.shape[0] or appearance.shape[2] != motion.shape[2]:
        raise DimensionError(f"appearance {appearance.shape} and motion {motion.shape} differ", axis="batch")

    a = attention_block(constant(appearance), params, "tien.att_a")
    m = attention_block(constant(motion), params, "tien.att_m")
    x = concat([a, m], axis=-2)
    if arch.block == "PN":
        h = pn_block(x, params, "tien.pn", arch.levels)
    else:
        h = cm_block(x, params, "tien.cm")
    pooled = reduce_mean(h, axis=-1)  # [B, hidden]
    y = sigmoid(matmul(pooled, params["tien.fc.w"]) + params["tien.fc.b"])  # [B, 3]
    return TienOutput(
        c=take(y, (slice(None), 0)),
        o_s=take(y, (slice(None), 1)) - MAX_OFFSET,
        o_e=take(y, (slice(None), 2)) - MAX_OFFSET,
    )


# ---------------------------------------------------------------------------
# Samples and loss
# ---------------------------------------------------------------------------

def make_training_samples(
    video_id: str,
    intervals: Sequence[TemporalInterval],
    instances: Sequence[GroundTruthInstance],
) -> List[TrainingSample]:
    """
    Label each interval with its best tIoU against the instances. Intervals
    with tIoU >= 0.5 are positives, <= 0.1 negatives, the rest dropped.
    Offsets point toward the best instance as fractions of interval length.
    """
    if not intervals:
        return []
    spans = np.array([(iv.t_s, iv.t_e) for iv in intervals], dtype=np.float64)
    if instances:
        overlaps = tiou_matrix(spans, instance_spans(instances))
        best = overlaps.argmax(axis=1)
        c_g = overlaps[np.arange(len(spans)), best]
    else:
        best = np.zeros(len(spans), dtype=int)
        c_g = np.zeros(len(spans))

    samples = []
    for k, interval in enumerate(intervals):
        if NEGATIVE_TIOU < c_g[k] < POSITIVE_TIOU:
            continue
        o_s_g = o_e_g = 0.0
        if instances:
            target = instances[best[k]]
            o_s_g = float(np.clip((target.start - interval.t_s) / interval.length, -MAX_OFFSET, MAX_OFFSET))
            o_e_g = float(np.clip((target.end - interval.t_e) / interval.length, -MAX_OFFSET, MAX_OFFSET))
        samples.append(
            TrainingSample(
                video_id=video_id,
                t_s=interval.t_s,
                t_e=interval.t_e,
                c_g=float(c_g[k]),
                positive=bool(c_g[k] >= POSITIVE_TIOU),
                o_s_g=o_s_g,
                o_e_g=o_e_g,
            )
        )
    return samples


def tien_loss_terms(output: TienOutput, samples: Sequence[TrainingSample]) -> Dict[str, Tensor]:
    if not samples:
        raise ArgumentError("TIEN loss needs a non-empty batch")
    if output.c.shape != (len(samples),):
        raise DimensionError(f"{output.c.shape[0]} predictions for {len(samples)} samples", axis="batch")
    c_g = constant([s.c_g for s in samples])
    gate = constant([1.0 if s.positive else 0.0 for s in samples])
    o_s_g = constant([s.o_s_g for s in samples])
    o_e_g = constant([s.o_e_g for s in samples])
    return {
        "confidence": reduce_mean(absolute(output.c - c_g)),
        "start": reduce_mean(mul(gate, absolute(output.o_s - o_s_g))),
        "end": reduce_mean(mul(gate, absolute(output.o_e - o_e_g))),
    }


def tien_loss(output: TienOutput, samples: Sequence[TrainingSample], alpha: float = 0.1) -> Tensor:
    """L1 confidence loss plus alpha times the positive-gated L1 offset losses"""
    terms = tien_loss_terms(output, samples)
    return terms["confidence"] + (terms["start"] + terms["end"]) * alpha


# ---------------------------------------------------------------------------
# Refinement and scoring
# ---------------------------------------------------------------------------

def refine(t_s: int, t_e: int, o_s: float, o_e: float, num_snippets: int) -> Tuple[float, float]:
    """
    Shift each boundary by its offset times the interval length and clip to
    the timeline. Boundaries that cross after clipping fall back to the
    unrefined ones.
    """
    length = t_e - t_s + 1
    last = float(num_snippets - 1)
    refined_s = min(max(t_s + o_s * length, 0.0), last)
    refined_e = min(max(t_e + o_e * length, 0.0), last)
    if refined_s > refined_e:
        return float(t_s), float(t_e)
    return refined_s, refined_e


def score_intervals(
    video_id: str,
    features: FeatureSequence,
    intervals: Sequence[TemporalInterval],
    params: Params,
    arch: TienArchitecture,
    batch_size: int = 256,
) -> List[Proposal]:
    """Run the network over every interval of one video and refine the spans"""
    proposals: List[Proposal] = []
    for begin in range(0, len(intervals), batch_size):
        chunk = intervals[begin:begin + batch_size]
        appearance, motion = stack_interval_features(features, [(iv.t_s, iv.t_e) for iv in chunk], arch)
        output = tien_forward(appearance, motion, params, arch)
        for interval, c, o_s, o_e in zip(chunk, output.c.numpy(), output.o_s.numpy(), output.o_e.numpy()):
            refined_s, refined_e = refine(interval.t_s, interval.t_e, float(o_s), float(o_e), features.num_snippets)
            proposals.append(
                Proposal(
                    video_id=video_id,
                    refined_t_s=refined_s,
                    refined_t_e=refined_e,
                    c=float(np.clip(c, 0.0, 1.0)),
                    t_s=interval.t_s,
                    t_e=interval.t_e,
                    o_s=float(o_s),
                    o_e=float(o_e),
                )
            )
    return proposals


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def sample_balanced_batch(
    positives: Sequence[int], negatives: Sequence[int], batch_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Half positives, half negatives, drawn with replacement"""
    half = batch_size // 2
    chosen = np.concatenate([
        rng.choice(np.asarray(positives), size=half, replace=True),
        rng.choice(np.asarray(negatives), size=batch_size - half, replace=True),
    ])
    return chosen


def train_tien(
    samples: Sequence[TrainingSample],
    features: Mapping[str, FeatureSequence],
    params: Params,
    arch: TienArchitecture,
    schedule: DecaySchedule,
    steps: int,
    batch_size: int,
    seed: int,
    alpha: float = 0.1,
    tag: str = "tien",
) -> TrainingResult:
    """
    Adam on balanced batches. Mutates `params` in place. Loss means are
    reported per window of steps/10 steps.
    """
    positives = [k for k, s in enumerate(samples) if s.positive]
    negatives = [k for k, s in enumerate(samples) if not s.positive]
    if not positives or not negatives:
        raise TrainingError(
            f"TIEN needs both positive and negative samples, got {len(positives)} positive "
            f"and {len(negatives)} negative"
        )

    optimizer = Adam(list(params.values()))
    result = TrainingResult()
    window = max(1, steps // 10)
    window_losses: List[float] = []

    for step in range(steps):
        rng = rng_stream(seed, tag, "batch", step)
        batch = [samples[k] for k in sample_balanced_batch(positives, negatives, batch_size, rng)]
        built = [
            interval_feature(features[s.video_id], s.t_s, s.t_e, arch.context_length, arch.feature_length)
            for s in batch
        ]
        appearance = np.stack([f.appearance for f in built])
        motion = np.stack([f.motion for f in built])

        with ComputationTape() as tape:
            output = tien_forward(appearance, motion, params, arch)
            loss = tien_loss(output, batch, alpha)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"TIEN loss became {value}", step=step)
        optimizer.zero_grad()
        backward(tape, loss)
        optimizer.step(schedule.lr(step))
        result.steps += 1
        result.step_losses.append(value)
        window_losses.append(value)

        if len(window_losses) == window or step == steps - 1:
            result.epoch_means.append(float(np.mean(window_losses)))
            log_training_epoch(tag, len(result.epoch_means) - 1, result.epoch_means[-1], schedule.lr(step), step + 1)
            window_losses = []

    log_info(
        "TIEN training finished",
        {
            "network": tag,
            "steps": result.steps,
            "positives": len(positives),
            "negatives": len(negatives),
            "initial_loss": result.initial_loss,
            "final_loss": result.final_loss,
        },
    )
    return result
