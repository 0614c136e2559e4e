"""
Seeded synthetic corpus: per-class feature signatures plus Gaussian noise
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from srg.errors import GenerationError
from srg.helpers import rng_stream
from srg.logger import log_info
from srg.models import GroundTruthInstance, SynthConfig, VideoMeta
from srg.video import FeatureSequence, VideoRecord

MAX_LAYOUT_ATTEMPTS = 32


@dataclass
class SyntheticDataset:
    videos: List[VideoRecord]
    appearance_signatures: np.ndarray  # [num_classes, d_a]
    motion_signatures: np.ndarray  # [num_classes, d_m]
    background_appearance: np.ndarray  # [d_a]
    background_motion: np.ndarray  # [d_m]


def class_signatures(config: SynthConfig):
    """Latent appearance/motion vectors per class and for background"""
    rng = rng_stream(config.seed, "synth", "signatures")
    appearance = rng.standard_normal((config.num_classes, config.appearance_dim))
    motion = rng.standard_normal((config.num_classes, config.motion_dim))
    background_appearance = rng.standard_normal(config.appearance_dim)
    background_motion = rng.standard_normal(config.motion_dim)
    return appearance, motion, background_appearance, background_motion


def _sample_layout(config: SynthConfig, rng: np.random.Generator, length: int, video_id: str) -> List[GroundTruthInstance]:
    for _ in range(MAX_LAYOUT_ATTEMPTS):
        count = int(rng.integers(config.min_instances, config.max_instances + 1))
        durations = rng.integers(config.min_duration, config.max_duration + 1, size=count)
        free = length - int(durations.sum()) - max(count - 1, 0) * config.min_gap
        if free >= 0:
            break
    else:
        raise GenerationError(
            f"{video_id}: could not fit {config.min_instances}+ instances into {length} snippets "
            f"after {MAX_LAYOUT_ATTEMPTS} attempts"
        )
    if count == 0:
        return []

    # stars and bars: spread `free` spare snippets over the count + 1 gaps
    picks = np.sort(rng.choice(free + count, size=count, replace=False))
    classes = rng.integers(config.num_classes, size=count)
    instances = []
    offset = 0
    for k in range(count):
        start = int(picks[k] - k) + offset + k * config.min_gap
        end = start + int(durations[k]) - 1
        instances.append(GroundTruthInstance(start=start, end=end, class_id=int(classes[k])))
        offset += int(durations[k])
    return instances


def synth_video(config: SynthConfig, index: int, signatures) -> VideoRecord:
    appearance_sig, motion_sig, background_a, background_m = signatures
    video_id = f"{config.video_prefix}_{index:04d}"
    rng = rng_stream(config.seed, "synth", config.video_prefix, index)

    length = int(rng.integers(config.min_length, config.max_length + 1))
    instances = _sample_layout(config, rng, length, video_id)

    appearance = background_a[:, None] + config.background_noise * rng.standard_normal((config.appearance_dim, length))
    motion = background_m[:, None] + config.background_noise * rng.standard_normal((config.motion_dim, length))
    for inst in instances:
        span = slice(inst.start, inst.end + 1)
        appearance[:, span] = appearance_sig[inst.class_id][:, None] + config.signature_noise * rng.standard_normal(
            (config.appearance_dim, inst.length)
        )
        motion[:, span] = motion_sig[inst.class_id][:, None] + config.signature_noise * rng.standard_normal(
            (config.motion_dim, inst.length)
        )

    meta = VideoMeta(
        video_id=video_id,
        num_frames=length * config.frames_per_snippet,
        frames_per_snippet=config.frames_per_snippet,
    )
    return VideoRecord(meta=meta, features=FeatureSequence(appearance, motion), instances=instances)


def synth_generate(config: SynthConfig) -> SyntheticDataset:
    """
    Generate num_videos videos. Identical configs give bit-identical output.
    """
    smallest = config.min_instances * config.min_duration + max(config.min_instances - 1, 0) * config.min_gap
    if smallest > config.max_length:
        raise GenerationError(
            f"{config.min_instances} instances of at least {config.min_duration} snippets "
            f"cannot fit into {config.max_length} snippets"
        )

    signatures = class_signatures(config)
    videos = [synth_video(config, index, signatures) for index in range(config.num_videos)]
    log_info(
        "Synthetic corpus generated",
        {
            "prefix": config.video_prefix,
            "videos": len(videos),
            "instances": sum(len(v.instances) for v in videos),
        }
    )
    return SyntheticDataset(
        videos=videos,
        appearance_signatures=signatures[0],
        motion_signatures=signatures[1],
        background_appearance=signatures[2],
        background_motion=signatures[3],
    )
