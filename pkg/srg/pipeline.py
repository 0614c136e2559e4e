"""
Pipeline commands: synthesize, train both networks, propose, evaluate, ablate

Each command reads its inputs from a run directory, writes its artifacts
atomically and returns a summary dict.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from srg.config import (
    ABLATION_NAME,
    DATASET_DIR_NAME,
    INTERVALS_NAME,
    METRICS_NAME,
    PROPOSALS_NAME,
    SCORE_MAPS_DIR_NAME,
    SOURCE_SPANS_NAME,
    SRG_THREADS,
    TIEN_CHECKPOINT,
    TIEN_LOSSES,
    TIGN_CHECKPOINT,
    TIGN_LOSSES,
    RunConfig,
)
from srg.errors import ConfigurationError, DimensionError
from srg.helpers import parallel_map, rng_stream
from srg.intervals import gen_all, spans_by_source
from srg.layers import Params, load_arrays_into, params_to_arrays
from srg.logger import log_artifact_written, log_info, log_warning
from srg.metrics import (
    MetricRow,
    RecallTable,
    format_metric_rows,
    interval_recall,
    proposal_metric_rows,
    random_proposals,
)
from srg.models import MetricConfig, NmsConfig, Proposal, SynthConfig, TemporalInterval
from srg.optim import DecaySchedule
from srg.post import boost_scores, interval_proposals, nms, snippet_relatedness
from srg.storage import (
    atomic_write_bytes,
    atomic_write_text,
    atomic_write_texts,
    encode_score_maps,
    format_interval_dump,
    format_proposals,
    format_source_spans,
    load_checkpoint,
    load_dataset,
    load_proposals,
    parse_interval_dump,
    parse_source_spans,
    require_artifact,
    save_checkpoint,
    write_dataset,
)
from srg.synth import synth_generate
from srg.tien import TienArchitecture, init_tien, make_training_samples, score_intervals, train_tien
from srg.tign import ScoreMaps, TignArchitecture, TrainingResult, init_tign, tign_forward, train_tign
from srg.video import VideoRecord


@dataclass(frozen=True)
class RunLayout:
    """Where a run keeps its artifacts. Checkpoints may live in shared directories."""
    root: Path
    dataset: Path
    tign_root: Optional[Path] = None
    tien_root: Optional[Path] = None

    @classmethod
    def for_run(cls, config: RunConfig, root: Path) -> "RunLayout":
        root = Path(root)
        dataset = Path(config.dataset_dir) if config.dataset_dir else root / DATASET_DIR_NAME
        return cls(root=root, dataset=dataset)

    @property
    def tign_dir(self) -> Path:
        return self.tign_root or self.root

    @property
    def tign_checkpoint(self) -> Path:
        return self.tign_dir / TIGN_CHECKPOINT

    @property
    def tign_losses(self) -> Path:
        return self.tign_dir / TIGN_LOSSES

    @property
    def tien_dir(self) -> Path:
        return self.tien_root or self.root

    @property
    def tien_checkpoint(self) -> Path:
        return self.tien_dir / TIEN_CHECKPOINT

    @property
    def tien_losses(self) -> Path:
        return self.tien_dir / TIEN_LOSSES

    @property
    def intervals(self) -> Path:
        return self.root / INTERVALS_NAME

    @property
    def source_spans(self) -> Path:
        return self.root / SOURCE_SPANS_NAME

    @property
    def proposals(self) -> Path:
        return self.root / PROPOSALS_NAME

    @property
    def metrics(self) -> Path:
        return self.root / METRICS_NAME


def _require_training(config: RunConfig):
    if not config.allow_training:
        raise ConfigurationError(f"profile {config.profile!r} is forward-only; training is disabled")


def _check_feature_dims(videos: Sequence[VideoRecord], config: RunConfig):
    for video in videos:
        if (video.features.appearance_dim, video.features.motion_dim) != (config.appearance_dim, config.motion_dim):
            raise DimensionError(
                f"{video.video_id} has {video.features.appearance_dim}+{video.features.motion_dim} feature "
                f"channels, config expects {config.appearance_dim}+{config.motion_dim}",
                axis="channel",
            )


def _loss_csv(result: TrainingResult, schedule: DecaySchedule) -> str:
    lines = ["step,loss,lr"]
    for step, loss in enumerate(result.step_losses):
        lines.append(f"{step},{loss:.6f},{schedule.lr(step):.8g}")
    return "\n".join(lines) + "\n"


def _load_params(params: Params, path: Path, producer: str, network: str) -> Params:
    load_arrays_into(params, load_checkpoint(require_artifact(path, producer)), network)
    return params


def load_tign(config: RunConfig, layout: RunLayout) -> Tuple[Params, TignArchitecture]:
    arch = TignArchitecture.from_config(config)
    params = init_tign(arch, rng_stream(config.seed, "tign", "init"))
    return _load_params(params, layout.tign_checkpoint, "train-tign", "TIGN"), arch


def load_tien(config: RunConfig, layout: RunLayout) -> Tuple[Params, TienArchitecture]:
    arch = TienArchitecture.from_config(config)
    params = init_tien(arch, rng_stream(config.seed, "tien", "init"))
    return _load_params(params, layout.tien_checkpoint, "train-tien", "TIEN"), arch


def tign_schedule(config: RunConfig) -> DecaySchedule:
    return DecaySchedule(config.tign_learning_rate, config.tign_decay_every, config.lr_decay_rate)


def tien_schedule(config: RunConfig) -> DecaySchedule:
    return DecaySchedule(config.tien_learning_rate, config.tien_decay_every, config.lr_decay_rate)


def nms_config(config: RunConfig) -> NmsConfig:
    return NmsConfig(mode=config.nms_mode, fixed_threshold=config.nms_threshold, adaptive_floor=config.nms_floor)


def metric_config(config: RunConfig) -> MetricConfig:
    return MetricConfig(
        tiou_thresholds=config.tiou_thresholds,
        an_values=config.an_values,
        auc_an_range=(1, config.auc_max_an),
        an_normalization=config.an_normalization,
    )


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _synth_config(config: RunConfig, split: str, num_videos: int) -> SynthConfig:
    return SynthConfig(
        num_videos=num_videos,
        min_length=config.min_length,
        max_length=config.max_length,
        min_instances=config.min_instances,
        max_instances=config.max_instances,
        min_duration=config.min_duration,
        max_duration=config.max_duration,
        min_gap=config.min_gap,
        num_classes=config.num_classes,
        appearance_dim=config.appearance_dim,
        motion_dim=config.motion_dim,
        signature_noise=config.signature_noise,
        background_noise=config.background_noise,
        frames_per_snippet=config.frames_per_snippet,
        seed=config.seed,
        video_prefix=split,
    )


def cmd_synth(config: RunConfig, layout: RunLayout) -> Dict[str, Any]:
    """
    Generate the train and test splits into the dataset directory
    """
    log_info("synth started", {"dataset": layout.dataset, "seed": config.seed})
    train = synth_generate(_synth_config(config, "train", config.num_train_videos))
    test = synth_generate(_synth_config(config, "test", config.num_test_videos))
    write_dataset(layout.dataset, {"train": train.videos, "test": test.videos}, config.seed, config.num_classes)

    summary = {
        "train_videos": len(train.videos),
        "test_videos": len(test.videos),
        "instances": sum(len(v.instances) for v in train.videos + test.videos),
    }
    log_artifact_written("synth", layout.dataset, summary)
    return {"message": f"Synthetic dataset written to {layout.dataset}", "dataset": str(layout.dataset), **summary}


# ---------------------------------------------------------------------------
# train-tign / train-tien
# ---------------------------------------------------------------------------

def cmd_train_tign(config: RunConfig, layout: RunLayout) -> Dict[str, Any]:
    _require_training(config)
    videos = load_dataset(layout.dataset, "train")
    _check_feature_dims(videos, config)
    arch = TignArchitecture.from_config(config)
    params = init_tign(arch, rng_stream(config.seed, "tign", "init"))
    schedule = tign_schedule(config)
    log_info("train-tign started", {"videos": len(videos), "block": arch.block, "epochs": config.tign_epochs})

    result = train_tign(videos, params, arch, schedule, config.tign_epochs, config.seed)
    save_checkpoint(layout.tign_checkpoint, params_to_arrays(params))
    atomic_write_text(layout.tign_losses, _loss_csv(result, schedule))

    log_artifact_written("train-tign", layout.tign_checkpoint, {"steps": result.steps})
    return {
        "message": f"TIGN trained for {result.steps} steps",
        "checkpoint": str(layout.tign_checkpoint),
        "losses": str(layout.tign_losses),
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
    }


def video_intervals(
    video: VideoRecord, params: Params, arch: TignArchitecture, config: RunConfig
) -> Tuple[List[TemporalInterval], ScoreMaps, Optional[np.ndarray]]:
    """Intervals of one video, its score maps and its actionness scores (if the head exists)"""
    maps = tign_forward(video.features.appearance, video.features.motion, params, arch)
    intervals = gen_all(maps, config.tau_values, config.interval_source)
    actionness = maps.actionness.numpy() if maps.actionness is not None else None
    return intervals, maps, actionness


def cmd_train_tien(config: RunConfig, layout: RunLayout) -> Dict[str, Any]:
    _require_training(config)
    tign_params, tign_arch = load_tign(config, layout)
    videos = load_dataset(layout.dataset, "train")
    _check_feature_dims(videos, config)

    def samples_for(video: VideoRecord):
        intervals, _, _ = video_intervals(video, tign_params, tign_arch, config)
        return make_training_samples(video.video_id, intervals, video.instances)

    samples = [s for batch in parallel_map(samples_for, videos, SRG_THREADS) for s in batch]
    features = {v.video_id: v.features for v in videos}
    arch = TienArchitecture.from_config(config)
    params = init_tien(arch, rng_stream(config.seed, "tien", "init"))
    schedule = tien_schedule(config)
    log_info("train-tien started", {"samples": len(samples), "block": arch.block, "steps": config.tien_steps})

    result = train_tien(
        samples,
        features,
        params,
        arch,
        schedule,
        config.tien_steps,
        config.tien_batch_size,
        config.seed,
        alpha=config.offset_loss_weight,
    )
    save_checkpoint(layout.tien_checkpoint, params_to_arrays(params))
    atomic_write_text(layout.tien_losses, _loss_csv(result, schedule))

    log_artifact_written("train-tien", layout.tien_checkpoint, {"steps": result.steps})
    return {
        "message": f"TIEN trained for {result.steps} steps on {len(samples)} samples",
        "checkpoint": str(layout.tien_checkpoint),
        "losses": str(layout.tien_losses),
        "samples": len(samples),
        "positives": sum(1 for s in samples if s.positive),
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
    }


# ---------------------------------------------------------------------------
# propose
# ---------------------------------------------------------------------------

def cmd_propose(config: RunConfig, layout: RunLayout, interval_only: bool = False) -> Dict[str, Any]:
    """
    Intervals -> TIEN scores and refinement -> optional boost -> NMS for every
    test video. With interval_only the intervals are scored by mean snippet
    actionness (relatedness when the actionness head is off) and TIEN is not
    used.
    """
    tign_params, tign_arch = load_tign(config, layout)
    tien_params, tien_arch = (None, None) if interval_only else load_tien(config, layout)
    videos = load_dataset(layout.dataset, "test")
    _check_feature_dims(videos, config)
    suppression = nms_config(config)

    def propose_video(video: VideoRecord):
        intervals, maps, actionness = video_intervals(video, tign_params, tign_arch, config)
        o_r = maps.o_r.numpy()
        if interval_only:
            scores = actionness if actionness is not None else snippet_relatedness(o_r)
            proposals = interval_proposals(video.video_id, intervals, scores)
        else:
            proposals = score_intervals(
                video.video_id, video.features, intervals, tien_params, tien_arch, config.tien_batch_size
            )
        if config.boost:
            proposals = boost_scores(proposals, o_r)
        if not intervals:
            log_warning("no intervals generated", {"video_id": video.video_id, "num_snippets": len(o_r)})
        return intervals, nms(proposals, suppression), maps, spans_by_source(maps, config.tau_values)

    results = parallel_map(propose_video, videos, SRG_THREADS)
    intervals = {v.video_id: r[0] for v, r in zip(videos, results)}
    proposals = {v.video_id: r[1] for v, r in zip(videos, results)}
    by_source = {v.video_id: r[3] for v, r in zip(videos, results)}

    # The three text artifacts describe one run; they are replaced together
    atomic_write_texts(
        {
            layout.proposals: format_proposals(proposals),
            layout.intervals: format_interval_dump(intervals),
            layout.source_spans: format_source_spans(by_source),
        }
    )
    if config.dump_score_maps:
        for video, (_, _, maps, _) in zip(videos, results):
            atomic_write_bytes(
                layout.root / SCORE_MAPS_DIR_NAME / f"{video.video_id}.srgm", encode_score_maps(*maps.arrays())
            )

    summary = {
        "videos": len(videos),
        "intervals": sum(len(v) for v in intervals.values()),
        "proposals": sum(len(v) for v in proposals.values()),
    }
    log_artifact_written("propose", layout.proposals, summary)
    return {"message": f"Proposals written to {layout.proposals}", "proposals_file": str(layout.proposals), **summary}


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def interval_recall_rows(
    by_source: Mapping[str, Mapping[str, Sequence[Tuple[int, int]]]],
    merged: Mapping[str, Sequence[Tuple[int, int]]],
    ground_truth,
    thresholds: Sequence[float],
) -> List[MetricRow]:
    """
    Recall of the RS and WRS span sets, each generated on its own, and of
    their deduplicated union.
    """
    selections = {"RS": by_source.get("RS", {}), "WRS": by_source.get("WRS", {}), "RS+WRS": merged}
    rows = []
    for label, spans in selections.items():
        for threshold, value in zip(thresholds, interval_recall(spans, ground_truth, thresholds)):
            rows.append(MetricRow(f"interval_recall_{label}", None, threshold, value))
    return rows


def _interval_recall_rows(layout: RunLayout, ground_truth, thresholds: Sequence[float]) -> List[MetricRow]:
    if not layout.intervals.exists() or not layout.source_spans.exists():
        return []
    dump = parse_interval_dump(layout.intervals.read_text(encoding="utf-8"))
    merged = {vid: [(s, e) for s, e, _, _ in entries] for vid, entries in dump.items()}
    by_source = parse_source_spans(layout.source_spans.read_text(encoding="utf-8"))
    return interval_recall_rows(by_source, merged, ground_truth, thresholds)


def evaluate(
    proposals: Mapping[str, Sequence[Proposal]],
    videos: Sequence[VideoRecord],
    config: RunConfig,
) -> Tuple[List[MetricRow], Dict[str, float]]:
    """Metric rows for the proposals and the matching random baseline"""
    metrics = metric_config(config)
    ground_truth = {v.video_id: v.instances for v in videos}
    table = RecallTable(proposals, ground_truth, metrics.an_normalization)
    rows = proposal_metric_rows(table, metrics)

    counts = {vid: len(proposals.get(vid, [])) for vid in ground_truth}
    lengths = {v.video_id: v.features.num_snippets for v in videos}
    baseline = RecallTable(random_proposals(lengths, counts, config.seed), ground_truth, metrics.an_normalization)
    rows += proposal_metric_rows(baseline, metrics, prefix="baseline_")

    headline = {f"AR@{an}": table.average_recall(metrics.tiou_thresholds, an) for an in metrics.an_values}
    headline["AUC"] = table.auc(metrics.tiou_thresholds, metrics.auc_an_range)
    headline.update(
        {f"baseline_AR@{an}": baseline.average_recall(metrics.tiou_thresholds, an) for an in metrics.an_values}
    )
    return rows, headline


def cmd_eval(config: RunConfig, layout: RunLayout) -> Dict[str, Any]:
    proposals = load_proposals(require_artifact(layout.proposals, "propose"))
    videos = load_dataset(layout.dataset, "test")
    rows, headline = evaluate(proposals, videos, config)
    rows += _interval_recall_rows(layout, {v.video_id: v.instances for v in videos}, config.tiou_thresholds)

    atomic_write_text(layout.metrics, format_metric_rows(rows))
    log_artifact_written("eval", layout.metrics, headline)
    return {"message": f"Metrics written to {layout.metrics}", "metrics_file": str(layout.metrics), **headline}


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

ABLATION_DIR_NAME = "ablation"


def _variant_name(tign_block: str, tien_block: Optional[str], boost: bool) -> str:
    name = f"TIGN_{tign_block}+" + (f"TIEN_{tien_block}" if tien_block else "intervals")
    return name + ("+boost" if boost else "")


def cmd_ablate(config: RunConfig, layout: RunLayout) -> Dict[str, Any]:
    """
    Train and evaluate every configured {CM, PN} block pair with boosting on
    and off (plus the interval-only cases when enabled); one labeled metrics
    block per variant.
    """
    _require_training(config)
    if config.ablate_interval_only and not config.actionness_head:
        # interval-only variants score by actionness, so every TIGN carries the head
        config = config.model_copy(update={"actionness_head": True})
    base = layout.root / ABLATION_DIR_NAME
    videos = load_dataset(layout.dataset, "test")
    pairs = [tuple(pair.split("+")) for pair in config.ablate_blocks]
    tign_blocks = list(dict.fromkeys([a for a, _ in pairs] + (["CM", "PN"] if config.ablate_interval_only else [])))
    log_info("ablate started", {"pairs": config.ablate_blocks, "boost": config.ablate_boost})

    for block in tign_blocks:
        cmd_train_tign(
            config.model_copy(update={"tign_block": block}),
            RunLayout(root=base / f"TIGN_{block}", dataset=layout.dataset),
        )

    variants: List[Tuple[str, RunConfig, RunLayout, bool]] = []
    for tign_block, tien_block in pairs:
        pair_config = config.model_copy(update={"tign_block": tign_block, "tien_block": tien_block})
        pair_layout = RunLayout(
            root=base / f"TIGN_{tign_block}+TIEN_{tien_block}",
            dataset=layout.dataset,
            tign_root=base / f"TIGN_{tign_block}",
        )
        cmd_train_tien(pair_config, pair_layout)
        for boost in config.ablate_boost:
            name = _variant_name(tign_block, tien_block, boost)
            variant_layout = replace(pair_layout, root=base / name, tien_root=pair_layout.root)
            variants.append((name, pair_config.model_copy(update={"boost": boost}), variant_layout, False))
    if config.ablate_interval_only:
        for block in ("CM", "PN"):
            name = _variant_name(block, None, False)
            variant_layout = RunLayout(root=base / name, dataset=layout.dataset, tign_root=base / f"TIGN_{block}")
            variants.append((name, config.model_copy(update={"tign_block": block, "boost": False}), variant_layout, True))

    blocks = []
    summary: Dict[str, float] = {}
    for name, variant_config, variant_layout, interval_only in variants:
        cmd_propose(variant_config, variant_layout, interval_only=interval_only)
        rows, headline = evaluate(load_proposals(variant_layout.proposals), videos, variant_config)
        blocks.append(f"# variant={name}\n" + format_metric_rows(rows))
        top_an = max(variant_config.an_values)
        summary[f"{name} AR@{top_an}"] = headline[f"AR@{top_an}"]

    ablation_path = layout.root / ABLATION_NAME
    atomic_write_text(ablation_path, "".join(blocks))
    log_artifact_written("ablate", ablation_path, {"variants": len(variants)})
    return {
        "message": f"Ablation over {len(variants)} variants written to {ablation_path}",
        "ablation_file": str(ablation_path),
        **summary,
    }
