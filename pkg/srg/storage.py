"""
File storage: feature, checkpoint and score-map binaries, annotation,
interval and proposal text files, dataset manifests
"""

import json
import os
import shutil
import struct
from collections import defaultdict
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Literal, Mapping, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError

from srg.config import (
    ANNOTATIONS_NAME,
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    FEATURE_MAGIC,
    FEATURE_VERSION,
    FEATURES_DIR_NAME,
    MANIFEST_NAME,
    SCORE_MAP_MAGIC,
    SCORE_MAP_VERSION,
)
from srg.errors import InstanceValidationError, MissingArtifactError, ParseError
from srg.models import GroundTruthInstance, Proposal, TemporalInterval, VideoMeta
from srg.video import FeatureSequence, VideoRecord, validate_instances


# ---------------------------------------------------------------------------
# Atomic output
# ---------------------------------------------------------------------------

def _temporary_sibling(path: Path) -> Path:
    return path.with_name(f".{path.name}.tmp-{os.getpid()}")


def atomic_write_bytes(path: Path, data: bytes):
    """Write to a temporary sibling, then rename over `path`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = _temporary_sibling(path)
    try:
        temporary.write_bytes(data)
        os.replace(temporary, path)
    finally:
        if temporary.exists():
            temporary.unlink()


def atomic_write_text(path: Path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_texts(files: Mapping[Path, str]):
    """
    Stage every file as a temporary sibling, then rename them all. If any
    write fails, none of the targets is replaced.
    """
    staged: List[Tuple[Path, Path]] = []
    try:
        for path, text in files.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            temporary = _temporary_sibling(path)
            staged.append((temporary, path))
            temporary.write_bytes(text.encode("utf-8"))
        for temporary, path in staged:
            os.replace(temporary, path)
    finally:
        for temporary, _ in staged:
            if temporary.exists():
                temporary.unlink()


@contextmanager
def atomic_directory(path: Path) -> Iterator[Path]:
    """
    Yield a scratch directory that replaces `path` only if the block finishes
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scratch = _temporary_sibling(path)
    if scratch.exists():
        shutil.rmtree(scratch)
    scratch.mkdir()
    try:
        yield scratch
        if path.exists():
            shutil.rmtree(path)
        os.replace(scratch, path)
    finally:
        if scratch.exists():
            shutil.rmtree(scratch)


def require_artifact(path: Path, producer: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


# ---------------------------------------------------------------------------
# Binary readers
# ---------------------------------------------------------------------------

class _ByteReader:
    """Sequential little-endian reader that reports the offset of any shortfall"""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.offset = 0
        self.what = what

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise ParseError(
                f"{self.what}: truncated, needed {count} bytes, {len(self.data) - self.offset} left",
                offset=self.offset,
            )
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str):
        values = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))
        return values if len(values) > 1 else values[0]

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)

    def expect_magic(self, magic: bytes):
        found = self.take(len(magic))
        if found != magic:
            raise ParseError(f"{self.what}: bad magic {found!r}, expected {magic!r}", offset=0)

    def expect_version(self, version: int):
        at = self.offset
        found = self.unpack("I")
        if found != version:
            raise ParseError(f"{self.what}: unsupported version {found}", offset=at)

    def expect_end(self):
        if self.offset != len(self.data):
            raise ParseError(f"{self.what}: {len(self.data) - self.offset} trailing bytes", offset=self.offset)


def _f32(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# Features (SRGF)
# ---------------------------------------------------------------------------

def encode_features(features: FeatureSequence) -> bytes:
    header = FEATURE_MAGIC + struct.pack(
        "<IIII", FEATURE_VERSION, features.num_snippets, features.appearance_dim, features.motion_dim
    )
    return header + _f32(features.appearance) + _f32(features.motion)


def decode_features(data: bytes) -> FeatureSequence:
    reader = _ByteReader(data, "feature file")
    reader.expect_magic(FEATURE_MAGIC)
    reader.expect_version(FEATURE_VERSION)
    length, appearance_dim, motion_dim = reader.unpack("III")
    appearance = reader.floats(appearance_dim * length).reshape(appearance_dim, length)
    motion = reader.floats(motion_dim * length).reshape(motion_dim, length)
    reader.expect_end()
    return FeatureSequence(appearance, motion)


def save_features(path: Path, features: FeatureSequence):
    atomic_write_bytes(path, encode_features(features))


def load_features(path: Path) -> FeatureSequence:
    return decode_features(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Checkpoints (SRGW)
# ---------------------------------------------------------------------------

def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(_f32(array))
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Dict[str, np.ndarray]:
    reader = _ByteReader(data, "checkpoint")
    reader.expect_magic(CHECKPOINT_MAGIC)
    reader.expect_version(CHECKPOINT_VERSION)
    count = reader.unpack("I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.unpack("H")
        at = reader.offset
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("checkpoint: tensor name is not UTF-8", offset=at)
        rank = reader.unpack("B")
        dims = reader.unpack(f"{rank}I") if rank else ()
        dims = (dims,) if isinstance(dims, int) else tuple(dims)
        size = int(np.prod(dims)) if dims else 1
        tensors[name] = reader.floats(size).reshape(dims)
    reader.expect_end()
    return tensors


def save_checkpoint(path: Path, tensors: Mapping[str, np.ndarray]):
    atomic_write_bytes(path, encode_checkpoint(tensors))


def load_checkpoint(path: Path) -> Dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Score maps (SRGM), for visualization tools
# ---------------------------------------------------------------------------

def encode_score_maps(o_r: np.ndarray, o_s: np.ndarray, o_e: np.ndarray) -> bytes:
    header = SCORE_MAP_MAGIC + struct.pack(
        "<IIIII", SCORE_MAP_VERSION, o_r.shape[0], o_r.shape[1], o_s.shape[1], o_e.shape[1]
    )
    return header + _f32(o_r) + _f32(o_s) + _f32(o_e)


def decode_score_maps(data: bytes) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    reader = _ByteReader(data, "score map file")
    reader.expect_magic(SCORE_MAP_MAGIC)
    reader.expect_version(SCORE_MAP_VERSION)
    rows, width_r, width_s, width_e = reader.unpack("IIII")
    o_r = reader.floats(rows * width_r).reshape(rows, width_r)
    o_s = reader.floats(rows * width_s).reshape(rows, width_s)
    o_e = reader.floats(rows * width_e).reshape(rows, width_e)
    reader.expect_end()
    return o_r, o_s, o_e


# ---------------------------------------------------------------------------
# Annotations (TSV: video_id, start, end, class_id)
# ---------------------------------------------------------------------------

def format_annotations(annotations: Mapping[str, Sequence[GroundTruthInstance]]) -> str:
    lines = ["# video_id\tstart\tend\tclass_id"]
    for video_id in sorted(annotations):
        for inst in annotations[video_id]:
            lines.append(f"{video_id}\t{inst.start}\t{inst.end}\t{inst.class_id}")
    return "\n".join(lines) + "\n"


def parse_annotations(text: str) -> Dict[str, List[GroundTruthInstance]]:
    """
    Parse annotation lines. Instances come back sorted by start per video;
    overlapping instances are rejected.
    """
    annotations: Dict[str, List[GroundTruthInstance]] = defaultdict(list)
    first_line: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.strip().split("\t")
        if len(fields) != 4:
            raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", line=number)
        video_id, start, end, class_id = fields
        try:
            inst = GroundTruthInstance(start=int(start), end=int(end), class_id=int(class_id))
        except (ValueError, ValidationError) as e:
            raise ParseError(f"malformed instance {line.strip()!r}: {e}", line=number)
        annotations[video_id].append(inst)
        first_line.setdefault(video_id, number)

    result = {}
    for video_id, instances in annotations.items():
        try:
            result[video_id] = validate_instances(instances, num_snippets=max(i.end for i in instances) + 1)
        except InstanceValidationError as e:
            raise InstanceValidationError(f"{video_id} (first seen on line {first_line[video_id]}): {e}")
    return result


def save_annotations(path: Path, annotations: Mapping[str, Sequence[GroundTruthInstance]]):
    atomic_write_text(path, format_annotations(annotations))


def load_annotations(path: Path) -> Dict[str, List[GroundTruthInstance]]:
    return parse_annotations(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Interval dumps (TSV: video_id, t_s, t_e, source, tau)
# ---------------------------------------------------------------------------

def format_interval_dump(intervals: Mapping[str, Sequence[TemporalInterval]]) -> str:
    lines = []
    for video_id in sorted(intervals):
        for iv in intervals[video_id]:
            lines.append(f"{video_id}\t{iv.t_s}\t{iv.t_e}\t{iv.source}\t{iv.tau:.2f}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_interval_dump(text: str) -> Dict[str, List[Tuple[int, int, str, float]]]:
    intervals: Dict[str, List[Tuple[int, int, str, float]]] = defaultdict(list)
    for number, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 5 or fields[3] not in ("RS", "WRS"):
            raise ParseError(f"malformed interval line {raw!r}", line=number)
        try:
            intervals[fields[0]].append((int(fields[1]), int(fields[2]), fields[3], float(fields[4])))
        except ValueError:
            raise ParseError(f"malformed interval line {raw!r}", line=number)
    return dict(intervals)


# ---------------------------------------------------------------------------
# Per-source spans (TSV: video_id, source, t_s, t_e)
# ---------------------------------------------------------------------------

def format_source_spans(spans: Mapping[str, Mapping[str, Sequence[Tuple[int, int]]]]) -> str:
    """`spans` maps video_id -> source -> spans"""
    lines = []
    for video_id in sorted(spans):
        for source in ("RS", "WRS"):
            for t_s, t_e in spans[video_id].get(source, []):
                lines.append(f"{video_id}\t{source}\t{t_s}\t{t_e}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_source_spans(text: str) -> Dict[str, Dict[str, List[Tuple[int, int]]]]:
    """Returns source -> video_id -> spans"""
    spans: Dict[str, Dict[str, List[Tuple[int, int]]]] = {"RS": defaultdict(list), "WRS": defaultdict(list)}
    for number, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 4 or fields[1] not in spans:
            raise ParseError(f"malformed span line {raw!r}", line=number)
        try:
            spans[fields[1]][fields[0]].append((int(fields[2]), int(fields[3])))
        except ValueError:
            raise ParseError(f"malformed span line {raw!r}", line=number)
    return {source: dict(by_video) for source, by_video in spans.items()}


# ---------------------------------------------------------------------------
# Proposals (TSV: video_id, refined_t_s, refined_t_e, c)
# ---------------------------------------------------------------------------

def format_proposals(proposals: Mapping[str, Sequence[Proposal]]) -> str:
    lines = []
    for video_id in sorted(proposals):
        for p in proposals[video_id]:
            lines.append(f"{video_id}\t{p.refined_t_s:.6f}\t{p.refined_t_e:.6f}\t{p.c:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_proposals(text: str) -> Dict[str, List[Proposal]]:
    proposals: Dict[str, List[Proposal]] = defaultdict(list)
    for number, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 4:
            raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", line=number)
        try:
            proposals[fields[0]].append(
                Proposal(
                    video_id=fields[0],
                    refined_t_s=float(fields[1]),
                    refined_t_e=float(fields[2]),
                    c=float(fields[3]),
                )
            )
        except (ValueError, ValidationError) as e:
            raise ParseError(f"malformed proposal {raw!r}: {e}", line=number)
    return dict(proposals)


def save_proposals(path: Path, proposals: Mapping[str, Sequence[Proposal]]):
    atomic_write_text(path, format_proposals(proposals))


def load_proposals(path: Path) -> Dict[str, List[Proposal]]:
    return parse_proposals(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------

Split = Literal["train", "test"]


class ManifestEntry(BaseModel):
    video_id: str
    num_frames: int
    frames_per_snippet: int
    split: Split


class DatasetManifest(BaseModel):
    seed: int
    num_classes: int
    videos: List[ManifestEntry]


def write_dataset(directory: Path, splits: Mapping[str, Iterable[VideoRecord]], seed: int, num_classes: int):
    """
    Write features, annotations and a manifest into `directory` atomically
    """
    entries: List[ManifestEntry] = []
    annotations: Dict[str, List[GroundTruthInstance]] = {}
    with atomic_directory(directory) as scratch:
        features_dir = scratch / FEATURES_DIR_NAME
        features_dir.mkdir()
        for split, videos in splits.items():
            for video in videos:
                (features_dir / f"{video.video_id}.srgf").write_bytes(encode_features(video.features))
                annotations[video.video_id] = video.instances
                entries.append(
                    ManifestEntry(
                        video_id=video.video_id,
                        num_frames=video.meta.num_frames,
                        frames_per_snippet=video.meta.frames_per_snippet,
                        split=split,
                    )
                )
        (scratch / ANNOTATIONS_NAME).write_text(format_annotations(annotations), encoding="utf-8")
        manifest = DatasetManifest(seed=seed, num_classes=num_classes, videos=entries)
        (scratch / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")


def load_manifest(directory: Path) -> DatasetManifest:
    path = require_artifact(Path(directory) / MANIFEST_NAME, "synth")
    try:
        return DatasetManifest.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ParseError(f"{path}: invalid manifest: {e}")


def load_dataset(directory: Path, split: Split) -> List[VideoRecord]:
    """Load every video of one split, validating instances against its length"""
    directory = Path(directory)
    manifest = load_manifest(directory)
    annotations = load_annotations(require_artifact(directory / ANNOTATIONS_NAME, "synth"))
    videos = []
    for entry in manifest.videos:
        if entry.split != split:
            continue
        features = load_features(require_artifact(directory / FEATURES_DIR_NAME / f"{entry.video_id}.srgf", "synth"))
        meta = VideoMeta(
            video_id=entry.video_id,
            num_frames=entry.num_frames,
            frames_per_snippet=entry.frames_per_snippet,
        )
        if meta.num_snippets != features.num_snippets:
            raise ParseError(
                f"{entry.video_id}: manifest implies {meta.num_snippets} snippets, features hold {features.num_snippets}"
            )
        instances = validate_instances(annotations.get(entry.video_id, []), features.num_snippets)
        videos.append(VideoRecord(meta=meta, features=features, instances=instances))
    return videos
