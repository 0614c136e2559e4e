#!/usr/bin/env python3
"""
Tests for label-map annotation, the synthetic corpus and the on-disk formats
"""

import struct

import numpy as np
import pytest
from pydantic import ValidationError

from srg.errors import GenerationError, InstanceValidationError, MissingArtifactError, ParseError
from srg.models import GroundTruthInstance, Proposal, SynthConfig
from srg.storage import (
    atomic_directory,
    atomic_write_texts,
    decode_checkpoint,
    decode_features,
    encode_checkpoint,
    encode_features,
    format_proposals,
    format_source_spans,
    load_dataset,
    load_features,
    parse_annotations,
    parse_proposals,
    parse_source_spans,
    save_features,
    write_dataset,
)
from srg.synth import synth_generate
from srg.video import FeatureSequence, annotate_label_maps, validate_instances


def instance(start, end, class_id=0):
    return GroundTruthInstance(start=start, end=end, class_id=class_id)


def random_layout(rng, length):
    instances = []
    position = int(rng.integers(0, 4))
    while position < length:
        end = min(length - 1, position + int(rng.integers(0, 12)))
        instances.append(instance(position, end, int(rng.integers(0, 3))))
        position = end + 1 + int(rng.integers(1, 6))
    return instances


def label_maps_by_cell(instances, length, neighbors):
    """Per-cell evaluation of the label definitions"""
    none = neighbors + 1
    m_r = np.zeros((length, 2 * neighbors + 1))
    valid = np.zeros((length, 2 * neighbors + 1))
    m_s = np.zeros((length, neighbors + 2))
    m_e = np.zeros((length, neighbors + 2))
    for i in range(length):
        owner = next((inst for inst in instances if inst.start <= i <= inst.end), None)
        for column in range(2 * neighbors + 1):
            j = i + column - neighbors
            valid[i, column] = 1.0 if 0 <= j < length else 0.0
            if owner is not None and owner.start <= j <= owner.end:
                m_r[i, column] = 1.0
        if owner is None:
            m_s[i, none] = m_e[i, none] = 1.0
            continue
        back, forward = i - owner.start, owner.end - i
        m_s[i, back if back <= neighbors else none] = 1.0
        m_e[i, forward if forward <= neighbors else none] = 1.0
    return m_r, m_s, m_e, valid


def small_synth_config(**overrides):
    values = dict(
        num_videos=6,
        min_length=30,
        max_length=50,
        min_instances=1,
        max_instances=3,
        min_duration=3,
        max_duration=8,
        num_classes=3,
        appearance_dim=8,
        motion_dim=8,
        signature_noise=0.1,
        background_noise=0.1,
        seed=5,
    )
    values.update(overrides)
    return SynthConfig(**values)


# ---------------------------------------------------------------------------
# Label maps
# ---------------------------------------------------------------------------

def test_label_maps_for_reference_inside_instance():
    """L_S=10, N=4, instance [3, 6], reference 5"""
    print("\n=== Test 1: Label maps inside an instance ===")
    maps = annotate_label_maps([instance(3, 6)], num_snippets=10, neighbors=4)
    assert np.array_equal(np.flatnonzero(maps.m_r[5]), [2, 3, 4, 5]), f"Related columns wrong: {maps.m_r[5]}"
    assert np.flatnonzero(maps.m_s[5]).tolist() == [2], "Start is two snippets back"
    assert np.flatnonzero(maps.m_e[5]).tolist() == [1], "End is one snippet forward"
    print("SUCCESS: Relatedness, start and end rows match")


def test_label_maps_background_row():
    maps = annotate_label_maps([instance(3, 6)], num_snippets=10, neighbors=4)
    assert not maps.m_r[0].any(), "Background rows relate to nothing"
    assert maps.m_s[0, 5] == 1 and maps.m_e[0, 5] == 1, "Background boundaries point at none"
    assert maps.actionness.tolist() == [0, 0, 0, 1, 1, 1, 1, 0, 0, 0]


def test_label_maps_match_per_cell_definition():
    """100 random layouts against a per-cell evaluator"""
    rng = np.random.default_rng(0)
    for _ in range(100):
        length = int(rng.integers(5, 40))
        neighbors = int(rng.integers(1, 9))
        layout = random_layout(rng, length)
        maps = annotate_label_maps(layout, length, neighbors)
        m_r, m_s, m_e, valid = label_maps_by_cell(layout, length, neighbors)
        assert np.array_equal(maps.m_r, m_r), "Relatedness map differs from the per-cell definition"
        assert np.array_equal(maps.m_s, m_s), "Start map differs from the per-cell definition"
        assert np.array_equal(maps.m_e, m_e), "End map differs from the per-cell definition"
        assert np.array_equal(maps.valid_r, valid), "Valid mask differs from the per-cell definition"

        assert np.all(maps.m_s.sum(axis=1) == 1) and np.all(maps.m_e.sum(axis=1) == 1), "Rows are one-hot"
        none_rows = maps.m_s[:, neighbors + 1] == 1
        background = maps.actionness == 0
        assert np.all(maps.m_e[background, neighbors + 1] == 1) and not maps.m_r[background].any()
        assert np.all(none_rows[background]), "Background rows point at none"

        for i in range(length):
            expected = max(0, neighbors - i) + max(0, neighbors - (length - 1 - i))
            assert (1 - maps.valid_r[i]).sum() == expected, f"Row {i} masks the wrong number of columns"
            ones = np.flatnonzero(maps.m_r[i])
            if ones.size:
                assert np.array_equal(ones, np.arange(ones[0], ones[-1] + 1)), "Related run must be contiguous"
                assert ones[0] <= neighbors <= ones[-1], "Related run contains the reference"


def test_long_instance_falls_back_to_none():
    maps = annotate_label_maps([instance(0, 19)], num_snippets=20, neighbors=3)
    assert maps.m_s[10, 4] == 1 and maps.m_e[10, 4] == 1, "Boundaries out of the window become none"
    assert maps.m_r[10].all(), "Relatedness is clipped to the window"


def test_overlapping_instances_rejected():
    with pytest.raises(InstanceValidationError):
        annotate_label_maps([instance(2, 6), instance(6, 9)], num_snippets=12, neighbors=3)
    with pytest.raises(InstanceValidationError):
        validate_instances([instance(5, 12)], num_snippets=10)
    with pytest.raises(ValidationError):
        instance(7, 3)


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

def test_synth_is_deterministic():
    print("\n=== Test 2: Same seed, same corpus ===")
    first = synth_generate(small_synth_config())
    second = synth_generate(small_synth_config())
    assert len(first.videos) == 6, "num_videos videos are generated"
    for a, b in zip(first.videos, second.videos):
        assert encode_features(a.features) == encode_features(b.features), f"{a.video_id} features differ"
        assert a.instances == b.instances, f"{a.video_id} layouts differ"
    other = synth_generate(small_synth_config(seed=6))
    assert encode_features(other.videos[0].features) != encode_features(first.videos[0].features)
    print("SUCCESS: Corpus is bit-identical under the same seed")


def test_synth_layouts_respect_config():
    dataset = synth_generate(small_synth_config(num_videos=20))
    for video in dataset.videos:
        length = video.features.num_snippets
        assert 30 <= length <= 50, f"{video.video_id} length {length} out of range"
        assert 1 <= len(video.instances) <= 3
        validate_instances(video.instances, length)
        for inst in video.instances:
            assert 3 <= inst.length <= 8, f"{video.video_id} duration {inst.length} out of range"
            assert inst.class_id < 3


def test_zero_noise_makes_class_snippets_identical():
    dataset = synth_generate(small_synth_config(signature_noise=0.0, num_videos=10))
    by_class = {}
    for video in dataset.videos:
        for inst in video.instances:
            for t in range(inst.start, inst.end + 1):
                column = np.concatenate([video.features.appearance[:, t], video.features.motion[:, t]])
                reference = by_class.setdefault(inst.class_id, column)
                assert np.array_equal(column, reference), f"Class {inst.class_id} snippets differ"


def test_nearest_signature_classifier_is_accurate():
    """Noise 0.1 keeps snippets close to their class signature"""
    dataset = synth_generate(small_synth_config(num_videos=20, appearance_dim=16, motion_dim=16))
    signatures = np.vstack([
        np.concatenate([dataset.appearance_signatures, dataset.motion_signatures], axis=1),
        np.concatenate([dataset.background_appearance, dataset.background_motion])[None, :],
    ])
    background = len(signatures) - 1
    correct = total = 0
    for video in dataset.videos:
        labels = np.full(video.features.num_snippets, background)
        for inst in video.instances:
            labels[inst.start:inst.end + 1] = inst.class_id
        columns = np.concatenate([video.features.appearance, video.features.motion]).T
        distances = ((columns[:, None, :] - signatures[None, :, :]) ** 2).sum(axis=2)
        correct += int((distances.argmin(axis=1) == labels).sum())
        total += len(labels)
    assert correct / total > 0.99, f"Nearest-signature accuracy {correct / total:.4f}"


def test_infeasible_layout_raises():
    with pytest.raises(GenerationError):
        synth_generate(small_synth_config(min_instances=5, max_instances=5, min_duration=10, max_duration=10,
                                          min_length=20, max_length=20))
    with pytest.raises(ValidationError):
        small_synth_config(min_length=60)


# ---------------------------------------------------------------------------
# Feature and checkpoint binaries
# ---------------------------------------------------------------------------

def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    features = FeatureSequence(rng.standard_normal((5, 13)), rng.standard_normal((3, 13)))
    path = tmp_path / "video.srgf"
    save_features(path, features)
    loaded = load_features(path)
    assert np.array_equal(loaded.appearance, features.appearance), "Appearance must round-trip bit-exactly"
    assert np.array_equal(loaded.motion, features.motion), "Motion must round-trip bit-exactly"
    assert path.read_bytes() == encode_features(loaded), "Re-encoding gives identical bytes"
    assert path.read_bytes()[:4] == b"SRGF"
    assert struct.unpack("<IIII", path.read_bytes()[4:20]) == (1, 13, 5, 3), "Header fields"


def test_feature_file_errors_report_offsets():
    features = FeatureSequence(np.ones((2, 4)), np.zeros((2, 4)))
    data = encode_features(features)

    with pytest.raises(ParseError) as info:
        decode_features(data[:10])
    assert info.value.offset == 8, f"Shortfall starts at the dimension fields, got {info.value.offset}"

    with pytest.raises(ParseError) as info:
        decode_features(data[:-2])
    assert info.value.offset is not None and info.value.offset > 20, "Truncated payload reports its offset"

    with pytest.raises(ParseError) as info:
        decode_features(b"XXXX" + data[4:])
    assert info.value.offset == 0, "Bad magic is reported at offset 0"

    with pytest.raises(ParseError) as info:
        decode_features(data[:4] + struct.pack("<I", 9) + data[8:])
    assert info.value.offset == 4, "Unsupported version is reported at its field"

    with pytest.raises(ParseError):
        decode_features(data + b"\x00")


def test_checkpoint_round_trip_and_truncation():
    rng = np.random.default_rng(2)
    tensors = {
        "tign.head_r.w": rng.standard_normal((7, 4, 3)).astype(np.float32),
        "tign.head_r.b": rng.standard_normal(7).astype(np.float32),
        "scale": np.array(2.5, dtype=np.float32),
    }
    data = encode_checkpoint(tensors)
    assert data[:4] == b"SRGW"
    decoded = decode_checkpoint(data)
    assert list(decoded) == list(tensors), "Tensor order is preserved"
    for name, array in tensors.items():
        assert decoded[name].shape == array.shape and np.array_equal(decoded[name], array), f"{name} differs"
    with pytest.raises(ParseError):
        decode_checkpoint(data[:-1])


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------

def test_annotation_line_parses():
    annotations = parse_annotations("# header\nvid7\t12\t40\t3\n")
    assert annotations == {"vid7": [instance(12, 40, 3)]}, f"Unexpected parse {annotations}"


def test_annotations_sorted_and_validated():
    annotations = parse_annotations("v\t20\t25\t1\nv\t2\t5\t0  # first\n")
    assert [i.start for i in annotations["v"]] == [2, 20], "Instances come back sorted by start"

    with pytest.raises(ParseError) as info:
        parse_annotations("# header\nv\t1\t2\t0\nv\tx\t3\t0\n")
    assert info.value.line == 3, f"Error should name line 3, got {info.value.line}"

    with pytest.raises(ParseError) as info:
        parse_annotations("v\t1\t2\n")
    assert info.value.line == 1

    with pytest.raises(InstanceValidationError):
        parse_annotations("v\t1\t5\t0\nv\t4\t8\t0\n")


def test_proposal_text_round_trip():
    proposals = {
        "b": [Proposal(video_id="b", refined_t_s=1.25, refined_t_e=7.5, c=0.875)],
        "a": [Proposal(video_id="a", refined_t_s=0.0, refined_t_e=3.0, c=0.5)],
    }
    text = format_proposals(proposals)
    assert text.splitlines()[0] == "a\t0.000000\t3.000000\t0.500000", "Sorted by video, six decimals"
    parsed = parse_proposals(text)
    assert parsed["b"][0].span == (1.25, 7.5) and parsed["b"][0].c == 0.875
    with pytest.raises(ParseError):
        parse_proposals("a\t3.0\t1.0\t0.5\n")


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------

def test_dataset_directory_round_trip(tmp_path):
    dataset = synth_generate(small_synth_config())
    directory = tmp_path / "dataset"
    write_dataset(directory, {"train": dataset.videos[:4], "test": dataset.videos[4:]}, seed=5, num_classes=3)
    train = load_dataset(directory, "train")
    test = load_dataset(directory, "test")
    assert [v.video_id for v in train] == [v.video_id for v in dataset.videos[:4]]
    assert len(test) == 2
    for loaded, original in zip(train + test, dataset.videos):
        assert np.array_equal(loaded.features.appearance, original.features.appearance)
        assert loaded.instances == original.instances


def test_missing_dataset_names_producer(tmp_path):
    with pytest.raises(MissingArtifactError) as info:
        load_dataset(tmp_path / "nothing", "train")
    assert info.value.producer == "synth"


def test_atomic_directory_leaves_nothing_on_failure(tmp_path):
    target = tmp_path / "out"
    with pytest.raises(RuntimeError):
        with atomic_directory(target) as scratch:
            (scratch / "partial.txt").write_text("x")
            raise RuntimeError("interrupted")
    assert not target.exists(), "Failed writes must not leave the target behind"
    assert [p.name for p in tmp_path.iterdir() if p.name != "logs"] == [], "Scratch directory is cleaned up"


def test_grouped_text_writes_replace_all_or_nothing(tmp_path):
    print("\n=== Test 1: Grouped atomic writes ===")
    proposals_path = tmp_path / "run" / "proposals.tsv"
    intervals_path = tmp_path / "run" / "intervals.tsv"
    atomic_write_texts({proposals_path: "old proposals\n", intervals_path: "old intervals\n"})
    assert proposals_path.read_text() == "old proposals\n" and intervals_path.read_text() == "old intervals\n"

    blocker = tmp_path / "run" / "blocker"
    blocker.write_text("a file where a directory is expected")
    with pytest.raises(OSError):
        atomic_write_texts({proposals_path: "new proposals\n", blocker / "intervals.tsv": "new intervals\n"})
    assert proposals_path.read_text() == "old proposals\n", "A failed group leaves earlier files untouched"
    leftovers = [p.name for p in (tmp_path / "run").iterdir() if ".tmp-" in p.name]
    assert leftovers == [], f"Staged files must be removed, found {leftovers}"
    print("SUCCESS: No target replaced when one write fails")


def test_source_span_text_keeps_sources_apart():
    text = format_source_spans({"v2": {"WRS": [(1, 3)]}, "v1": {"RS": [(1, 3), (0, 4)], "WRS": [(1, 3)]}})
    assert text.splitlines() == ["v1\tRS\t1\t3", "v1\tRS\t0\t4", "v1\tWRS\t1\t3", "v2\tWRS\t1\t3"]
    parsed = parse_source_spans(text)
    assert parsed["RS"] == {"v1": [(1, 3), (0, 4)]}
    assert parsed["WRS"] == {"v1": [(1, 3)], "v2": [(1, 3)]}
    assert parse_source_spans("") == {"RS": {}, "WRS": {}}
    with pytest.raises(ParseError) as info:
        parse_source_spans("v1\tRS\t1\t3\nv1\tMIX\t1\t3\n")
    assert info.value.line == 2
