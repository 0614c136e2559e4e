#!/usr/bin/env python3
"""
End-to-end tests: synth -> train-tign -> train-tien -> propose -> eval on a
micro configuration, through the command-line entry point
"""

import sys
import tempfile
from pathlib import Path

from main import main as srg_main
from srg.config import build_run_config
from srg.logger import configure_log_dir
from srg.metrics import tiou
from srg.models import Proposal
from srg.pipeline import RunLayout, cmd_ablate, cmd_eval, cmd_propose, cmd_synth, cmd_train_tign
from srg.storage import decode_score_maps, load_checkpoint, load_dataset, load_proposals, save_proposals

MICRO_CONFIG = """\
# micro run: a few short videos, a few training steps
num_train_videos = 4
num_test_videos = 3
min_length = 40
max_length = 60
max_instances = 2
min_duration = 6
max_duration = 12
num_classes = 3
appearance_dim = 6
motion_dim = 6
neighbors = 8
tign_hidden = 8
tien_hidden = 4
tign_levels = 3:1, 5:3
tien_levels = 1:3, 3:3
attention_reduction = 2
attention_kernel = 3
tign_epochs = 2
tien_steps = 3
tien_batch_size = 8
feature_length = 16
context_length = 2
an_values = 1, 5, 10
auc_max_an = 10
"""

STAGES = ["synth", "train-tign", "train-tien", "propose", "eval"]


def write_micro_config(directory: Path, extra: str = "") -> Path:
    path = Path(directory) / "micro.cfg"
    path.write_text(MICRO_CONFIG + extra, encoding="utf-8")
    return path


def run_stages(run_dir: Path, config_path: Path, stages=STAGES):
    for stage in stages:
        code = srg_main([stage, "--out", str(run_dir), "--config", str(config_path)])
        assert code == 0, f"{stage} exited with {code}"


def test_full_pipeline(tmp_path):
    print("\n=== Test 1: Micro pipeline end to end ===")
    run_dir = tmp_path / "run"
    run_stages(run_dir, write_micro_config(tmp_path))

    for name in ("tign.srgw", "tien.srgw", "tign_losses.csv", "tien_losses.csv", "intervals.tsv",
                 "source_spans.tsv", "proposals.tsv", "metrics.csv", "dataset/manifest.json"):
        assert (run_dir / name).exists(), f"{name} was not written"
    assert (run_dir / "logs" / "srg_log.jsonl").exists(), "Commands log to the run directory"
    assert "tien.fc.w" in load_checkpoint(run_dir / "tien.srgw")

    videos = {v.video_id: v for v in load_dataset(run_dir / "dataset", "test")}
    proposals = load_proposals(run_dir / "proposals.tsv")
    assert set(proposals) <= set(videos)
    for vid, ranked in proposals.items():
        last = videos[vid].features.num_snippets - 1
        assert all(0.0 <= p.refined_t_s <= p.refined_t_e <= last for p in ranked), "Spans stay on the timeline"
        assert [p.c for p in ranked] == sorted((p.c for p in ranked), reverse=True), "Ranked by score"
        for a in range(len(ranked)):
            for b in range(a + 1, len(ranked)):
                assert tiou(ranked[a].span, ranked[b].span) <= 0.83 + 1e-4, "NMS left an overlapping pair"

    metrics = (run_dir / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert metrics[0] == "metric,AN,tIoU,value"
    assert any(line.startswith("AUC,,,") for line in metrics)
    assert any(line.startswith("baseline_AR,10,") for line in metrics), "Random baseline reported alongside"
    assert any(line.startswith("interval_recall_RS+WRS,") for line in metrics)
    print("SUCCESS: Every stage wrote its artifacts")


def test_same_seed_same_outputs(tmp_path):
    config_path = write_micro_config(tmp_path)
    first, second = tmp_path / "first", tmp_path / "second"
    run_stages(first, config_path)
    run_stages(second, config_path)
    for name in ("proposals.tsv", "metrics.csv", "tign_losses.csv", "tien_losses.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), f"{name} differs between runs"
    assert (first / "tign.srgw").read_bytes() == (second / "tign.srgw").read_bytes()


def test_eval_of_ground_truth_recalls_everything(tmp_path):
    config = build_run_config(config_path=write_micro_config(tmp_path))
    layout = RunLayout.for_run(config, tmp_path / "run")
    cmd_synth(config, layout)
    videos = load_dataset(layout.dataset, "test")
    save_proposals(
        layout.proposals,
        {
            v.video_id: [Proposal(video_id=v.video_id, refined_t_s=i.start, refined_t_e=i.end, c=1.0)
                         for i in v.instances]
            for v in videos
        },
    )
    result = cmd_eval(config, layout)
    assert result["AR@10"] == 1.0, "Exact proposals reach recall 1 at every tIoU"
    rows = layout.metrics.read_text(encoding="utf-8").splitlines()
    assert "recall,10,1.00,1.000000" in rows


def test_missing_artifact_fails_with_exit_code(tmp_path, capsys):
    print("\n=== Test 2: Missing checkpoint ===")
    config_path = write_micro_config(tmp_path)
    run_dir = tmp_path / "run"
    assert srg_main(["synth", "--out", str(run_dir), "--config", str(config_path)]) == 0
    assert srg_main(["propose", "--out", str(run_dir), "--config", str(config_path)]) == 1
    assert "train-tign" in capsys.readouterr().err, "The error names the producing command"
    assert not (run_dir / "proposals.tsv").exists(), "Nothing written on failure"
    assert srg_main(["eval", "--out", str(tmp_path / "empty"), "--config", str(config_path)]) == 1
    print("SUCCESS: Exit code 1 and the producer is named")


def test_configuration_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 1\nwidth = 3\n", encoding="utf-8")
    assert srg_main(["synth", "--out", str(tmp_path / "run"), "--config", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert srg_main(["train-tign", "--out", str(tmp_path / "run"), "--profile", "paperish"]) == 1, "Forward-only"


def test_interval_only_proposals_and_score_map_dump(tmp_path):
    config = build_run_config(config_path=write_micro_config(tmp_path, "dump_score_maps = true\n"))
    layout = RunLayout.for_run(config, tmp_path / "run")
    cmd_synth(config, layout)
    cmd_train_tign(config, layout)
    result = cmd_propose(config, layout, interval_only=True)
    assert result["intervals"] >= result["proposals"] > 0
    assert not layout.tien_checkpoint.exists(), "Interval-only proposals do not need TIEN"

    video = load_dataset(layout.dataset, "test")[0]
    o_r, o_s, o_e = decode_score_maps((layout.root / "score_maps" / f"{video.video_id}.srgm").read_bytes())
    length = video.features.num_snippets
    assert o_r.shape == (length, 17) and o_s.shape == (length, 10) and o_e.shape == (length, 10)


def test_ablation_writes_labeled_blocks(tmp_path):
    config = build_run_config(
        config_path=write_micro_config(tmp_path, "ablate_blocks = PN+CM\nablate_boost = off, on\n")
    )
    layout = RunLayout.for_run(config, tmp_path / "run")
    cmd_synth(config, layout)
    result = cmd_ablate(config, layout)
    text = (layout.root / "ablation.csv").read_text(encoding="utf-8")
    assert "# variant=TIGN_PN+TIEN_CM\n" in text and "# variant=TIGN_PN+TIEN_CM+boost\n" in text
    assert text.count("metric,AN,tIoU,value") == 2, "One metrics block per variant"
    assert "TIGN_PN+TIEN_CM+boost AR@10" in result


def test_interval_only_ablation_trains_the_actionness_head(tmp_path):
    """Interval-only variants score by actionness even when the run config leaves the head off"""
    config = build_run_config(
        config_path=write_micro_config(
            tmp_path, "ablate_blocks = PN+PN\nablate_boost = off\nablate_interval_only = true\n"
        )
    )
    assert not config.actionness_head
    layout = RunLayout.for_run(config, tmp_path / "run")
    cmd_synth(config, layout)
    cmd_ablate(config, layout)
    for block in ("CM", "PN"):
        checkpoint = load_checkpoint(layout.root / "ablation" / f"TIGN_{block}" / "tign.srgw")
        assert "tign.head_a.w" in checkpoint, f"TIGN_{block} was trained without the actionness head"
    text = (layout.root / "ablation.csv").read_text(encoding="utf-8")
    for name in ("TIGN_PN+TIEN_PN", "TIGN_CM+intervals", "TIGN_PN+intervals"):
        assert f"# variant={name}\n" in text, f"{name} block missing"


def main():
    """Run all tests"""
    print("=" * 80)
    print("SRG PIPELINE INTEGRATION TESTS")
    print("=" * 80)

    try:
        for test in (
            test_full_pipeline,
            test_same_seed_same_outputs,
            test_eval_of_ground_truth_recalls_everything,
            test_interval_only_proposals_and_score_map_dump,
            test_ablation_writes_labeled_blocks,
            test_interval_only_ablation_trains_the_actionness_head,
        ):
            with tempfile.TemporaryDirectory() as directory:
                configure_log_dir(Path(directory) / "logs")
                test(Path(directory))
        print("\n" + "=" * 80)
        print("ALL TESTS PASSED!")
        print("=" * 80)
    except AssertionError as e:
        print(f"\nTEST FAILED: {str(e)}")
        import traceback
        traceback.print_exc()
        sys.exit(1)


if __name__ == "__main__":
    main()
