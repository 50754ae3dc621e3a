"""End-to-end CLI tests on tiny configurations."""

import json
import os

import numpy as np
import pytest

from corrtrack.checkpoint import load_checkpoint
from corrtrack.cli import main
from corrtrack.synth import read_ppm
from corrtrack.tracker import read_track_records

TINY = """
[network]
input_h = 32
input_w = 48
channels = 8
corr_channels = 8

[scene]
image_h = 32
image_w = 48
min_objects = 1
max_objects = 2
min_size = 10
max_size = 14
frames = 4
occlusion_allowed = false

[train]
pretrain_steps = 2
finetune_steps = 2
batch_size = 2
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return str(path)


@pytest.fixture()
def dataset(tiny_config, tmp_path):
    out = str(tmp_path / "data")
    assert main(["gen", "--config", tiny_config, "--out", out,
                 "--sequences", "2"]) == 0
    return out


class TestGen:
    def test_writes_frames_and_gt(self, dataset):
        assert sorted(os.listdir(dataset))[:2] == ["config.toml", "seq_000"]
        seq = os.path.join(dataset, "seq_000")
        frames = [n for n in os.listdir(seq) if n.endswith(".ppm")]
        assert len(frames) == 4
        img = read_ppm(os.path.join(seq, "frame_000.ppm"))
        assert img.shape == (32, 48, 3)
        assert read_track_records(os.path.join(seq, "gt.txt"))

    def test_same_seed_byte_identical(self, tiny_config, tmp_path):
        outs = []
        for name in ("d1", "d2"):
            out = str(tmp_path / name)
            assert main(["gen", "--config", tiny_config, "--out", out,
                         "--sequences", "1", "--seed", "5"]) == 0
            seq = os.path.join(out, "seq_000")
            outs.append(b"".join(
                open(os.path.join(seq, n), "rb").read()
                for n in sorted(os.listdir(seq))))
        assert outs[0] == outs[1]

    def test_refuses_nonempty_dir(self, dataset, capsys):
        assert main(["gen", "--out", dataset]) == 1
        assert "not empty" in capsys.readouterr().err

    def test_invalid_dims_error_names_constraint(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[scene]\nimage_h = 30\nimage_w = 48\n")
        assert main(["gen", "--config", str(cfg),
                     "--out", str(tmp_path / "x")]) == 1
        assert "divisible by 8" in capsys.readouterr().err


class TestTrain:
    def test_pretrain_then_finetune_and_resume(self, tiny_config, dataset, tmp_path):
        pre = str(tmp_path / "pre")
        assert main(["train", "--config", tiny_config, "--stage",
                     "detect-pretrain", "--data", dataset, "--out", pre]) == 0
        ckpt = os.path.join(pre, "checkpoint.ckpt")
        _, meta = load_checkpoint(ckpt)
        assert meta["stage"] == "detect-pretrain" and meta["step"] == "2"
        log = open(os.path.join(pre, "loss_log.txt")).read().splitlines()
        assert len(log) == 2 and log[0].split()[0] == "0"

        fine = str(tmp_path / "fine")
        assert main(["train", "--config", tiny_config, "--stage",
                     "joint-finetune", "--data", dataset, "--out", fine,
                     "--init", ckpt]) == 0
        _, meta = load_checkpoint(os.path.join(fine, "checkpoint.ckpt"))
        assert meta["stage"] == "joint-finetune"
        # joint stage logs all four loss terms per step
        line = open(os.path.join(fine, "loss_log.txt")).read().splitlines()[0]
        assert len(line.split()) == 6

        more = str(tmp_path / "more")
        assert main(["train", "--config", tiny_config, "--stage",
                     "detect-pretrain", "--data", dataset, "--out", more,
                     "--resume", ckpt, "--steps", "2"]) == 0
        _, meta = load_checkpoint(os.path.join(more, "checkpoint.ckpt"))
        assert meta["step"] == "4"

    def test_finetune_requires_init(self, tiny_config, dataset, tmp_path, capsys):
        assert main(["train", "--config", tiny_config, "--stage",
                     "joint-finetune", "--data", dataset,
                     "--out", str(tmp_path / "x")]) == 1
        assert "requires --init" in capsys.readouterr().err


class TestTrackEvalRender:
    @pytest.fixture()
    def pipeline_run(self, tiny_config, dataset, tmp_path):
        pre = str(tmp_path / "pre")
        main(["train", "--config", tiny_config, "--stage", "detect-pretrain",
              "--data", dataset, "--out", pre])
        ckpt = os.path.join(pre, "checkpoint.ckpt")
        tracks = str(tmp_path / "tracks.txt")
        frames_dir = os.path.join(dataset, "seq_000")
        assert main(["track", "--checkpoint", ckpt, "--frames", frames_dir,
                     "--out", tracks, "--config", tiny_config]) == 0
        return frames_dir, tracks

    def test_track_output_readable_and_hash_stamped(self, pipeline_run):
        _, tracks = pipeline_run
        read_track_records(tracks)   # format validates
        assert "# checkpoint_sha256 " in open(tracks).read()

    def test_eval_writes_reports(self, pipeline_run, dataset, tmp_path):
        frames_dir, tracks = pipeline_run
        out = str(tmp_path / "report")
        assert main(["eval", "--pred", tracks,
                     "--gt", os.path.join(frames_dir, "gt.txt"),
                     "--out", out]) == 0
        report = json.load(open(os.path.join(out, "report.json")))
        for key in ("AP", "MOTA", "MOTP", "MT", "ML", "IDS", "FM", "FP", "FN"):
            assert key in report
        text = open(os.path.join(out, "report.txt")).read()
        assert "MOTA=" in text
        assert open(os.path.join(out, "pr_curve.csv")).readline() == \
            "recall,precision\n"

    def test_render_writes_annotated_frames(self, pipeline_run, tmp_path):
        frames_dir, tracks = pipeline_run
        out = str(tmp_path / "render")
        assert main(["render", "--frames", frames_dir, "--tracks", tracks,
                     "--out", out]) == 0
        rendered = sorted(os.listdir(out))
        assert len(rendered) == 4
        img = read_ppm(os.path.join(out, rendered[0]))
        assert img.shape == (32, 48, 3)

    def test_missing_input_is_exit_code_1(self, tmp_path, capsys):
        assert main(["track", "--checkpoint", str(tmp_path / "nope.ckpt"),
                     "--frames", str(tmp_path), "--out",
                     str(tmp_path / "t.txt")]) == 1
