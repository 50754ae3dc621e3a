"""Checkpoint container round-trip and config serialization tests."""

import numpy as np
import pytest

from corrtrack.checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from corrtrack.config import RunConfig, dump_toml, load_config
from corrtrack.network import CorrelationNetwork, NetworkConfig


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "a.w": rng.normal(size=(3, 3, 2, 4)).astype(np.float32),
            "a.b": rng.normal(size=4),
            "scalars": np.array(np.pi),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tensors, {"stage": "detect-pretrain", "step": "5"})
        loaded, meta = load_checkpoint(path)
        assert set(loaded) == set(tensors)
        for name, arr in tensors.items():
            assert loaded[name].dtype == arr.dtype
            assert loaded[name].shape == arr.shape
            assert loaded[name].tobytes() == arr.tobytes()
        assert meta["stage"] == "detect-pretrain" and meta["step"] == "5"

    def test_network_state_round_trip(self, tmp_path):
        cfg = NetworkConfig(input_h=32, input_w=32, channels=8, corr_channels=8)
        net = CorrelationNetwork(cfg, seed=1, dtype=np.float32)
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, net.state_arrays(), cfg.to_meta())
        arrays, meta = load_checkpoint(path)
        other = CorrelationNetwork(NetworkConfig.from_meta(meta), seed=99,
                                   dtype=np.float32)
        other.load_state_arrays(arrays)
        img = np.random.default_rng(2).uniform(size=(1, 32, 32, 3)).astype(np.float32)
        np.testing.assert_array_equal(
            net.detection_forward(img).heatmap.data,
            other.detection_forward(img).heatmap.data)

    def test_identical_saves_hash_identically(self, tmp_path):
        tensors = {"x": np.arange(10.0)}
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, tensors)
        save_checkpoint(p2, tensors)
        assert checkpoint_hash(p1) == checkpoint_hash(p2)

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestRunConfig:
    def test_toml_round_trip(self, tmp_path):
        cfg = RunConfig()
        path = tmp_path / "config.toml"
        path.write_text(dump_toml(cfg))
        loaded = load_config(path)
        assert loaded.network == cfg.network
        assert loaded.scene == cfg.scene
        assert loaded.pipeline == cfg.pipeline
        assert loaded.train == cfg.train

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("[train]\nbogus_knob = 3\n")
        with pytest.raises(ValueError, match="bogus_knob"):
            load_config(path)

    def test_section_values_applied(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("[scene]\nseed = 42\nframes = 12\n"
                        "[pipeline]\np1 = 0.6\n")
        cfg = load_config(path)
        assert cfg.scene.seed == 42 and cfg.scene.frames == 12
        assert cfg.pipeline.p1 == 0.6
