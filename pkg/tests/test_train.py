"""Optimizer and training-loop unit tests on tiny models."""

import numpy as np
import pytest

from corrtrack import tensor as T
from corrtrack.network import CorrelationNetwork, NetworkConfig
from corrtrack.synth import SceneConfig
from corrtrack.tensor import Tensor
from corrtrack.train import (Adam, SyntheticDataset, train_detection,
                             train_joint)


def tiny_setup(seed=0):
    net_cfg = NetworkConfig(input_h=32, input_w=48, channels=8, corr_channels=8)
    scene = SceneConfig(image_h=32, image_w=48, min_objects=1, max_objects=2,
                        min_size=10, max_size=14, frames=6,
                        occlusion_allowed=False, seed=seed)
    net = CorrelationNetwork(net_cfg, seed=seed, dtype=np.float32)
    data = SyntheticDataset(scene, n_sequences=2)
    return net, data


class TestAdam:
    def test_minimizes_quadratic(self):
        x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = Adam({"x": x}, lr=0.1)
        for _ in range(200):
            opt.zero_grad()
            T.tsum(x ** 2.0).backward()
            opt.step()
        np.testing.assert_allclose(x.data, 0.0, atol=1e-2)

    def test_gradient_clipping_bounds_update(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam({"x": x}, lr=1.0, grad_clip=1.0)
        opt.zero_grad()
        T.tsum(x * 1e9).backward()
        assert np.linalg.norm(x.grad) > 1.0
        opt.step()
        assert abs(x.data[0]) <= 1.0 + 1e-6

    def test_state_round_trip_resumes_identically(self):
        def run(load_from=None, steps=5):
            x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
            opt = Adam({"x": x}, lr=0.05)
            if load_from:
                x.data[:] = load_from[0]
                opt.load_state_arrays(load_from[1])
            for _ in range(steps):
                opt.zero_grad()
                T.tsum((x - 3.0) ** 2.0).backward()
                opt.step()
            return x.data.copy(), {k: v.copy() for k, v in
                                   opt.state_arrays().items()}

        full, _ = run(steps=10)
        half = run(steps=5)
        resumed, _ = run(load_from=half, steps=5)
        np.testing.assert_array_equal(full, resumed)


class TestTrainingLoops:
    def test_detection_loss_decreases(self):
        net, data = tiny_setup()
        res = train_detection(net, data, steps=30, batch_size=2, seed=0)
        first = np.mean([h.total for h in res.history[:5]])
        last = np.mean([h.total for h in res.history[-5:]])
        assert last < first

    def test_detection_training_is_seed_deterministic(self):
        outs = []
        for _ in range(2):
            net, data = tiny_setup()
            train_detection(net, data, steps=3, batch_size=2, seed=7)
            outs.append({k: v.copy() for k, v in net.state_arrays().items()})
        for key in outs[0]:
            np.testing.assert_array_equal(outs[0][key], outs[1][key])

    def test_joint_step_emits_all_terms(self):
        net, data = tiny_setup()
        res = train_joint(net, data, steps=3, batch_size=2, seed=0)
        assert len(res.history) == 3
        entry = res.history[0]
        for value in (entry.det_cla, entry.det_reg, entry.track_cla):
            assert np.isfinite(value)
        assert entry.total == pytest.approx(
            entry.det_cla + entry.track_cla
            + 0.1 * (entry.det_reg + entry.track_reg))

    def test_non_finite_loss_aborts_with_step_id(self):
        net, data = tiny_setup()
        net.params["cls2.b"].data[...] = np.nan
        with pytest.raises((FloatingPointError, ValueError)):
            train_detection(net, data, steps=1, batch_size=2, seed=0)
