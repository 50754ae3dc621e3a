"""Synthetic sequence generator and augmentation tests."""

import numpy as np
import pytest

from corrtrack.boxes import BoundingBox
from corrtrack.synth import (GroundTruthFrame, GroundTruthObject, SceneConfig,
                             TrainSample, augment, augment_fixed_size,
                             generate_sequence, read_ppm, write_ppm)


def cfg(**kw):
    base = dict(image_h=64, image_w=96, frames=8, seed=3)
    base.update(kw)
    return SceneConfig(**base)


class TestSceneConfig:
    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError, match="divisible by 8"):
            SceneConfig(image_h=60, image_w=96)

    def test_oversized_objects_rejected(self):
        with pytest.raises(ValueError):
            cfg(min_size=70, max_size=80)

    def test_empty_ranges_rejected(self):
        with pytest.raises(ValueError):
            cfg(min_objects=3, max_objects=1)


class TestGenerateSequence:
    def test_same_seed_bitwise_identical(self):
        f1, g1 = generate_sequence(cfg(seed=11))
        f2, g2 = generate_sequence(cfg(seed=11))
        np.testing.assert_array_equal(f1, f2)
        for a, b in zip(g1, g2):
            assert [(o.object_id, o.box) for o in a.objects] == \
                   [(o.object_id, o.box) for o in b.objects]

    def test_different_seed_differs(self):
        f1, _ = generate_sequence(cfg(seed=1))
        f2, _ = generate_sequence(cfg(seed=2))
        assert not np.array_equal(f1, f2)

    def test_zero_objects(self):
        frames, gts = generate_sequence(cfg(min_objects=0, max_objects=0))
        assert all(not g.objects for g in gts)
        # background is static: all frames identical
        np.testing.assert_array_equal(frames[0], frames[-1])

    def test_constant_velocity_kinematics(self):
        c = cfg(min_objects=1, max_objects=1, jitter=0.0,
                occlusion_allowed=False, frames=10)
        _, gts = generate_sequence(c)
        xs = [g.objects[0].box.cx for g in gts]
        deltas = np.diff(xs)
        np.testing.assert_allclose(deltas, deltas[0], atol=1e-9)

    def test_easy_mode_objects_stay_fully_visible(self):
        for seed in range(5):
            c = cfg(occlusion_allowed=False, seed=seed, frames=20,
                    image_h=128, image_w=224, min_size=24, max_size=56)
            _, gts = generate_sequence(c)
            n = len(gts[0].objects)
            assert n >= 1
            for g in gts:
                assert len(g.objects) == n
                assert all(o.fully_visible for o in g.objects)

    def test_ids_stable_and_unique_per_frame(self):
        _, gts = generate_sequence(cfg(seed=4, frames=12))
        for g in gts:
            ids = [o.object_id for o in g.objects]
            assert len(ids) == len(set(ids))

    def test_object_pixels_inside_expanded_box(self):
        c = cfg(min_objects=1, max_objects=1, jitter=0.0,
                occlusion_allowed=False, seed=6)
        frames, gts = generate_sequence(c)
        bg, _ = generate_sequence(
            SceneConfig(**{**c.__dict__, "min_objects": 0, "max_objects": 0}))
        changed = np.argwhere(np.any(frames[0] != bg[0], axis=-1))
        left, top, right, bottom = gts[0].objects[0].box.corners
        ys, xs = changed[:, 0], changed[:, 1]
        assert ys.min() >= top - 1 and ys.max() <= bottom + 1
        assert xs.min() >= left - 1 and xs.max() <= right + 1


def sample_pair(seed=0, **kw):
    frames, gts = generate_sequence(cfg(seed=seed, **kw))
    return TrainSample(frames[0], frames[2], gts[0], gts[2], 2)


class FixedRng:
    """Deterministic stand-in driving augment's random draws."""

    def __init__(self, random_value, uniforms):
        self._random = random_value
        self._uniforms = list(uniforms)

    def random(self):
        return self._random

    def uniform(self, lo, hi):
        v = self._uniforms.pop(0)
        assert lo <= v <= hi
        return v


class TestAugment:
    def test_flip_is_involution(self):
        s = sample_pair()
        once = augment(s, FixedRng(0.0, [1.0, 1.0]))   # flip, no bright/scale
        twice = augment(once, FixedRng(0.0, [1.0, 1.0]))
        np.testing.assert_array_equal(twice.frame_a, s.frame_a)
        for o1, o2 in zip(twice.gt_a.objects, s.gt_a.objects):
            assert o1.box.cx == pytest.approx(o2.box.cx)

    def test_brightness_identity_factor(self):
        s = sample_pair()
        out = augment(s, FixedRng(1.0, [1.0, 1.0]))    # no flip, factor 1
        np.testing.assert_array_equal(out.frame_a, s.frame_a)
        np.testing.assert_array_equal(out.frame_b, s.frame_b)

    def test_brightness_multiplicative(self):
        s = sample_pair()
        out = augment(s, FixedRng(1.0, [0.8, 1.0]))
        np.testing.assert_allclose(out.frame_a, np.clip(s.frame_a * 0.8, 0, 1))

    def test_scale_half_halves_boxes_and_dims(self):
        s = sample_pair()
        h, w = s.frame_a.shape[:2]
        out = augment(s, FixedRng(1.0, [1.0, 0.5]),
                      scale_range=(0.5, 1.25))
        assert out.frame_a.shape[:2] == (h // 2, w // 2)
        for o_out, o_in in zip(out.gt_a.objects, s.gt_a.objects):
            assert o_out.box.w == pytest.approx(o_in.box.w / 2)
            assert o_out.box.h == pytest.approx(o_in.box.h / 2)

    def test_scaled_dims_stay_stride8(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            out = augment(sample_pair(), rng)
            assert out.frame_a.shape[0] % 8 == 0
            assert out.frame_a.shape[1] % 8 == 0

    def test_box_rederivable_from_pixels_after_flip(self):
        c = cfg(min_objects=1, max_objects=1, jitter=0.0,
                occlusion_allowed=False, seed=6)
        frames, gts = generate_sequence(c)
        bg, _ = generate_sequence(
            SceneConfig(**{**c.__dict__, "min_objects": 0, "max_objects": 0}))
        s = TrainSample(frames[0], frames[1], gts[0], gts[1], 1)
        sb = TrainSample(bg[0], bg[1], gts[0], gts[1], 1)
        out = augment(s, FixedRng(0.0, [1.0, 1.0]))
        out_bg = augment(sb, FixedRng(0.0, [1.0, 1.0]))
        changed = np.argwhere(np.any(out.frame_a != out_bg.frame_a, axis=-1))
        box = out.gt_a.objects[0].box
        ys, xs = changed[:, 0], changed[:, 1]
        assert abs((xs.min() + xs.max() + 1) / 2 - box.cx) <= 1.0
        assert abs((ys.min() + ys.max() + 1) / 2 - box.cy) <= 1.0

    def test_fixed_size_variant_preserves_dims(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            s = sample_pair()
            out = augment_fixed_size(s, rng)
            assert out.frame_a.shape == s.frame_a.shape
            assert out.frame_b.shape == s.frame_b.shape


class TestPpm:
    def test_round_trip_exact_at_8bit(self, tmp_path):
        rng = np.random.default_rng(10)
        img = np.round(rng.uniform(0, 1, (16, 24, 3)) * 255) / 255
        path = tmp_path / "frame.ppm"
        write_ppm(path, img)
        np.testing.assert_allclose(read_ppm(path), img, atol=1e-12)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "frame.ppm"
        path.write_bytes(b"P5\n1 1\n255\nx")
        with pytest.raises(ValueError, match="PPM"):
            read_ppm(path)
