"""Adam optimizer, synthetic datasets, and the two training stages:
detection pretraining, then joint fine-tuning with paired frames."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import targets as tg
from . import tensor as T
from .boxes import BoundingBox
from .network import CorrelationNetwork, NetworkConfig
from .synth import SceneConfig, TrainSample, augment_fixed_size, generate_sequence
from .tensor import Tensor
from .tracker import PipelineConfig, Tracker, records_from_results


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float = 10.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        if self.grad_clip is not None:
            sq = sum(float((p.grad ** 2).sum())
                     for p in self.params.values() if p.grad is not None)
            norm = np.sqrt(sq)
            scale = self.grad_clip / norm if norm > self.grad_clip else 1.0
        else:
            scale = 1.0
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * scale
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1 ** self.t)
            vhat = self.v[name] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array(float(self.t))}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.t = int(arrays["adam.t"])
        for name in self.params:
            self.m[name] = arrays[f"adam.m.{name}"].reshape(self.m[name].shape).copy()
            self.v[name] = arrays[f"adam.v.{name}"].reshape(self.v[name].shape).copy()


class SyntheticDataset:
    """A fixed pool of generated sequences plus batch samplers."""

    def __init__(self, scene: SceneConfig, n_sequences: int, seed_offset: int = 0):
        self.scene = scene
        self.sequences = []
        for s in range(n_sequences):
            cfg = replace(scene, seed=scene.seed + seed_offset + s)
            self.sequences.append(generate_sequence(cfg))

    @classmethod
    def from_sequences(cls, scene: SceneConfig, sequences) -> "SyntheticDataset":
        ds = cls.__new__(cls)
        ds.scene = scene
        ds.sequences = list(sequences)
        return ds

    def frame_targets(self, gt_frame, net_config: NetworkConfig) -> tg.TargetMaps:
        objects = [(o.cls, o.box.scaled(1.0 / 8.0).to_array())
                   for o in gt_frame.objects]
        return tg.build_targets(objects, net_config.feat_h, net_config.feat_w,
                                net_config.num_classes)

    def sample_pair(self, rng, max_gap: int = 5) -> TrainSample:
        frames, gts = self.sequences[rng.integers(len(self.sequences))]
        gap = int(rng.integers(1, min(max_gap, len(frames) - 1) + 1))
        t0 = int(rng.integers(0, len(frames) - gap))
        return TrainSample(frames[t0], frames[t0 + gap], gts[t0], gts[t0 + gap], gap)

    def detection_batch(self, rng, batch: int, augment: bool = True):
        images, gt_frames = [], []
        for _ in range(batch):
            sample = self.sample_pair(rng)
            if augment:
                sample = augment_fixed_size(sample, rng)
            images.append(sample.frame_a)
            gt_frames.append(sample.gt_a)
        return np.stack(images), gt_frames

    def pair_batch(self, rng, batch: int, augment: bool = True):
        samples = []
        for _ in range(batch):
            sample = self.sample_pair(rng)
            if augment:
                sample = augment_fixed_size(sample, rng)
            samples.append(sample)
        return samples


def detection_step(net: CorrelationNetwork, images, target_maps) -> tuple[Tensor, Tensor]:
    out = net.detection_forward(images, training=True)
    return tg.detection_loss(out.heatmap, out.boxes, target_maps)


def joint_step(net: CorrelationNetwork, dataset: SyntheticDataset,
               samples: list[TrainSample]):
    """Forward both frames of each pair and assemble all four loss terms."""
    cfg = net.config
    frames_a = np.stack([s.frame_a for s in samples])
    frames_b = np.stack([s.frame_b for s in samples])
    out_a = net.detection_forward(frames_a, training=True)
    out_b = net.detection_forward(frames_b, training=True)
    tmaps = [dataset.frame_targets(s.gt_a, cfg) for s in samples]
    l_dcla, l_dreg = tg.detection_loss(out_a.heatmap, out_a.boxes, tmaps)

    corr_parts, v_parts = [], []
    persists, t_boxes, weights = [], [], []
    for s, (sample, tm) in enumerate(zip(samples, tmaps)):
        rs, cs = np.nonzero(tm.positive_mask)
        if rs.size == 0:
            continue
        ids_b = {o.object_id: o.box for o in sample.gt_b.objects}
        obj_list = sample.gt_a.objects
        q_rows = out_a.q[s][rs, cs]
        v_rows = out_a.v[s][rs, cs]
        corr_parts.append(net.query_correlation_rows(q_rows, out_b.k[s]))
        v_parts.append(v_rows)
        for r, c in zip(rs, cs):
            obj = obj_list[tm.target_object[r, c]]
            alive = obj.object_id in ids_b
            persists.append(alive)
            t_boxes.append(ids_b[obj.object_id].scaled(1 / 8.0).to_array()
                           if alive else np.ones(4))
            weights.append(tm.regression_weights[r, c])
    if corr_parts:
        corr_all = T.concat(corr_parts, axis=0)
        v_all = T.concat(v_parts, axis=0)
        boxes_t = net.box_head(corr_all, v_all, training=True)
        confs_t = T.reshape(net.tracking_confidence(corr_all), (-1,))
        l_tcla, l_treg = tg.tracking_loss(
            confs_t, boxes_t, np.array(persists), np.array(t_boxes),
            np.array(weights))
        l_treg = T.mul(l_treg, 1.0 / len(samples))
    else:
        l_tcla = Tensor(np.zeros(()))
        l_treg = Tensor(np.zeros(()))
    return l_dcla, l_dreg, l_tcla, l_treg


@dataclass
class TrainResult:
    history: list           # per-step LossBreakdown
    steps_run: int


def train_detection(net: CorrelationNetwork, dataset: SyntheticDataset,
                    steps: int, batch_size: int = 8, lr: float = 1e-3,
                    seed: int = 0, optimizer: Adam | None = None,
                    start_step: int = 0, log=None) -> TrainResult:
    rng = np.random.default_rng(seed + start_step)
    opt = optimizer or Adam(net.params, lr=lr)
    history = []
    for step in range(start_step, start_step + steps):
        images, gt_frames = dataset.detection_batch(rng, batch_size)
        tmaps = [dataset.frame_targets(g, net.config) for g in gt_frames]
        opt.zero_grad()
        l_cla, l_reg = detection_step(net, images.astype(net.dtype), tmaps)
        loss = tg.total_loss(l_cla, l_reg, Tensor(np.zeros(())), Tensor(np.zeros(())))
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite loss at step {step}")
        loss.backward()
        opt.step()
        entry = tg.LossBreakdown(float(l_cla.data), float(l_reg.data), 0.0, 0.0)
        history.append(entry)
        if log:
            log(step, entry)
    return TrainResult(history, steps)


def train_joint(net: CorrelationNetwork, dataset: SyntheticDataset,
                steps: int, batch_size: int = 8, lr: float = 1e-3,
                seed: int = 0, optimizer: Adam | None = None,
                start_step: int = 0, log=None) -> TrainResult:
    rng = np.random.default_rng(seed + 100000 + start_step)
    opt = optimizer or Adam(net.params, lr=lr)
    history = []
    for step in range(start_step, start_step + steps):
        samples = dataset.pair_batch(rng, batch_size)
        for s in samples:
            s.frame_a = s.frame_a.astype(net.dtype)
            s.frame_b = s.frame_b.astype(net.dtype)
        opt.zero_grad()
        l_dcla, l_dreg, l_tcla, l_treg = joint_step(net, dataset, samples)
        loss = tg.total_loss(l_dcla, l_dreg, l_tcla, l_treg)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite loss at step {step}")
        loss.backward()
        opt.step()
        entry = tg.LossBreakdown(float(l_dcla.data), float(l_dreg.data),
                                 float(l_tcla.data), float(l_treg.data))
        history.append(entry)
        if log:
            log(step, entry)
    return TrainResult(history, steps)


# -- evaluation helpers ----------------------------------------------------

def detection_records(net: CorrelationNetwork, sequences, videos=None,
                      peak_threshold: float = 0.15):
    """Eval-mode detections and matching ground truth as record lists."""
    preds, gts = [], []
    for v, (frames, gt_frames) in enumerate(sequences):
        video = videos[v] if videos else f"seq{v:03d}"
        for t, frame in enumerate(frames):
            det = net.detect(frame.astype(net.dtype), peak_threshold)
            for n, ((row, col, cls, score), box) in enumerate(
                    zip(det.peaks, det.boxes_px)):
                preds.append((video, t, n + 1, BoundingBox.from_array(box),
                              score, "det"))
            for o in gt_frames[t].objects:
                gts.append((video, t, o.object_id, o.box, 1.0, "gt"))
    return preds, gts


def tracking_records(net: CorrelationNetwork, sequences,
                     pipeline: PipelineConfig | None = None, videos=None):
    preds, gts = [], []
    for v, (frames, gt_frames) in enumerate(sequences):
        video = videos[v] if videos else f"seq{v:03d}"
        tracker = Tracker(net, pipeline)
        results = [tracker.step(f.astype(net.dtype)) for f in frames]
        preds.extend(records_from_results(video, results))
        for t, gt in enumerate(gt_frames):
            for o in gt.objects:
                gts.append((video, t, o.object_id, o.box, 1.0, "gt"))
    return preds, gts
