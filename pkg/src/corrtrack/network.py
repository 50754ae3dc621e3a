"""Joint detection/tracking network built on the autodiff tensor engine.

A small stride-8 backbone produces a feature map F; a classification branch
outputs a center-confidence map; Q/K/V maps feed a global correlation layer
whose correlation vectors drive absolute box regression. The tracking path
re-uses the correlation and box-head weights with single-query correlation
against the current frame's K map, plus its own confidence head.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Tensor


@dataclass(frozen=True)
class NetworkConfig:
    input_h: int = 128
    input_w: int = 224
    channels: int = 64        # feature / QKV channel count
    corr_channels: int = 64   # correlation vector length
    num_classes: int = 1
    use_gate: bool = True
    use_value_concat: bool = True
    position_embedding: str = "cosine"  # or "explicit"

    def __post_init__(self):
        if self.input_h % 8 or self.input_w % 8:
            raise ValueError(
                f"input dims must be divisible by 8, got {self.input_h}x{self.input_w}")
        if self.channels % 2:
            raise ValueError(f"channel count must be even, got {self.channels}")
        if self.position_embedding not in ("cosine", "explicit"):
            raise ValueError(f"unknown position embedding {self.position_embedding!r}")

    @property
    def feat_h(self) -> int:
        return self.input_h // 8

    @property
    def feat_w(self) -> int:
        return self.input_w // 8

    @property
    def cells(self) -> int:
        return self.feat_h * self.feat_w

    def to_meta(self) -> dict[str, str]:
        return {f"net.{k}": str(v) for k, v in self.__dict__.items()}

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "NetworkConfig":
        kw = {}
        for f_ in cls.__dataclass_fields__:
            raw = meta[f"net.{f_}"]
            kind = cls.__dataclass_fields__[f_].type
            if kind == "int":
                kw[f_] = int(raw)
            elif kind == "bool":
                kw[f_] = raw == "True"
            else:
                kw[f_] = raw
        return cls(**kw)


def position_embedding(feat_h: int, feat_w: int, channels: int,
                       kind: str = "cosine") -> np.ndarray:
    """Deterministic per-position code of shape [feat_h, feat_w, channels].

    The cosine variant gives nearby positions high cosine similarity; the
    explicit variant encodes the raw row/column index (ablation baseline).
    """
    if channels % 2:
        raise ValueError(f"channel count must be even, got {channels}")
    i = np.arange(feat_h, dtype=np.float64)[:, None, None]
    j = np.arange(feat_w, dtype=np.float64)[None, :, None]
    k = np.arange(channels, dtype=np.float64)[None, None, :]
    first = k < channels / 2
    if kind == "cosine":
        p = np.where(first,
                     np.cos(4 * np.pi * k / channels + np.pi * i / feat_h),
                     np.cos(4 * np.pi * k / channels + np.pi * j / feat_w))
    elif kind == "explicit":
        p = np.where(first, i + 0 * k, j + 0 * k)
    else:
        raise ValueError(f"unknown position embedding {kind!r}")
    return p + np.zeros((feat_h, feat_w, channels))


def gate(x: Tensor, attention: Tensor) -> Tensor:
    """Multiply every channel of x by the single-channel spatial map."""
    if x.shape[:-1] != attention.shape[:-1] or attention.shape[-1] != 1:
        raise ValueError(
            f"gate shape mismatch: x {x.shape} vs attention {attention.shape}")
    return T.mul(x, attention)


@dataclass
class DetectionOutput:
    """Dense training-mode outputs; boxes in feature-map units [cx,cy,h,w]."""
    heatmap: Tensor   # [b, fh, fw, n] in (0,1)
    boxes: Tensor     # [b, fh, fw, 4]
    q: Tensor
    k: Tensor
    v: Tensor
    features: Tensor


@dataclass
class FrameDetections:
    """Eval-mode per-frame result used by the online tracker (plain numpy)."""
    peaks: list            # [(row, col, cls, score)]
    boxes_px: np.ndarray   # [n_peaks, 4] in input pixels
    q: np.ndarray          # [fh, fw, c]
    k: np.ndarray
    v: np.ndarray
    heatmap: np.ndarray    # [fh, fw, n]


class CorrelationNetwork:
    """Parameter container plus forward passes for detection and tracking."""

    STRIDE = 8

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}
        self.pos = position_embedding(
            config.feat_h, config.feat_w, config.channels,
            config.position_embedding).astype(dtype)
        self._init_params(np.random.default_rng(seed))
        # tracking-side op counter: one unit per correlated feature cell
        self.track_cell_ops = 0

    # -- parameters ---------------------------------------------------------
    def _add_conv(self, rng, name, k, cin, cout, bn=True):
        std = np.sqrt(2.0 / (k * k * cin))
        self.params[f"{name}.w"] = Tensor(
            rng.normal(0.0, std, (k, k, cin, cout)).astype(self.dtype),
            requires_grad=True)
        if bn:
            self._add_bn(name, cout)
        else:
            self.params[f"{name}.b"] = Tensor(
                np.zeros(cout, dtype=self.dtype), requires_grad=True)

    def _add_bn(self, name, ch):
        self.params[f"{name}.gamma"] = Tensor(np.ones(ch, dtype=self.dtype),
                                              requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(ch, dtype=self.dtype),
                                             requires_grad=True)
        self.bn[name] = BatchNormState.create(ch, dtype=self.dtype)

    def _add_linear(self, rng, name, cin, cout):
        std = np.sqrt(1.0 / cin)
        self.params[f"{name}.w"] = Tensor(
            rng.normal(0.0, std, (cin, cout)).astype(self.dtype), requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(cout, dtype=self.dtype),
                                          requires_grad=True)

    def _init_params(self, rng):
        c = self.config.channels
        cq = self.config.corr_channels
        n = self.config.num_classes
        self._add_conv(rng, "stage1", 3, 3, c // 4)
        self._add_conv(rng, "stage2", 3, c // 4, c // 2)
        self._add_conv(rng, "stage3", 3, c // 2, c)
        self._add_conv(rng, "stage4", 3, c, c)
        self._add_conv(rng, "lateral", 1, c, c, bn=False)
        self._add_conv(rng, "topdown", 1, c, c, bn=False)
        self._add_conv(rng, "fuse", 3, c, c)
        self._add_conv(rng, "cls1", 3, c, c)
        self._add_conv(rng, "cls2", 1, c, n, bn=False)
        # bias the confidence head towards empty maps at initialization
        self.params["cls2.b"].data[...] = -2.19
        self._add_conv(rng, "q", 1, c, c, bn=False)
        self._add_bn("q_bn", c)
        self._add_conv(rng, "k", 1, c, c, bn=False)
        self._add_bn("k_bn", c)
        self._add_conv(rng, "v", 1, c, c, bn=False)
        self._add_linear(rng, "corr", self.config.cells, cq)
        box_in = cq + c if self.config.use_value_concat else cq
        self._add_bn("box_bn", box_in)
        self._add_linear(rng, "box", box_in, 4)
        self._add_linear(rng, "tconf1", cq, 32)
        self._add_linear(rng, "tconf2", 32, 1)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for name, p in self.params.items():
            p.data = arrays[name].astype(self.dtype).reshape(p.data.shape)
        for name, st in self.bn.items():
            st.running_mean = arrays[f"{name}.running_mean"].astype(self.dtype)
            st.running_var = arrays[f"{name}.running_var"].astype(self.dtype)

    # -- building blocks ----------------------------------------------------
    def _conv_bn_relu(self, x, name, stride=1, training=False):
        x = T.conv2d(x, self.params[f"{name}.w"], stride=stride, padding="same")
        x = T.batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                         self.bn[name], training)
        return T.relu(x)

    def _conv_bias(self, x, name, stride=1):
        x = T.conv2d(x, self.params[f"{name}.w"], stride=stride, padding="same")
        return T.add(x, self.params[f"{name}.b"])

    def backbone(self, images: Tensor, training: bool) -> Tensor:
        s1 = self._conv_bn_relu(images, "stage1", 2, training)
        s2 = self._conv_bn_relu(s1, "stage2", 2, training)
        s3 = self._conv_bn_relu(s2, "stage3", 2, training)
        s4 = self._conv_bn_relu(s3, "stage4", 2, training)
        lat = self._conv_bias(s3, "lateral")
        top = T.upsample2x(self._conv_bias(s4, "topdown"),
                           s3.shape[1], s3.shape[2])
        return self._conv_bn_relu(T.add(lat, top), "fuse", 1, training)

    def classification(self, feats: Tensor, training: bool) -> Tensor:
        x = self._conv_bn_relu(feats, "cls1", 1, training)
        return T.sigmoid(self._conv_bias(x, "cls2"))

    def _attention(self, heatmap: Tensor) -> Tensor:
        att = heatmap[..., 0:1]
        for ch in range(1, self.config.num_classes):
            att = T.maximum(att, heatmap[..., ch:ch + 1])
        return att

    def compute_qkv(self, feats: Tensor, heatmap: Tensor, training: bool):
        pos = Tensor(self.pos)
        q = T.batch_norm(T.add(self._conv_bias(feats, "q"), pos),
                         self.params["q_bn.gamma"], self.params["q_bn.beta"],
                         self.bn["q_bn"], training)
        k = T.batch_norm(T.add(self._conv_bias(feats, "k"), pos),
                         self.params["k_bn.gamma"], self.params["k_bn.beta"],
                         self.bn["k_bn"], training)
        if self.config.use_gate:
            k = gate(k, self._attention(heatmap))
        v = self._conv_bias(feats, "v")
        return q, k, v

    def global_correlation(self, q: Tensor, k: Tensor) -> Tensor:
        """Dense correlation map [b, fh, fw, corr_channels].

        For every position, cosine similarities of its query vector against
        all key positions are flattened and linearly projected.
        """
        b = q.shape[0]
        cells, c = self.config.cells, self.config.channels
        qn = T.normalize_rows(T.reshape(q, (b, cells, c)))
        kn = T.normalize_rows(T.reshape(k, (b, cells, c)))
        sim = T.matmul(qn, T.transpose(kn, (0, 2, 1)))  # [b, cells, cells]
        corr = T.matmul(sim, self.params["corr.w"])
        corr = T.add(corr, self.params["corr.b"])
        return T.reshape(corr, (b, self.config.feat_h, self.config.feat_w, -1))

    def query_correlation(self, query: Tensor, k: Tensor) -> Tensor:
        """Single-query correlation vector [corr_channels]; k is [fh,fw,c]."""
        cells, c = self.config.cells, self.config.channels
        qn = T.normalize_rows(T.reshape(query, (1, c)))
        kn = T.normalize_rows(T.reshape(k, (cells, c)))
        sim = T.matmul(qn, T.transpose(kn))  # [1, cells]
        corr = T.add(T.matmul(sim, self.params["corr.w"]), self.params["corr.b"])
        return T.reshape(corr, (-1,))

    def query_correlation_rows(self, queries: Tensor, k: Tensor) -> Tensor:
        """Correlation vectors [p, corr_channels] for a stack of query rows."""
        cells, c = self.config.cells, self.config.channels
        qn = T.normalize_rows(queries)
        kn = T.normalize_rows(T.reshape(k, (cells, c)))
        sim = T.matmul(qn, T.transpose(kn))
        return T.add(T.matmul(sim, self.params["corr.w"]), self.params["corr.b"])

    def _box_transform(self, raw: Tensor) -> Tensor:
        """[..., 4] raw head output -> [cx, cy, h, w] in feature-map units.

        Centers are affinely rescaled so a unit-scale head covers the whole
        map (initial outputs sit mid-map); sizes go through softplus with a
        gain so they start near typical object scale and stay positive.
        """
        fh, fw = self.config.feat_h, self.config.feat_w
        cx = T.add(T.mul(raw[..., 0:1], fw / 4.0), fw / 2.0)
        cy = T.add(T.mul(raw[..., 1:2], fh / 4.0), fh / 2.0)
        hw = T.mul(T.softplus(raw[..., 2:4]), 3.0)
        return T.concat([cx, cy, hw], axis=-1)

    def box_head(self, corr: Tensor, v: Tensor, training: bool) -> Tensor:
        """Boxes in feature-map units from correlation (+ value) vectors."""
        x = T.concat([corr, v], axis=-1) if self.config.use_value_concat else corr
        x = T.batch_norm(x, self.params["box_bn.gamma"], self.params["box_bn.beta"],
                         self.bn["box_bn"], training)
        raw = T.linear(x, self.params["box.w"], self.params["box.b"])
        return self._box_transform(raw)

    def tracking_confidence(self, corr: Tensor) -> Tensor:
        h = T.relu(T.linear(corr, self.params["tconf1.w"], self.params["tconf1.b"]))
        return T.sigmoid(T.linear(h, self.params["tconf2.w"], self.params["tconf2.b"]))

    # -- forward passes -----------------------------------------------------
    def detection_forward(self, images, training: bool = False) -> DetectionOutput:
        """Dense forward pass; images [b, h, w, 3] in [0, 1]."""
        images = images if isinstance(images, Tensor) else Tensor(
            np.asarray(images, dtype=self.dtype))
        if images.shape[1] != self.config.input_h or images.shape[2] != self.config.input_w:
            raise ValueError(
                f"expected {self.config.input_h}x{self.config.input_w} input, "
                f"got {images.shape[1]}x{images.shape[2]}")
        feats = self.backbone(images, training)
        heatmap = self.classification(feats, training)
        q, k, v = self.compute_qkv(feats, heatmap, training)
        corr = self.global_correlation(q, k)
        boxes = self.box_head(corr, v, training)
        return DetectionOutput(heatmap, boxes, q, k, v, feats)

    def tracking_forward(self, queries: list[tuple[Tensor, Tensor]], k: Tensor,
                         training: bool = False) -> list[tuple[Tensor, Tensor]]:
        """Per-query tracking outputs against a current-frame key map.

        queries: (q, v) vector pairs; k: [fh, fw, c]. Returns one
        (confidence scalar, box [4]) pair per query, order preserved.
        """
        out = []
        for qv, vv in queries:
            self.track_cell_ops += self.config.cells
            corr = self.query_correlation(qv, k)
            box = self.box_head(T.reshape(corr, (1, -1)),
                                T.reshape(vv, (1, -1)), training)
            conf = self.tracking_confidence(T.reshape(corr, (1, -1)))
            out.append((T.reshape(conf, ()), T.reshape(box, (4,))))
        return out

    # -- eval-mode sparse interface for the online tracker -------------------
    def detect(self, frame: np.ndarray, peak_threshold: float = 0.3) -> FrameDetections:
        """Eval-mode detection computing boxes only at heatmap peaks."""
        from .tracker import extract_peaks  # avoid cycle at import time
        out = self.detection_forward(frame[None], training=False)
        heat = out.heatmap.data[0]
        q, k, v = out.q.data[0], out.k.data[0], out.v.data[0]
        peaks = extract_peaks(heat, peak_threshold)
        boxes = []
        for (row, col, _cls, _score) in peaks:
            corr = self.query_correlation(Tensor(q[row, col]), Tensor(k))
            box = self.box_head(T.reshape(corr, (1, -1)),
                                Tensor(v[row, col][None]), training=False)
            boxes.append(box.data[0] * self.STRIDE)
        boxes_px = np.array(boxes).reshape(len(peaks), 4)
        return FrameDetections(peaks, boxes_px, q, k, v, heat)

    def track(self, query_q: np.ndarray, query_v: np.ndarray,
              k: np.ndarray) -> tuple[float, np.ndarray]:
        """Eval-mode single-track step; returns (confidence, box in pixels)."""
        (conf, box), = self.tracking_forward(
            [(Tensor(query_q), Tensor(query_v))], Tensor(k), training=False)
        return float(conf.data), box.data * self.STRIDE


def ablated(config: NetworkConfig, variant: str) -> NetworkConfig:
    """Named ablation variants of a base configuration."""
    if variant == "full":
        return config
    if variant == "no_gate":
        return replace(config, use_gate=False)
    if variant == "no_value_concat":
        return replace(config, use_value_concat=False)
    if variant == "explicit_pos":
        return replace(config, position_embedding="explicit")
    raise ValueError(f"unknown ablation variant {variant!r}")
