"""Deterministic synthetic video sequences: textured rectangles moving over a
static background, with exact ground truth. Stands in for a real vehicle
dataset at desk scale.

With occlusion disallowed ("easy" sequences) objects move horizontally in
disjoint lanes and stay fully visible for the whole clip; otherwise they move
freely and may enter or leave the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .boxes import BoundingBox


@dataclass(frozen=True)
class SceneConfig:
    image_h: int = 128
    image_w: int = 224
    min_objects: int = 1
    max_objects: int = 6
    min_size: int = 24
    max_size: int = 56
    max_speed: float = 3.0
    jitter: float = 0.2
    frames: int = 40
    num_classes: int = 1
    occlusion_allowed: bool = True
    min_visibility: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.image_h % 8 or self.image_w % 8:
            raise ValueError(
                f"image dims must be divisible by 8, got {self.image_h}x{self.image_w}")
        if self.min_objects > self.max_objects or self.min_size > self.max_size:
            raise ValueError("empty object-count or size range")
        if self.max_size >= min(self.image_h, self.image_w):
            raise ValueError(
                f"max object size {self.max_size} does not fit a "
                f"{self.image_h}x{self.image_w} image")
        if self.frames < 1:
            raise ValueError("need at least one frame")
        if not 0.0 <= self.min_visibility <= 1.0:
            raise ValueError("min_visibility must lie in [0, 1]")


@dataclass(frozen=True)
class GroundTruthObject:
    object_id: int
    cls: int
    box: BoundingBox
    fully_visible: bool = True


@dataclass
class GroundTruthFrame:
    frame_index: int
    objects: list = field(default_factory=list)


@dataclass
class TrainSample:
    """An image pair (earlier frame, later frame) with ground truth and gap."""
    frame_a: np.ndarray
    frame_b: np.ndarray
    gt_a: GroundTruthFrame
    gt_b: GroundTruthFrame
    gap: int


@dataclass
class _MovingObject:
    object_id: int
    cls: int
    h: float
    w: float
    start: np.ndarray       # [cx, cy] at spawn
    velocity: np.ndarray    # [vx, vy] px/frame
    spawn_frame: int
    texture: tuple          # (base rgb, stripe rgb, period)
    jitter: np.ndarray      # [frames, 2]

    def center_at(self, frame: int) -> np.ndarray:
        t = frame - self.spawn_frame
        return self.start + self.velocity * t + self.jitter[frame]


def _make_texture(rng) -> tuple:
    base = rng.uniform(0.2, 1.0, 3)
    stripe = rng.uniform(0.0, 0.8, 3)
    period = int(rng.integers(2, 6))
    return base, stripe, period


def _easy_objects(cfg: SceneConfig, rng) -> list[_MovingObject]:
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    # every horizontal lane must still fit a min-size object
    fit = max(cfg.image_h // (cfg.min_size + 4), 1)
    count = max(min(count, fit), min(cfg.min_objects, fit))
    lane_h = cfg.image_h / count
    objects = []
    for i in range(count):
        h = float(rng.uniform(cfg.min_size, min(cfg.max_size, lane_h - 2)))
        w = float(rng.uniform(cfg.min_size, cfg.max_size))
        cy = lane_h * (i + 0.5)
        vx = float(rng.uniform(-cfg.max_speed, cfg.max_speed))
        travel = vx * (cfg.frames - 1)
        margin = w / 2 + cfg.jitter * 4 + 1
        lo = margin - min(0.0, travel)
        hi = cfg.image_w - margin - max(0.0, travel)
        if lo > hi:  # too fast to stay inside: slow down and recenter
            vx *= 0.25
            travel = vx * (cfg.frames - 1)
            lo = margin - min(0.0, travel)
            hi = cfg.image_w - margin - max(0.0, travel)
        cx = float(rng.uniform(lo, hi))
        objects.append(_MovingObject(
            object_id=i + 1, cls=int(rng.integers(0, cfg.num_classes)),
            h=h, w=w, start=np.array([cx, cy]), velocity=np.array([vx, 0.0]),
            spawn_frame=0, texture=_make_texture(rng),
            jitter=rng.normal(0.0, cfg.jitter, (cfg.frames, 2))))
    return objects


def _free_objects(cfg: SceneConfig, rng) -> list[_MovingObject]:
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objects = []
    for i in range(count):
        h = float(rng.uniform(cfg.min_size, cfg.max_size))
        w = float(rng.uniform(cfg.min_size, cfg.max_size))
        spawn = int(rng.integers(0, max(1, cfg.frames // 2))) if i >= cfg.min_objects else 0
        cx = float(rng.uniform(w / 2, cfg.image_w - w / 2))
        cy = float(rng.uniform(h / 2, cfg.image_h - h / 2))
        vel = rng.uniform(-cfg.max_speed, cfg.max_speed, 2)
        objects.append(_MovingObject(
            object_id=i + 1, cls=int(rng.integers(0, cfg.num_classes)),
            h=h, w=w, start=np.array([cx, cy]), velocity=vel,
            spawn_frame=spawn, texture=_make_texture(rng),
            jitter=rng.normal(0.0, cfg.jitter, (cfg.frames, 2))))
    return objects


def _render(cfg: SceneConfig, background: np.ndarray, objs, frame: int,
            ) -> tuple[np.ndarray, GroundTruthFrame]:
    img = background.copy()
    gt = GroundTruthFrame(frame)
    yy = np.arange(cfg.image_h)[:, None]
    xx = np.arange(cfg.image_w)[None, :]
    owner = np.zeros((cfg.image_h, cfg.image_w), dtype=np.int64)
    drawn = []
    for obj in objs:
        if frame < obj.spawn_frame:
            continue
        cx, cy = obj.center_at(frame)
        box = BoundingBox(cx, cy, obj.h, obj.w)
        left, top, right, bottom = box.corners
        x0, x1 = max(int(round(left)), 0), min(int(round(right)), cfg.image_w)
        y0, y1 = max(int(round(top)), 0), min(int(round(bottom)), cfg.image_h)
        if x1 <= x0 or y1 <= y0:
            continue  # fully outside
        base, stripe, period = obj.texture
        checker = ((yy[y0:y1] // period + xx[:, x0:x1] // period) % 2)[:, :, None]
        img[y0:y1, x0:x1] = np.where(checker == 0, base, stripe)
        owner[y0:y1, x0:x1] = obj.object_id
        drawn.append((obj, box))
    for obj, box in drawn:
        # annotate only sufficiently visible objects, with the box clipped to
        # the image (matching what an annotator of the frame could draw)
        left, top, right, bottom = box.corners
        cl, ct = max(left, 0.0), max(top, 0.0)
        cr, cb = min(right, float(cfg.image_w)), min(bottom, float(cfg.image_h))
        raster_area = max((round(bottom) - round(top)) * (round(right) - round(left)), 1)
        visible = np.count_nonzero(owner == obj.object_id) / raster_area
        if visible < cfg.min_visibility:
            continue
        clipped = BoundingBox((cl + cr) / 2, (ct + cb) / 2, cb - ct, cr - cl)
        fully = (left >= 0 and top >= 0 and right <= cfg.image_w
                 and bottom <= cfg.image_h and visible >= 0.999)
        gt.objects.append(GroundTruthObject(obj.object_id, obj.cls, clipped, fully))
    return np.clip(img, 0.0, 1.0), gt


def generate_sequence(cfg: SceneConfig):
    """(frames [T,h,w,3] in [0,1], ground truth per frame); seed-deterministic."""
    rng = np.random.default_rng(cfg.seed)
    gy = np.linspace(0.25, 0.45, cfg.image_h)[:, None, None]
    background = gy + rng.normal(0.0, 0.02, (cfg.image_h, cfg.image_w, 3))
    background = np.clip(background, 0.0, 1.0)
    if cfg.max_objects == 0:
        objs = []
    elif cfg.occlusion_allowed:
        objs = _free_objects(cfg, rng)
    else:
        objs = _easy_objects(cfg, rng)
    frames = np.empty((cfg.frames, cfg.image_h, cfg.image_w, 3))
    gts = []
    for t in range(cfg.frames):
        frames[t], gt = _render(cfg, background, objs, t)
        gts.append(gt)
    return frames, gts


# -- augmentation ----------------------------------------------------------

def _flip_frame(img: np.ndarray, gt: GroundTruthFrame, width: int):
    flipped = img[:, ::-1].copy()
    objects = [replace(o, box=BoundingBox(width - o.box.cx, o.box.cy,
                                          o.box.h, o.box.w))
               for o in gt.objects]
    return flipped, GroundTruthFrame(gt.frame_index, objects)


def _brightness_frame(img: np.ndarray, factor: float):
    return np.clip(img * factor, 0.0, 1.0) if factor != 1.0 else img


def _scale_frame(img: np.ndarray, gt: GroundTruthFrame, factor: float):
    h, w = img.shape[:2]
    nh = max(8, int(round(h * factor / 8)) * 8)
    nw = max(8, int(round(w * factor / 8)) * 8)
    ry, rx = nh / h, nw / w
    yi = np.minimum((np.arange(nh) / ry).astype(int), h - 1)
    xi = np.minimum((np.arange(nw) / rx).astype(int), w - 1)
    scaled = img[yi][:, xi]
    objects = [replace(o, box=BoundingBox(o.box.cx * rx, o.box.cy * ry,
                                          o.box.h * ry, o.box.w * rx))
               for o in gt.objects]
    return scaled, GroundTruthFrame(gt.frame_index, objects)


def augment(sample: TrainSample, rng, flip_prob: float = 0.5,
            brightness_range=(0.7, 1.3), scale_range=(0.75, 1.25)) -> TrainSample:
    """Horizontal flip, brightness, scale; applied consistently to the pair.

    Scaling re-snaps to stride-8 dims, so the output image size may change.
    """
    fa, fb, ga, gb = sample.frame_a, sample.frame_b, sample.gt_a, sample.gt_b
    w = fa.shape[1]
    if rng.random() < flip_prob:
        fa, ga = _flip_frame(fa, ga, w)
        fb, gb = _flip_frame(fb, gb, w)
    factor = float(rng.uniform(*brightness_range))
    fa, fb = _brightness_frame(fa, factor), _brightness_frame(fb, factor)
    scale = float(rng.uniform(*scale_range))
    fa, ga = _scale_frame(fa, ga, scale)
    fb, gb = _scale_frame(fb, gb, scale)
    return TrainSample(fa, fb, ga, gb, sample.gap)


def augment_fixed_size(sample: TrainSample, rng, flip_prob: float = 0.5,
                       brightness_range=(0.7, 1.3),
                       scale_range=(0.8, 1.2)) -> TrainSample:
    """Like `augment`, but crops/pads back to the input dims for batching."""
    h, w = sample.frame_a.shape[:2]
    out = augment(sample, rng, flip_prob, brightness_range, scale_range)
    fa, ga = _fit_to(out.frame_a, out.gt_a, h, w)
    fb, gb = _fit_to(out.frame_b, out.gt_b, h, w)
    return TrainSample(fa, fb, ga, gb, out.gap)


def _fit_to(img: np.ndarray, gt: GroundTruthFrame, h: int, w: int):
    ih, iw = img.shape[:2]
    dy, dx = (h - ih) // 2, (w - iw) // 2
    canvas = np.zeros((h, w, 3))
    ys, xs = max(dy, 0), max(dx, 0)
    yi, xi = max(-dy, 0), max(-dx, 0)
    ch, cw = min(ih - yi, h - ys), min(iw - xi, w - xs)
    canvas[ys:ys + ch, xs:xs + cw] = img[yi:yi + ch, xi:xi + cw]
    objects = []
    for o in gt.objects:
        box = BoundingBox(o.box.cx + dx, o.box.cy + dy, o.box.h, o.box.w)
        if 0 <= box.cx < w and 0 <= box.cy < h:
            left, top, right, bottom = box.corners
            fully = o.fully_visible and left >= 0 and top >= 0 and right <= w and bottom <= h
            objects.append(replace(o, box=box, fully_visible=fully))
    return canvas, GroundTruthFrame(gt.frame_index, objects)


# -- portable pixmap I/O ---------------------------------------------------

def write_ppm(path, img01: np.ndarray):
    """Binary P6 pixmap from a float image in [0, 1]."""
    arr = np.clip(np.round(img01 * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    arr = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3)
    return arr.reshape(h, w, 3).astype(np.float64) / 255.0
