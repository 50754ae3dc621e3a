"""Training targets and losses.

Target maps (Gaussian center heatmaps, positive-cell assignment, per-cell box
targets) are plain numpy; losses take network output tensors so gradients
flow. All box coordinates here are in feature-map units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

GAUSSIAN_IOU_THRESHOLD = 0.3
POSITIVE_GAUSS_MIN = 0.3
CENTER_WEIGHT = 2.0
REGRESSION_WEIGHT = 0.1
HEAT_CLAMP = 1e-6


def gaussian_sigmas(h: float, w: float,
                    iou_threshold: float = GAUSSIAN_IOU_THRESHOLD) -> tuple[float, float]:
    """Gaussian spread from box size: sigma = size*(1-t)/(3*(1+t))."""
    s = (1.0 - iou_threshold) / (3.0 * (1.0 + iou_threshold))
    return h * s, w * s


@dataclass
class TargetMaps:
    heatmap: np.ndarray             # [fh, fw, n], 1.0 exactly at object centers
    positive_mask: np.ndarray       # [fh, fw] bool
    regression_weights: np.ndarray  # [fh, fw], values {0, 1, 2}
    box_targets: np.ndarray         # [fh, fw, 4] feature-map units, valid at positives
    target_object: np.ndarray       # [fh, fw] index into the object list, -1 outside
    gaussians: np.ndarray           # [n_obj, fh, fw] per-object kernels
    clamped_centers: list           # object indices whose center fell off the map


def gaussian_stack(boxes_fm: np.ndarray, fh: int, fw: int,
                   iou_threshold: float = GAUSSIAN_IOU_THRESHOLD):
    """Per-object Gaussian kernels [n_obj, fh, fw] and snapped center cells.

    Centers are rounded to the nearest grid cell, so each kernel is exactly 1
    there; off-map centers are clamped to the border cell and reported.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0,1), got {iou_threshold}")
    boxes_fm = np.asarray(boxes_fm, dtype=np.float64).reshape(-1, 4)
    n_obj = boxes_fm.shape[0]
    gauss = np.zeros((n_obj, fh, fw))
    rows = np.zeros(n_obj, dtype=int)
    cols = np.zeros(n_obj, dtype=int)
    clamped = []
    ii = np.arange(fh)[:, None]
    jj = np.arange(fw)[None, :]
    for n, (cx, cy, h, w) in enumerate(boxes_fm):
        r, c = int(round(cy)), int(round(cx))
        if not (0 <= r < fh and 0 <= c < fw):
            clamped.append(n)
            r, c = min(max(r, 0), fh - 1), min(max(c, 0), fw - 1)
        rows[n], cols[n] = r, c
        sx, sy = gaussian_sigmas(h, w, iou_threshold)
        gauss[n] = np.exp(-(ii - r) ** 2 / (2 * sx ** 2) - (jj - c) ** 2 / (2 * sy ** 2))
    return gauss, rows, cols, clamped


def assign_positives(gauss: np.ndarray):
    """Positive cells and their regression weights from the Gaussian stack.

    A cell is positive when some object's kernel exceeds 0.3 there and the
    remaining kernels sum below 0.3 (no ambiguous overlap). Weight 2 at exact
    centers (kernel value 1), 1 elsewhere.
    """
    n_obj = gauss.shape[0]
    if n_obj == 0:
        fh, fw = gauss.shape[1:] if gauss.ndim == 3 else (0, 0)
        return (np.zeros((fh, fw), dtype=bool), np.zeros((fh, fw)),
                np.full((fh, fw), -1, dtype=int))
    total = gauss.sum(axis=0)
    best = gauss.max(axis=0)
    owner = gauss.argmax(axis=0)
    positive = (best > POSITIVE_GAUSS_MIN) & (total - best < POSITIVE_GAUSS_MIN)
    weights = np.where(positive, np.where(best == 1.0, CENTER_WEIGHT, 1.0), 0.0)
    owner = np.where(positive, owner, -1)
    return positive, weights, owner


def build_targets(objects, fh: int, fw: int, num_classes: int,
                  iou_threshold: float = GAUSSIAN_IOU_THRESHOLD) -> TargetMaps:
    """Full target maps for one frame.

    objects: sequence of (class_index, box) with boxes as [cx,cy,h,w] arrays
    in feature-map units.
    """
    classes = np.array([c for c, _ in objects], dtype=int)
    boxes = (np.array([np.asarray(b, dtype=np.float64) for _, b in objects])
             if objects else np.zeros((0, 4)))
    gauss, rows, cols, clamped = gaussian_stack(boxes, fh, fw, iou_threshold)

    heatmap = np.zeros((fh, fw, num_classes))
    for k in range(num_classes):
        sel = classes == k
        if sel.any():
            heatmap[:, :, k] = gauss[sel].max(axis=0)
    heatmap[rows, cols, classes] = 1.0  # exact peak at every center cell

    positive, weights, owner = assign_positives(gauss)
    box_targets = np.zeros((fh, fw, 4))
    if len(objects):
        valid = owner >= 0
        box_targets[valid] = boxes[owner[valid]]
    return TargetMaps(heatmap, positive, weights, box_targets, owner, gauss, clamped)


# -- losses ----------------------------------------------------------------

@dataclass
class LossBreakdown:
    det_cla: float
    det_reg: float
    track_cla: float
    track_reg: float

    @property
    def total(self) -> float:
        return self.det_cla + self.track_cla + REGRESSION_WEIGHT * (
            self.det_reg + self.track_reg)


def focal_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Penalty-reduced pixel-wise focal loss, normalized by map size.

    Cells with target exactly 1 use (1-p)^2*log(p); the rest use
    (1-t)^2 * p^2 * log(1-p). A leading batch axis, if present, is averaged.
    """
    target = np.asarray(target, dtype=np.float64)
    if not np.isfinite(pred.data).all():
        raise ValueError("focal_loss: non-finite predictions")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    cells = int(np.prod(target.shape[-3:])) if target.ndim >= 3 else target.size
    batch = target.size // cells
    p = T.clip(pred, HEAT_CLAMP, 1.0 - HEAT_CLAMP)
    pos = (target == 1.0).astype(np.float64)
    neg = 1.0 - pos
    pos_term = T.mul(T.mul(T.power(T.sub(1.0, p), 2.0), T.log(p)), pos)
    neg_w = neg * (1.0 - target) ** 2
    neg_term = T.mul(T.mul(T.power(p, 2.0), T.log(T.sub(1.0, p))), neg_w)
    total = T.tsum(T.add(pos_term, neg_term))
    return T.mul(total, -1.0 / (cells * batch))


def ciou_terms(pred: Tensor, target: np.ndarray) -> Tensor:
    """Elementwise CIoU loss over [..., 4] boxes in [cx,cy,h,w] form.

    1 - IoU + center_distance^2/enclosing_diag^2 + alpha*v, with the
    aspect-ratio term v = (4/pi^2)(atan(w_t/h_t) - atan(w_p/h_p))^2 and
    alpha = v/((1-IoU)+v). Fully differentiated, alpha included.
    """
    target = np.asarray(target, dtype=np.float64)
    if np.any(target[..., 2] * target[..., 3] <= 0):
        raise ValueError("ciou_terms: degenerate (zero-area) target box")
    pcx, pcy = pred[..., 0], pred[..., 1]
    ph, pw = pred[..., 2], pred[..., 3]
    tcx, tcy, th, tw = (target[..., i] for i in range(4))

    pl, pr = T.sub(pcx, T.mul(pw, 0.5)), T.add(pcx, T.mul(pw, 0.5))
    pt, pb = T.sub(pcy, T.mul(ph, 0.5)), T.add(pcy, T.mul(ph, 0.5))
    tl, tr = tcx - tw / 2, tcx + tw / 2
    tt, tb = tcy - th / 2, tcy + th / 2

    iw = T.clip(T.sub(T.minimum(pr, tr), T.maximum(pl, tl)), lo=0.0)
    ih = T.clip(T.sub(T.minimum(pb, tb), T.maximum(pt, tt)), lo=0.0)
    inter = T.mul(iw, ih)
    union = T.sub(T.add(T.mul(ph, pw), th * tw), inter)
    iou = T.div(inter, T.clip(union, lo=1e-12))

    cw = T.sub(T.maximum(pr, tr), T.minimum(pl, tl))
    ch = T.sub(T.maximum(pb, tb), T.minimum(pt, tt))
    diag2 = T.clip(T.add(T.power(cw, 2.0), T.power(ch, 2.0)), lo=1e-12)
    rho2 = T.add(T.power(T.sub(pcx, tcx), 2.0), T.power(T.sub(pcy, tcy), 2.0))

    v = T.mul(T.power(T.sub(np.arctan(tw / th), T.atan(T.div(pw, ph))), 2.0),
              4.0 / np.pi ** 2)
    # denominator clipped: identical boxes give v=0, IoU=1 (0/0 otherwise)
    alpha = T.div(v, T.clip(T.add(T.sub(1.0, iou), v), lo=1e-12))
    return T.add(T.add(T.sub(1.0, iou), T.div(rho2, diag2)), T.mul(alpha, v))


def ciou_loss(pred: Tensor, target) -> Tensor:
    """Scalar CIoU loss for a single box pair."""
    return T.reshape(ciou_terms(T.reshape(pred, (1, 4)),
                                np.asarray(target).reshape(1, 4)), ())


def detection_loss(heatmap: Tensor, boxes: Tensor,
                   targets: list[TargetMaps]) -> tuple[Tensor, Tensor]:
    """(classification, regression) detection losses for a batch.

    heatmap/boxes are dense [b, fh, fw, ...] outputs; one TargetMaps per
    sample. Regression is the weighted CIoU sum over positive cells, averaged
    over the batch; empty frames contribute zero.
    """
    b = heatmap.shape[0]
    if len(targets) != b:
        raise ValueError(f"batch size {b} but {len(targets)} target maps")
    gt_heat = np.stack([t.heatmap for t in targets])
    l_cla = focal_loss(heatmap, gt_heat)

    bidx, ridx, cidx, tgts, wts = [], [], [], [], []
    for s, tm in enumerate(targets):
        rs, cs = np.nonzero(tm.positive_mask)
        bidx.append(np.full(rs.size, s))
        ridx.append(rs)
        cidx.append(cs)
        tgts.append(tm.box_targets[rs, cs])
        wts.append(tm.regression_weights[rs, cs])
    bidx = np.concatenate(bidx) if bidx else np.zeros(0, dtype=int)
    if bidx.size == 0:
        return l_cla, Tensor(np.zeros(()))
    preds = boxes[bidx, np.concatenate(ridx), np.concatenate(cidx)]
    terms = ciou_terms(preds, np.concatenate(tgts))
    l_reg = T.mul(T.tsum(T.mul(terms, np.concatenate(wts))), 1.0 / b)
    return l_cla, l_reg


def tracking_loss(confidences: Tensor, boxes: Tensor, persists: np.ndarray,
                  target_boxes: np.ndarray, weights: np.ndarray) -> tuple[Tensor, Tensor]:
    """(classification, regression) losses over tracking queries.

    confidences [P], boxes [P,4]; persists flags which queried objects still
    exist in the later frame. Classification is binary focal (target 1 for
    persisting, 0 for vanished) averaged over queries; regression is the
    weighted CIoU sum over persisting queries only.
    """
    persists = np.asarray(persists, dtype=bool)
    n = persists.size
    if n == 0:
        return Tensor(np.zeros(())), Tensor(np.zeros(()))
    l_cla = focal_loss(T.reshape(confidences, (n,)),
                       persists.astype(np.float64))
    if not persists.any():
        return l_cla, Tensor(np.zeros(()))
    idx = np.nonzero(persists)[0]
    terms = ciou_terms(boxes[idx], np.asarray(target_boxes)[idx])
    l_reg = T.tsum(T.mul(terms, np.asarray(weights)[idx]))
    return l_cla, l_reg


def total_loss(det_cla: Tensor, det_reg: Tensor,
               track_cla: Tensor, track_reg: Tensor) -> Tensor:
    """det_cla + track_cla + 0.1*(det_reg + track_reg)."""
    for name, part in (("det_cla", det_cla), ("det_reg", det_reg),
                       ("track_cla", track_cla), ("track_reg", track_reg)):
        if not np.isfinite(part.data).all():
            raise FloatingPointError(f"non-finite loss term {name}")
    return T.add(T.add(det_cla, track_cla),
                 T.mul(T.add(det_reg, track_reg), REGRESSION_WEIGHT))
