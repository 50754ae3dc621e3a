"""Detection average precision and CLEAR-MOT tracking metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import BoundingBox, iou


def detection_ap(preds: dict, gt: dict, iou_thr: float = 0.5):
    """101-point interpolated AP with greedy score-descending matching.

    preds: frame_key -> [(score, BoundingBox)], gt: frame_key -> [BoundingBox].
    Each ground-truth box can absorb at most one prediction. Returns
    (ap, [(recall, precision), ...]) with one curve point per prediction.
    """
    total_gt = sum(len(v) for v in gt.values())
    flat = [(score, key, box) for key, items in preds.items()
            for score, box in items]
    if total_gt == 0:
        return (1.0 if not flat else 0.0), []
    flat.sort(key=lambda t: -t[0])
    used: dict = {key: np.zeros(len(boxes), dtype=bool) for key, boxes in gt.items()}
    tp = np.zeros(len(flat))
    for n, (score, key, box) in enumerate(flat):
        boxes = gt.get(key, [])
        best, best_i = 0.0, -1
        for i, g in enumerate(boxes):
            if used[key][i]:
                continue
            v = iou(box, g)
            if v > best:
                best, best_i = v, i
        if best_i >= 0 and best >= iou_thr:
            tp[n] = 1.0
            used[key][best_i] = True
    cum_tp = np.cumsum(tp)
    recall = cum_tp / total_gt
    precision = cum_tp / np.arange(1, len(flat) + 1)
    curve = list(zip(recall.tolist(), precision.tolist()))
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        mask = recall >= r
        ap += precision[mask].max() if mask.any() else 0.0
    return ap / 101.0, curve


@dataclass
class MotSummary:
    mota: float
    motp: float
    mostly_tracked: float
    mostly_lost: float
    id_switches: int
    fragmentations: int
    false_positives: int
    false_negatives: int
    matches: int = 0
    total_gt: int = 0

    def as_dict(self) -> dict:
        return {
            "MOTA": self.mota, "MOTP": self.motp,
            "MT": self.mostly_tracked, "ML": self.mostly_lost,
            "IDS": self.id_switches, "FM": self.fragmentations,
            "FP": self.false_positives, "FN": self.false_negatives,
        }


def clear_mot(pred: dict, gt: dict, iou_thr: float = 0.5) -> MotSummary:
    """CLEAR-MOT over one sequence.

    pred/gt: frame -> [(track_id, BoundingBox)]. Matches from the previous
    frame persist while above the IoU threshold; the remainder is matched
    greedily by IoU. MOTA = 1 - (FN+FP+IDS)/total_gt; MOTP is the mean IoU of
    matches; MT/ML are coverage >= 80% / <= 20% fractions of gt trajectories.
    """
    frames = sorted(set(pred) | set(gt))
    fp = fn = ids = 0
    iou_sum, match_count, total_gt = 0.0, 0, 0
    prev_pairs: dict = {}        # gt_id -> pred_id matched in previous frame
    last_pred_of: dict = {}      # gt_id -> last matched pred_id ever
    matched_history: dict = {}   # gt_id -> list of (frame, matched?)

    for f in frames:
        gt_items = list(gt.get(f, []))
        pr_items = list(pred.get(f, []))
        total_gt += len(gt_items)
        gt_by_id = dict(gt_items)
        pr_by_id = dict(pr_items)
        pairs: dict = {}
        # persistence: keep previous pairings still above the threshold
        for gid, pid in prev_pairs.items():
            if gid in gt_by_id and pid in pr_by_id:
                v = iou(gt_by_id[gid], pr_by_id[pid])
                if v >= iou_thr:
                    pairs[gid] = (pid, v)
        free_gt = [g for g in gt_by_id if g not in pairs]
        used_pred = {pid for pid, _ in pairs.values()}
        cands = []
        for gid in free_gt:
            for pid, pbox in pr_items:
                if pid in used_pred:
                    continue
                v = iou(gt_by_id[gid], pbox)
                if v >= iou_thr:
                    cands.append((v, gid, pid))
        cands.sort(key=lambda t: (-t[0], t[1], t[2]))
        taken_gt: set = set()
        for v, gid, pid in cands:
            if gid in taken_gt or pid in used_pred:
                continue
            pairs[gid] = (pid, v)
            taken_gt.add(gid)
            used_pred.add(pid)

        for gid in gt_by_id:
            hist = matched_history.setdefault(gid, [])
            if gid in pairs:
                pid, v = pairs[gid]
                iou_sum += v
                match_count += 1
                if gid in last_pred_of and last_pred_of[gid] != pid:
                    ids += 1
                last_pred_of[gid] = pid
                hist.append(True)
            else:
                fn += 1
                hist.append(False)
        fp += len(pr_by_id) - len(pairs)
        prev_pairs = {gid: pid for gid, (pid, _) in pairs.items()}

    fm = 0
    mt = ml = 0
    n_traj = len(matched_history)
    for hist in matched_history.values():
        runs = 0
        prev = False
        for m in hist:
            if m and not prev:
                runs += 1
            prev = m
        fm += max(runs - 1, 0)
        cov = sum(hist) / len(hist)
        mt += cov >= 0.8
        ml += cov <= 0.2
    mota = 1.0 - (fn + fp + ids) / total_gt if total_gt else 1.0
    motp = iou_sum / match_count if match_count else 0.0
    return MotSummary(
        mota=mota, motp=motp,
        mostly_tracked=mt / n_traj if n_traj else 0.0,
        mostly_lost=ml / n_traj if n_traj else 1.0,
        id_switches=ids, fragmentations=fm,
        false_positives=fp, false_negatives=fn,
        matches=match_count, total_gt=total_gt)


# -- record-list adapters --------------------------------------------------

def records_to_tracksets(records) -> dict:
    """Group (video, frame, id, box, conf, status) records per video.

    Returns video -> frame -> [(track_id, BoundingBox)]; candidate records
    are excluded (only confirmed output counts as a reported trajectory).
    """
    out: dict = {}
    for video, frame, tid, box, conf, status in records:
        if status == "candidate":
            continue
        out.setdefault(video, {}).setdefault(frame, []).append((tid, box))
    return out


def records_to_detections(records) -> dict:
    """(video, frame) -> [(confidence, BoundingBox)] across all videos."""
    out: dict = {}
    for video, frame, tid, box, conf, status in records:
        if status == "candidate":
            continue
        out.setdefault((video, frame), []).append((conf, box))
    return out


def clear_mot_records(pred_records, gt_records, iou_thr: float = 0.5) -> MotSummary:
    """CLEAR-MOT aggregated over all videos present in the record lists."""
    pred = records_to_tracksets(pred_records)
    gt = records_to_tracksets(gt_records)
    parts = []
    for video in sorted(gt):
        parts.append(clear_mot(pred.get(video, {}), gt[video], iou_thr))
    if not parts:
        return clear_mot({}, {}, iou_thr)
    fn = sum(p.false_negatives for p in parts)
    fp = sum(p.false_positives for p in parts)
    ids = sum(p.id_switches for p in parts)
    fm = sum(p.fragmentations for p in parts)
    matches = sum(p.matches for p in parts)
    total_gt = sum(p.total_gt for p in parts)
    iou_sum = sum(p.motp * p.matches for p in parts)
    n_traj_mt = sum(p.mostly_tracked for p in parts) / len(parts)
    n_traj_ml = sum(p.mostly_lost for p in parts) / len(parts)
    return MotSummary(
        mota=1.0 - (fn + fp + ids) / total_gt if total_gt else 1.0,
        motp=iou_sum / matches if matches else 0.0,
        mostly_tracked=n_traj_mt, mostly_lost=n_traj_ml,
        id_switches=ids, fragmentations=fm,
        false_positives=fp, false_negatives=fn,
        matches=matches, total_gt=total_gt)
