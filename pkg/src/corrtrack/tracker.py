"""Online joint detection-and-tracking state machine.

Each frame: detect peaks, re-track every live track and candidate against the
new key map with the multiplicative confidence update min(2*Y*Y_t, 1.5),
delete low-confidence entries, promote candidates, and turn unsuppressed
detections into new tracks or candidates. No NMS, no data association.

The network is duck-typed: anything with `detect(frame, peak_threshold)` and
`track(q, v, k)` works, which keeps the state machine testable with scripted
outputs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .boxes import BoundingBox, iou

TRACK_FILE_MAGIC = "corrtrack-tracks v1"


def extract_peaks(heatmap: np.ndarray, threshold: float):
    """Cells equal to their 3x3 neighborhood max and >= threshold.

    Returns (row, col, class, score) tuples sorted by descending score. On a
    tied plateau only the lexicographically first cell of each 3x3
    neighborhood is kept.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if heatmap.ndim == 2:
        heatmap = heatmap[:, :, None]
    fh, fw, n = heatmap.shape
    padded = np.pad(heatmap, ((1, 1), (1, 1), (0, 0)), constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(0, 1))
    local_max = win.max(axis=(-2, -1))
    is_peak = (heatmap >= local_max) & (heatmap >= threshold)
    peaks = []
    kept: dict[int, list[tuple[int, int, float]]] = {k: [] for k in range(n)}
    for row, col, cls in zip(*np.nonzero(is_peak)):
        score = heatmap[row, col, cls]
        if any(abs(r - row) <= 1 and abs(c - col) <= 1 and s == score
               for r, c, s in kept[cls]):
            continue  # tied plateau: earlier (row, col) already kept
        kept[cls].append((row, col, score))
        peaks.append((int(row), int(col), int(cls), float(score)))
    peaks.sort(key=lambda p: (-p[3], p[0], p[1], p[2]))
    return peaks


@dataclass
class PipelineConfig:
    p1: float = 0.5            # new-track / candidate-promotion threshold
    p2: float = 0.3            # deletion / detection-ignore threshold
    p3: float = 0.5            # IoU suppression threshold
    peak_threshold: float | None = None  # defaults to p2
    max_tracks: int = 256
    candidate_rule: str = "prose"  # "prose": delete < p2, promote >= p1;
                                   # "listing": delete < p1, promote survivors

    def __post_init__(self):
        if not (0.0 < self.p2 < self.p1 < 1.0):
            raise ValueError(f"need 0 < p2 < p1 < 1, got p1={self.p1} p2={self.p2}")
        if not 0.0 < self.p3 < 1.0:
            raise ValueError(f"p3 must be in (0,1), got {self.p3}")
        if self.candidate_rule not in ("prose", "listing"):
            raise ValueError(f"unknown candidate_rule {self.candidate_rule!r}")

    @property
    def effective_peak_threshold(self) -> float:
        return self.p2 if self.peak_threshold is None else self.peak_threshold


@dataclass
class TrackState:
    track_id: int
    confidence: float
    query_q: np.ndarray
    query_v: np.ndarray
    status: str                       # "track" or "candidate"
    cls: int = 0
    boxes: list = field(default_factory=list)  # [(frame_index, BoundingBox)]

    def last_box(self) -> BoundingBox:
        return self.boxes[-1][1]


@dataclass
class FrameResult:
    frame_index: int
    entries: list = field(default_factory=list)  # (id, BoundingBox, conf, status)


class Tracker:
    """Sequential per-video tracking state; one `step` call per frame."""

    def __init__(self, net, config: PipelineConfig | None = None,
                 feature_stride: int = 8):
        self.net = net
        self.config = config or PipelineConfig()
        self.stride = feature_stride
        self.tracks: list[TrackState] = []
        self.candidates: list[TrackState] = []
        self.finished: list[TrackState] = []
        self.next_id = 1
        self.frame_index = 0

    def _cell_of(self, box_px: BoundingBox, shape) -> tuple[int, int]:
        fh, fw = shape[0], shape[1]
        row = min(max(int(round(box_px.cy / self.stride)), 0), fh - 1)
        col = min(max(int(round(box_px.cx / self.stride)), 0), fw - 1)
        return row, col

    def _update_one(self, state: TrackState, det) -> tuple[bool, BoundingBox]:
        yt, box_arr = self.net.track(state.query_q, state.query_v, det.k)
        state.confidence = min(2.0 * state.confidence * float(yt), 1.5)
        box = BoundingBox.from_array(np.asarray(box_arr))
        return state.confidence, box

    def step(self, frame) -> FrameResult:
        """Advance one frame; on network failure the state is left unchanged."""
        snapshot = copy.deepcopy((self.tracks, self.candidates,
                                  self.finished, self.next_id))
        try:
            return self._step_inner(frame)
        except Exception:
            self.tracks, self.candidates, self.finished, self.next_id = snapshot
            raise

    def _step_inner(self, frame) -> FrameResult:
        cfg = self.config
        fi = self.frame_index
        det = self.net.detect(frame, cfg.effective_peak_threshold)
        result = FrameResult(fi)
        emitted: list[BoundingBox] = []

        # live tracks
        survivors = []
        for tr in self.tracks:
            conf, box = self._update_one(tr, det)
            if conf < cfg.p2:
                self.finished.append(tr)
                continue
            tr.boxes.append((fi, box))
            row, col = self._cell_of(box, det.k.shape)
            tr.query_q = det.k[row, col].copy()
            tr.query_v = det.v[row, col].copy()
            survivors.append(tr)
            emitted.append(box)
            result.entries.append((tr.track_id, box, conf, "track"))
        self.tracks = survivors

        # candidates
        delete_below = cfg.p2 if cfg.candidate_rule == "prose" else cfg.p1
        remaining = []
        for cand in self.candidates:
            conf, box = self._update_one(cand, det)
            if conf < delete_below:
                self.finished.append(cand)
                continue
            cand.boxes.append((fi, box))
            row, col = self._cell_of(box, det.k.shape)
            cand.query_q = det.k[row, col].copy()
            cand.query_v = det.v[row, col].copy()
            emitted.append(box)
            if conf >= cfg.p1:
                cand.status = "track"
                self.tracks.append(cand)
            else:
                remaining.append(cand)
            result.entries.append((cand.track_id, box, conf, cand.status))
        self.candidates = remaining

        # new detections
        for (row, col, cls, score), box_arr in zip(det.peaks, det.boxes_px):
            if score < cfg.p2:
                continue
            box = BoundingBox.from_array(box_arr)
            if any(iou(box, other) > cfg.p3 for other in emitted):
                continue
            if len(self.tracks) + len(self.candidates) >= cfg.max_tracks:
                continue
            state = TrackState(
                track_id=self.next_id, confidence=score,
                query_q=det.q[row, col].copy(), query_v=det.v[row, col].copy(),
                status="track" if score > cfg.p1 else "candidate",
                cls=cls, boxes=[(fi, box)])
            self.next_id += 1
            emitted.append(box)
            if state.status == "track":
                self.tracks.append(state)
            else:
                self.candidates.append(state)
            result.entries.append((state.track_id, box, state.confidence, state.status))

        self.frame_index += 1
        return result

    def trajectories(self) -> list[TrackState]:
        """All tracks and candidates ever created, including deleted ones."""
        out = self.finished + self.tracks + self.candidates
        return sorted(out, key=lambda t: t.track_id)


def track_video(frames, net, config: PipelineConfig | None = None,
                feature_stride: int = 8):
    """Fold the per-frame step over a whole sequence.

    Returns (trajectories, frame_results); deterministic given fixed weights.
    """
    tracker = Tracker(net, config, feature_stride)
    results = [tracker.step(frame) for frame in frames]
    return tracker.trajectories(), results


# -- track record files ----------------------------------------------------

def write_track_records(path, records):
    """records: iterable of (video, frame, track_id, BoundingBox, conf, status)."""
    with open(path, "w") as fh:
        fh.write(TRACK_FILE_MAGIC + "\n")
        fh.write("# video frame track_id cx cy h w confidence status\n")
        for video, frame, tid, box, conf, status in records:
            fh.write(f"{video} {frame} {tid} {box.cx:.4f} {box.cy:.4f} "
                     f"{box.h:.4f} {box.w:.4f} {conf:.4f} {status}\n")


def read_track_records(path):
    records = []
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != TRACK_FILE_MAGIC:
            raise ValueError(f"{path}:1: bad header {first!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 9:
                raise ValueError(f"{path}:{lineno}: expected 9 fields, got {len(parts)}")
            try:
                video = parts[0]
                frame, tid = int(parts[1]), int(parts[2])
                cx, cy, h, w, conf = (float(v) for v in parts[3:8])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            records.append((video, frame, tid, BoundingBox(cx, cy, h, w),
                            conf, parts[8]))
    return records


def records_from_results(video: str, frame_results) -> list:
    out = []
    for fr in frame_results:
        for tid, box, conf, status in fr.entries:
            out.append((video, fr.frame_index, tid, box, conf, status))
    return out
