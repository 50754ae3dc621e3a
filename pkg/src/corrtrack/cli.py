"""Command-line entry points: gen, train, track, eval, render, gradcheck.

Exit codes: 0 success, 1 validation error, 2 numeric failure. `--threads 1`
pins the BLAS thread pools before numpy loads, guaranteeing bitwise
reproducibility of checkpoints, track files, and reports.
"""

from __future__ import annotations

import argparse
import os
import sys


def _pin_threads(argv):
    if "--threads" in argv:
        n = argv[argv.index("--threads") + 1]
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="corrtrack",
        description="Joint detection and tracking on synthetic sequences.")
    p.add_argument("--threads", type=int, default=0,
                   help="BLAS thread count (1 = bitwise-reproducible mode)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config", help="TOML run configuration")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--sequences", type=int, default=8)
    g.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty directory")

    t = sub.add_parser("train", help="train a checkpoint")
    t.add_argument("--config", help="TOML run configuration")
    t.add_argument("--stage", choices=("detect-pretrain", "joint-finetune"),
                   required=True)
    t.add_argument("--data", required=True, help="dataset directory from `gen`")
    t.add_argument("--out", required=True)
    t.add_argument("--init", help="checkpoint to start from "
                                  "(required for joint-finetune)")
    t.add_argument("--resume", help="checkpoint to resume, continuing its "
                                    "step counter")
    t.add_argument("--steps", type=int, help="override step count")
    t.add_argument("--seed", type=int)

    k = sub.add_parser("track", help="run the online tracker over a sequence")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--frames", required=True, help="directory of frame_*.ppm")
    k.add_argument("--out", required=True, help="output track-record file")
    k.add_argument("--config", help="TOML run configuration (pipeline section)")

    e = sub.add_parser("eval", help="evaluate predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--iou", type=float, default=0.5)

    r = sub.add_parser("render", help="burn tracked boxes into frame copies")
    r.add_argument("--frames", required=True)
    r.add_argument("--tracks", required=True)
    r.add_argument("--out", required=True)

    sub.add_parser("gradcheck", help="run the finite-difference suite")
    return p


def _load_run_config(path):
    from .config import RunConfig, load_config
    return load_config(path) if path else RunConfig()


def _frame_paths(frames_dir):
    names = sorted(n for n in os.listdir(frames_dir)
                   if n.startswith("frame_") and n.endswith(".ppm"))
    if not names:
        raise ValueError(f"no frame_*.ppm files in {frames_dir}")
    return [os.path.join(frames_dir, n) for n in names]


def cmd_gen(args) -> int:
    import dataclasses

    from .config import save_config
    from .synth import generate_sequence, write_ppm
    from .tracker import write_track_records

    cfg = _load_run_config(args.config)
    if args.seed is not None:
        cfg.scene = dataclasses.replace(cfg.scene, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    if os.listdir(args.out) and not args.force:
        raise ValueError(f"output directory {args.out} is not empty "
                         "(use --force to overwrite)")
    save_config(os.path.join(args.out, "config.toml"), cfg)
    for s in range(args.sequences):
        scene = dataclasses.replace(cfg.scene, seed=cfg.scene.seed + s)
        frames, gts = generate_sequence(scene)
        name = f"seq_{s:03d}"
        seq_dir = os.path.join(args.out, name)
        os.makedirs(seq_dir, exist_ok=True)
        for t, frame in enumerate(frames):
            write_ppm(os.path.join(seq_dir, f"frame_{t:03d}.ppm"), frame)
        records = [(name, t, o.object_id, o.box, 1.0, "gt")
                   for t, gt in enumerate(gts) for o in gt.objects]
        write_track_records(os.path.join(seq_dir, "gt.txt"), records)
    print(f"wrote {args.sequences} sequences to {args.out}")
    return 0


def _load_dataset(data_dir, scene):
    from .synth import read_ppm
    from .tracker import read_track_records
    from .boxes import BoundingBox
    from .synth import GroundTruthFrame, GroundTruthObject
    from .train import SyntheticDataset
    import numpy as np

    sequences = []
    names = sorted(n for n in os.listdir(data_dir) if n.startswith("seq_"))
    if not names:
        raise ValueError(f"no seq_* directories in {data_dir}")
    for name in names:
        seq_dir = os.path.join(data_dir, name)
        frames = np.stack([read_ppm(p) for p in _frame_paths(seq_dir)])
        gts = [GroundTruthFrame(t) for t in range(len(frames))]
        for video, t, tid, box, conf, status in read_track_records(
                os.path.join(seq_dir, "gt.txt")):
            gts[t].objects.append(GroundTruthObject(tid, 0, box))
        sequences.append((frames, gts))
    return SyntheticDataset.from_sequences(scene, sequences)


def _save_net_checkpoint(path, net, opt, cfg, stage, step):
    from .checkpoint import save_checkpoint

    arrays = net.state_arrays()
    arrays.update(opt.state_arrays())
    meta = dict(net.config.to_meta())
    meta.update(stage=stage, step=str(step), seed=str(cfg.train.seed),
                dtype=cfg.train.dtype)
    save_checkpoint(path, arrays, meta)


def _load_net(checkpoint_path, dtype=None):
    import numpy as np

    from .checkpoint import load_checkpoint
    from .network import CorrelationNetwork, NetworkConfig

    arrays, meta = load_checkpoint(checkpoint_path)
    net_cfg = NetworkConfig.from_meta(meta)
    dt = np.float64 if (dtype or meta.get("dtype", "float32")) == "float64" else np.float32
    net = CorrelationNetwork(net_cfg, dtype=dt)
    net.load_state_arrays(arrays)
    return net, arrays, meta


def cmd_train(args) -> int:
    import numpy as np

    from .config import save_config
    from .network import CorrelationNetwork
    from .train import Adam, train_detection, train_joint

    cfg = _load_run_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    dtype = np.float64 if cfg.train.dtype == "float64" else np.float32
    dataset = _load_dataset(args.data, cfg.scene)
    os.makedirs(args.out, exist_ok=True)

    start_step = 0
    if args.resume:
        net, arrays, meta = _load_net(args.resume, cfg.train.dtype)
        opt = Adam(net.params, lr=cfg.train.learning_rate,
                   grad_clip=cfg.train.gradient_clip)
        opt.load_state_arrays(arrays)
        start_step = int(meta["step"])
    else:
        if args.stage == "joint-finetune":
            if not args.init:
                raise ValueError(
                    "joint-finetune requires --init with a detect-pretrain "
                    "checkpoint")
            net, _, meta = _load_net(args.init, cfg.train.dtype)
            if meta.get("stage") not in ("detect-pretrain", "joint-finetune"):
                raise ValueError(
                    f"--init checkpoint has stage {meta.get('stage')!r}")
        else:
            net = CorrelationNetwork(cfg.network, seed=cfg.train.seed, dtype=dtype)
        opt = Adam(net.params, lr=cfg.train.learning_rate,
                   grad_clip=cfg.train.gradient_clip)

    default_steps = (cfg.train.pretrain_steps if args.stage == "detect-pretrain"
                     else cfg.train.finetune_steps)
    steps = args.steps if args.steps is not None else default_steps

    log_path = os.path.join(args.out, "loss_log.txt")
    with open(log_path, "a" if args.resume else "w") as log_fh:
        def log(step, entry):
            log_fh.write(f"{step} {entry.det_cla:.6f} {entry.det_reg:.6f} "
                         f"{entry.track_cla:.6f} {entry.track_reg:.6f} "
                         f"{entry.total:.6f}\n")

        trainer = (train_detection if args.stage == "detect-pretrain"
                   else train_joint)
        trainer(net, dataset, steps, batch_size=cfg.train.batch_size,
                lr=cfg.train.learning_rate, seed=cfg.train.seed,
                optimizer=opt, start_step=start_step, log=log)

    save_config(os.path.join(args.out, "config.toml"), cfg)
    ckpt = os.path.join(args.out, "checkpoint.ckpt")
    _save_net_checkpoint(ckpt, net, opt, cfg, args.stage, start_step + steps)
    print(f"wrote {ckpt}")
    return 0


def cmd_track(args) -> int:
    from .checkpoint import checkpoint_hash
    from .synth import read_ppm
    from .tracker import Tracker, records_from_results, write_track_records

    cfg = _load_run_config(args.config)
    net, _, _ = _load_net(args.checkpoint)
    paths = _frame_paths(args.frames)
    video = os.path.basename(os.path.normpath(args.frames))
    tracker = Tracker(net, cfg.pipeline)
    results = [tracker.step(read_ppm(p).astype(net.dtype)) for p in paths]
    records = records_from_results(video, results)
    write_track_records(args.out, records)
    with open(args.out, "a") as fh:
        fh.write(f"# checkpoint_sha256 {checkpoint_hash(args.checkpoint)}\n")
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_eval(args) -> int:
    import json

    from .metrics import (clear_mot_records, detection_ap,
                          records_to_detections, records_to_tracksets)
    from .tracker import read_track_records

    preds = read_track_records(args.pred)
    gts = read_track_records(args.gt)
    det_pred = records_to_detections(preds)
    det_gt = {key: [b for _, b in items]
              for key, items in records_to_detections(gts).items()}
    ap, curve = detection_ap(det_pred, det_gt, args.iou)
    mot = clear_mot_records(preds, gts, args.iou)

    os.makedirs(args.out, exist_ok=True)
    report = {"AP": ap, **mot.as_dict(), "iou_threshold": args.iou}
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        for key, value in report.items():
            fh.write(f"{key}={value:.6f}\n" if isinstance(value, float)
                     else f"{key}={value}\n")
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(args.out, "pr_curve.csv"), "w") as fh:
        fh.write("recall,precision\n")
        for rec, prec in curve:
            fh.write(f"{rec:.6f},{prec:.6f}\n")
    print("\n".join(f"{k}={v}" for k, v in report.items()))
    return 0


_PALETTE = [
    (255, 64, 64), (64, 255, 64), (80, 80, 255), (255, 220, 0),
    (0, 220, 255), (255, 0, 255), (255, 140, 0), (140, 255, 140),
    (200, 120, 255), (0, 160, 120),
]


def cmd_render(args) -> int:
    import numpy as np

    from .synth import read_ppm, write_ppm
    from .tracker import read_track_records

    records = read_track_records(args.tracks)
    by_frame: dict = {}
    for video, frame, tid, box, conf, status in records:
        by_frame.setdefault(frame, []).append((tid, box))
    paths = _frame_paths(args.frames)
    os.makedirs(args.out, exist_ok=True)
    for t, path in enumerate(paths):
        img = read_ppm(path)
        h, w = img.shape[:2]
        for tid, box in by_frame.get(t, []):
            color = np.array(_PALETTE[tid % len(_PALETTE)]) / 255.0
            left, top, right, bottom = box.corners
            x0, x1 = int(max(left, 0)), int(min(right, w - 1))
            y0, y1 = int(max(top, 0)), int(min(bottom, h - 1))
            if x1 <= x0 or y1 <= y0:
                continue
            img[y0:y0 + 2, x0:x1] = color
            img[y1 - 1:y1 + 1, x0:x1] = color
            img[y0:y1, x0:x0 + 2] = color
            img[y0:y1, x1 - 1:x1 + 1] = color
        write_ppm(os.path.join(args.out, os.path.basename(path)), img)
    print(f"rendered {len(paths)} frames to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import format_results, run_suite, suite_passed

    results = run_suite()
    print(format_results(results))
    return 0 if suite_passed(results) else 2


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen": cmd_gen, "train": cmd_train, "track": cmd_track,
        "eval": cmd_eval, "render": cmd_render, "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
