"""Command-line interface: train, track, eval, gradcheck, selftest, synth."""

import argparse
import json
import os
import sys
import time

import cv2
import numpy as np

from . import checks, evalkit, tracking, training


def _cmd_train(args):
    if args.config:
        with open(args.config) as fh:
            setup = training.parse_training_config(fh.read())
    else:
        setup = training.TrainSetup()

    if args.data == "synthetic":
        sequences = training.make_synthetic_dataset(
            count=args.synthetic_sequences, seed=setup.optimizer.seed
        )
    else:
        sequences = []
        for entry in sorted(os.listdir(args.data)):
            seq_dir = os.path.join(args.data, entry)
            if not os.path.isdir(seq_dir):
                continue
            seq = evalkit.load_sequence(seq_dir)
            if seq.boxes is None:
                raise ValueError(f"{seq_dir}: training sequences need ground truth")
            frames = [_read_frame(p) for p in seq.frame_paths]
            sequences.append(training.SyntheticSequence(frames, seq.boxes))
        if not sequences:
            raise ValueError(f"no sequence directories under {args.data}")

    def report(epoch, loss):
        print(f"epoch {epoch + 1}/{setup.optimizer.epochs}: mean loss {loss:.6f}")

    model, losses = training.train(sequences, setup, progress=report)
    evalkit.save_model(model, args.out)
    print(f"saved {setup.architecture} model to {args.out}")
    return 0


def _read_frame(path):
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise IOError(f"cannot read image {path}")
    return img[:, :, ::-1].astype(np.float64)  # BGR -> RGB


def _cmd_track(args):
    model = evalkit.load_model(args.model)
    seq = evalkit.load_sequence(args.sequence)
    if seq.boxes is None:
        raise ValueError(f"{args.sequence}: tracking needs a first-frame box")
    params = tracking.HyperParams(input_size=args.input_size)
    state = tracking.tracker_init(_read_frame(seq.frame_paths[0]), seq.boxes[0],
                                  params, model)
    boxes = [seq.boxes[0]]
    t0 = time.perf_counter()
    for path in seq.frame_paths[1:]:
        state, box = tracking.tracker_step(state, _read_frame(path))
        boxes.append(box)
    elapsed = time.perf_counter() - t0
    evalkit.write_boxes(args.out, boxes)
    print(f"tracked {len(boxes)} frames -> {args.out}")
    if args.fps_report and len(boxes) > 1:
        print(f"steady-state speed: {(len(boxes) - 1) / elapsed:.2f} FPS "
              f"(input {params.input_size}, {model.architecture}, "
              f"S={params.scale_levels})")
    return 0


def _cmd_eval(args):
    seq = evalkit.load_sequence(args.sequence)
    if seq.boxes is None:
        raise ValueError(f"{args.sequence}: no ground truth to evaluate against")
    traj = evalkit.read_boxes(args.traj)
    result = evalkit.evaluate(traj, seq.boxes)
    with open(args.out, "w") as fh:
        fh.write(result.to_json() + "\n")
    print(json.dumps({
        "mean_op_at_0.5": result.mean_op,
        "mean_dp_at_20px": result.mean_dp,
        "mean_cle_px": result.mean_cle,
        "success_auc": result.success_auc,
    }, indent=2))
    return 0


def _run_rows(rows):
    for line in checks.format_rows(rows):
        print(line)
    worst = max(val / bound for _, val, bound, _ in rows)
    print(f"worst ratio to bound: {worst:.3e}")
    return 0 if all(ok for *_, ok in rows) else 1


def _cmd_gradcheck(args):
    return _run_rows(checks.gradcheck_suite(seed=args.seed))


def _cmd_selftest(args):
    return _run_rows(checks.selftest_suite(seed=args.seed))


def _cmd_synth(args):
    sequences = training.make_synthetic_dataset(count=args.count, seed=args.seed)
    for i, seq in enumerate(sequences):
        seq_dir = os.path.join(args.out, f"seq{i:03d}")
        os.makedirs(seq_dir, exist_ok=True)
        for j, frame in enumerate(seq.frames):
            bgr = frame[:, :, ::-1].astype(np.uint8)
            cv2.imwrite(os.path.join(seq_dir, f"{j:04d}.png"), bgr)
        evalkit.write_boxes(os.path.join(seq_dir, "groundtruth_rect.txt"), seq.boxes)
    print(f"wrote {len(sequences)} synthetic sequences under {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dcftrack",
        description="Correlation-filter tracking with learned convolutional features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="offline training of the feature extractor")
    p.add_argument("--data", required=True,
                   help="directory of sequence subdirectories, or 'synthetic'")
    p.add_argument("--config", help="flat key=value training config file")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--synthetic-sequences", type=int, default=40)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("track", help="run the tracker over a sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--sequence", required=True)
    p.add_argument("--out", required=True, help="output trajectory file")
    p.add_argument("--input-size", type=int, default=125)
    p.add_argument("--fps-report", action="store_true")
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("eval", help="score a trajectory against ground truth")
    p.add_argument("--traj", required=True)
    p.add_argument("--sequence", required=True)
    p.add_argument("--out", required=True, help="output metrics JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("selftest", help="oracle-equivalence suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_selftest)

    p = sub.add_parser("synth", help="write a synthetic dataset to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code or 0
    try:
        return args.func(args)
    except Exception as exc:  # one-line cause, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
