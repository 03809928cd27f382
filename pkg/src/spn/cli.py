"""Command-line interface: synth, train, eval, propose, gradcheck, bench.

Exit status: 0 success, 2 usage error, 3 data/model error, 4 failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image
from threadpoolctl import threadpool_limits

from spn.checkpoint import read_checkpoint, save_checkpoint
from spn.errors import SPNError
from spn.evaluate import ALL_METRICS, evaluate, report_lines
from spn.heatmap import emit_heatmap
from spn.network import Network, reference_spec, spn_forward, tiny_spec
from spn.optim import OptimizerConfig
from spn.sp_core import SpConfig, build_transfer_matrix, random_walk
from spn.synthdata import SynthConfig, generate_dataset, load_dataset, save_dataset
from spn.train import train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 2, 3, 4


def _split_dir(path: str, split: str) -> Path:
    p = Path(path)
    return p / split if (p / split / "annotations.jsonl").is_file() else p


def cmd_synth(args) -> int:
    cfg = SynthConfig(image_size=args.size, class_count=args.classes, train_count=args.train,
                      test_count=args.test, clutter_level=args.clutter,
                      co_occur_prob=args.co_occur, seed=args.seed, multi_label=args.multi_label)
    train_ds, test_ds = generate_dataset(cfg)
    out = Path(args.out)
    save_dataset(train_ds, out / "train")
    save_dataset(test_ds, out / "test")
    print(json.dumps({"train": len(train_ds), "test": len(test_ds), "out": str(out)}))
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(_split_dir(args.data, "train"))
    spec = reference_spec(len(ds.class_names), use_sp=not args.no_sp, loss_mode=args.loss)
    if ds.samples[0].pixels.shape[:2] != (spec.input_size, spec.input_size):
        spec.input_size = ds.samples[0].pixels.shape[0]
    opt = OptimizerConfig(learning_rate=args.lr, momentum=args.momentum,
                          weight_decay=args.weight_decay, batch_size=args.batch,
                          epochs=args.epochs, seed=args.seed)
    net = Network.init(spec, seed=args.seed)

    def on_epoch(stats):
        print(json.dumps({"epoch": stats.epoch, "loss": round(stats.loss, 6),
                          "train_accuracy": round(stats.accuracy, 6),
                          "mean_walk_iters": round(stats.mean_walk_iters, 3)}), flush=True)

    result = train(net, ds.images(), ds.targets(args.loss), opt, on_epoch=on_epoch)
    log = [vars(s) for s in result.history]
    save_checkpoint(result.net, args.out, result.velocity, log)
    return EXIT_OK


def cmd_eval(args) -> int:
    net, _, _ = read_checkpoint(args.model)
    ds = load_dataset(_split_dir(args.data, "test"))
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        print(f"unknown metrics: {sorted(unknown)}", file=sys.stderr)
        return EXIT_USAGE
    report = evaluate(net, ds, metrics, tolerance_px=args.tolerance_px, iou_threshold=args.iou)
    for line in report_lines(report, ds.class_names):
        print(line)
    return EXIT_OK


def cmd_propose(args) -> int:
    net, _, _ = read_checkpoint(args.model)
    with Image.open(args.image) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    logits, cache = spn_forward(net, pixels.transpose(2, 0, 1))
    proposal = cache.proposals[0]
    emit_heatmap(proposal.data, args.out_png, size=pixels.shape[:2], csv_path=args.out_csv)
    print(json.dumps({"predicted_class": int(np.argmax(logits)), "walk_iters": proposal.iterations,
                      "residual": proposal.residual}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from spn.oracles import check_gradients

    rng = np.random.default_rng(args.seed)
    spec = tiny_spec(3, relu=True)
    net = Network.init(spec, seed=args.seed)
    image = rng.standard_normal((1, spec.input_size, spec.input_size))
    report = check_gradients(net, image, int(rng.integers(spec.class_count)), args.tolerance)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    U = rng.standard_normal((args.k, args.n, args.n))
    cfg = SpConfig(max_iters=args.walk_iters, convergence_tol=np.finfo(float).tiny)
    times = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        random_walk(build_transfer_matrix(U, cfg), cfg)
        times.append((time.perf_counter() - t0) * 1e3)
    med = float(np.median(times))
    print(json.dumps({"k": args.k, "n": args.n, "walk_iters": args.walk_iters,
                      "median_ms": round(med, 3), "min_ms": round(min(times), 3)}))
    if args.budget_ms is not None and med >= args.budget_ms:
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--train", type=int, default=600)
    s.add_argument("--test", type=int, default=150)
    s.add_argument("--clutter", type=float, default=0.5)
    s.add_argument("--co-occur", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--multi-label", action="store_true")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the reference network")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=0.0005)
    t.add_argument("--batch", type=int, default=2)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-sp", action="store_true", help="force a uniform proposal map")
    t.add_argument("--loss", choices=("softmax", "sigmoid"), default="softmax")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--metrics", default=",".join(ALL_METRICS))
    e.add_argument("--tolerance-px", type=int, default=3)
    e.add_argument("--iou", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("propose", help="write the proposal map of one image")
    pr.add_argument("--model", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out-png", required=True)
    pr.add_argument("--out-csv")
    pr.set_defaults(func=cmd_propose)

    g = sub.add_parser("gradcheck", help="finite-difference check of backprop")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-6)
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="time transfer matrix + walk")
    b.add_argument("--k", type=int, default=512)
    b.add_argument("--n", type=int, default=14)
    b.add_argument("--walk-iters", type=int, default=10)
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--budget-ms", type=float)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=1):
            return args.func(args)
    except SPNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
