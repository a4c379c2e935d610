"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime or data error, 3 numerical
failure (non-finite loss, failed gradient check).
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, heatmap, metrics, model, perceptron
from ._accel import BACKEND
from .errors import ConXNetError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("conxnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_synth(args):
    blobs = data.synth_generate(args.n_per_class, args.size, args.seed, args.out)
    print(f"wrote {args.n_per_class} COVID and {args.n_per_class} Normal images "
          f"({args.size}x{args.size}) to {args.out}; {len(blobs)} blobs in {data.BLOB_INDEX}")
    return EXIT_OK


def _prepare_split(root, size, per_class, ratio, seed, workers):
    pool = data.load_dataset(root, (size, size), workers=workers)
    counts = {lbl: sum(im.label == lbl for im in pool) for lbl in data.LABEL_NAMES}
    if per_class is None:
        per_class = min(counts.values())
    pool = data.balance(pool, per_class, seed)
    return data.split(pool, ratio, seed), per_class


def _report(m, x, y, epochs=None):
    rep = metrics.compute_metrics(metrics.confusion(model.predict_proba(m, x), y))
    print(rep.table(epochs))
    print(rep.to_record())
    return rep


def cmd_train(args):
    cfg = model.ModelConfig(
        input_size=(args.input_size, args.input_size),
        block_filters=args.filters,
        dense_hidden=args.hidden,
        seed=args.seed,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
    )
    sp, per_class = _prepare_split(args.data, args.input_size, args.per_class, args.ratio, args.seed, args.workers)
    log.info("backend=%s train=%d test=%d per_class=%d", BACKEND, len(sp.train), len(sp.test), per_class)
    if args.manifest:
        data.write_manifest(sp, args.manifest)
    net = model.build(cfg)
    model.train(net, sp, cfg, log_path=args.log)
    extra = {"ratio": args.ratio, "per_class": per_class, "split_seed": args.seed}
    model.save(net, args.out, extra=extra)
    x_te, y_te = data.to_arrays(sp.test)
    _report(net, x_te, y_te, epochs=cfg.epochs)
    return EXIT_OK


def cmd_eval(args):
    net = model.load(args.weights)
    size = net.config.input_size[0]
    if args.input_size is not None and args.input_size != size:
        raise ConXNetError(f"checkpoint expects {size}x{size} input, --input-size was {args.input_size}")
    meta = net.meta
    if {"ratio", "per_class", "split_seed"} <= set(meta):
        sp, _ = _prepare_split(args.data, size, meta["per_class"], meta["ratio"], meta["split_seed"], args.workers)
        images = sp.test
    else:
        images = data.load_dataset(args.data, (size, size), workers=args.workers)
    x, y = data.to_arrays(images)
    _report(net, x, y, epochs=net.epoch)
    return EXIT_OK


def cmd_predict(args):
    net = model.load(args.weights)
    x = data.load_image(args.image, net.config.input_size)[None]
    p = float(model.predict_proba(net, x)[0])
    label = data.COVID if p >= metrics.THRESHOLD else data.NORMAL
    print(f"probability_covid={p:.9g}")
    print(f"class={data.LABEL_NAMES[label]}")
    return EXIT_OK


def cmd_heatmap(args):
    net = model.load(args.weights)
    x = data.load_image(args.image, net.config.input_size)
    amap = heatmap.grad_cam(net, x[None], args.target)
    heatmap.write_overlay(x[0], amap, args.out, alpha=args.alpha)
    if args.csv:
        heatmap.write_map_csv(amap, args.csv)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .checks import TOLERANCE, run_suite

    ok = True
    for name, rep in run_suite(size=args.size, seed=args.seed, max_samples=args.max_samples):
        passed = rep.passed(TOLERANCE)
        ok &= passed
        print(f"{name:<22} max_rel_err={rep.max_error:.3e} probes={sum(rep.checked.values())} "
              f"skipped={rep.skipped} {'PASS' if passed else 'FAIL'}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_perceptron(args):
    p, rep = perceptron.train_gate(args.gate, lr=args.lr, theta=args.theta, max_epochs=args.max_epochs)
    if rep.converged:
        print(f"{args.gate}: converged after {rep.epochs} epochs")
    else:
        print(f"{args.gate}: did not converge in {rep.epochs} epochs (best accuracy {rep.best_accuracy:.2f})")
    print(f"weights={np.round(p.weights, 6).tolist()} theta={p.theta}")
    print("truth table: " + ",".join(str(v) for v in p.truth_table()))
    return EXIT_OK


def build_parser():
    ap = _Parser(prog="conxnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic blob-vs-noise corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-per-class", type=int, default=300)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train ConXNet on a COVID/Normal directory")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--filters", type=_int_list, default=(16, 32, 64, 128))
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--ratio", type=float, default=0.7)
    p.add_argument("--per-class", type=int, default=None, help="images kept per class (default: smallest class)")
    p.add_argument("--out", type=Path, default=Path("conxnet.ckpt"))
    p.add_argument("--log", type=Path, default=Path("train_log.csv"))
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report metrics of a checkpoint on its test split")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("heatmap", help="write a Grad-CAM overlay for one image")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--class", dest="target", choices=("covid", "normal"), default="covid")
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--csv", type=Path, default=None, help="also dump the raw map as CSV")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and a small model")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-samples", type=int, default=200)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("perceptron", help="train a threshold unit on a logic gate")
    p.add_argument("--gate", required=True, choices=sorted(perceptron.GATES))
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=1000)
    p.set_defaults(func=cmd_perceptron)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConXNetError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
