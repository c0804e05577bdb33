"""Command-line entry point: ``glfnet <command> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or
missing input paths).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import os
import sys

import numpy as np

from . import data as data_mod
from .blocks import parse_wiring
from .errors import GLFNetError
from .flops import count_flops
from .gradcheck import SUITES, run_suite
from .io import (
    atomic_write,
    load_checkpoint,
    parse_kv,
    read_array,
    save_checkpoint,
    write_tensor,
)
from .network import WIRINGS, ModelConfig, _ints, _pair, build_model, predict_logits
from .training import TrainConfig, evaluate, fit, model_predictor

logger = logging.getLogger("glfnet")


class UsageError(Exception):
    pass


def _require(path, what):
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")


def _configs_for(config_path, header, overrides=None):
    """Model/train configs from a ``key = value`` file, completed by the dataset header."""
    mapping = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            mapping = parse_kv(fh.read())
    mapping.update(overrides or {})
    derived = {
        "in_channels": header["channels"],
        "num_classes": header["num_classes"],
        "input_size": (header["height"], header["width"]),
    }
    for key, value in derived.items():
        if key in mapping:
            found = _pair(_ints(mapping[key])) if key == "input_size" else int(mapping[key])
            if found != value:
                raise GLFNetError(f"config {key} = {mapping[key]} disagrees with dataset ({value})")
    mapping["in_channels"] = str(derived["in_channels"])
    mapping["num_classes"] = str(derived["num_classes"])
    mapping["input_size"] = "{},{}".format(*derived["input_size"])
    return ModelConfig.from_mapping(mapping), TrainConfig.from_mapping(mapping)


def _metrics_paths(ckpt):
    base = os.fspath(ckpt)
    return base + ".log", base + ".csv"


def metrics_csv(history, num_classes):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss"] + [f"dice_class{k}" for k in range(1, num_classes)] + ["mean_dice"])
    for rec in history:
        writer.writerow(
            [rec.epoch, f"{rec.loss:.10f}"]
            + [f"{d:.10f}" for d in rec.report.per_class_dice]
            + [f"{rec.report.mean_dice:.10f}"]
        )
    return buf.getvalue()


def _log_line(rec):
    per = " ".join(f"{d:.4f}" for d in rec.report.per_class_dice)
    return f"epoch {rec.epoch} loss {rec.loss:.6f} dice [{per}] mean {rec.report.mean_dice:.4f}"


def _train(samples, cfg, tc, val_count, on_line=None):
    train_set, val_set = data_mod.split(samples, val_count)
    params = build_model(cfg, seed=tc.seed)

    def on_epoch(rec):
        line = _log_line(rec)
        logger.info(line)
        if on_line is not None:
            on_line(line)

    return fit(params, cfg, train_set, tc, val_samples=val_set or None, on_epoch=on_epoch)


# -- subcommands ----------------------------------------------------------------

def cmd_gen(args):
    data_mod.gen_synthetic(args.out, args.n, args.size, args.classes, args.seed, args.channels)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_train(args):
    _require(args.data, "dataset directory")
    if args.config:
        _require(args.config, "config file")
    header, samples = data_mod.load_dataset(args.data)
    overrides = {"epochs": str(args.epochs)} if args.epochs is not None else {}
    cfg, tc = _configs_for(args.config, header, overrides)
    log_path, csv_path = _metrics_paths(args.out)
    lines = []
    params, history = _train(samples, cfg, tc, args.val, lines.append)
    save_checkpoint(args.out, cfg, params)
    atomic_write(log_path, "".join(line + "\n" for line in lines).encode("utf-8"))
    atomic_write(csv_path, metrics_csv(history, cfg.num_classes).encode("utf-8"))
    final = history[-1].report.mean_dice if history else float("nan")
    print(f"checkpoint {args.out}; metrics {csv_path}; final mean dice {final:.4f}")
    return 0


def cmd_eval(args):
    _require(args.data, "dataset directory")
    _require(args.ckpt, "checkpoint")
    cfg, params = load_checkpoint(args.ckpt)
    header, samples = data_mod.load_dataset(args.data)
    if header["num_classes"] != cfg.num_classes:
        raise GLFNetError(f"dataset has {header['num_classes']} classes, model {cfg.num_classes}")
    if args.val:
        samples = data_mod.split(samples, args.val)[1]
    report = evaluate(model_predictor(params, cfg), samples, cfg.num_classes)
    table = report.format_table()
    out = args.out or os.fspath(args.ckpt) + ".eval.txt"
    atomic_write(out, (table + "\n").encode("utf-8"))
    print(table)
    return 0


def to_pgm(mask, num_classes):
    """Plain (P2) greyscale rendering of a label mask."""
    mask = np.asarray(mask)
    levels = (mask * 255 // max(num_classes - 1, 1)).astype(int)
    h, w = mask.shape
    rows = "\n".join(" ".join(str(v) for v in row) for row in levels)
    return f"P2\n{w} {h}\n255\n{rows}\n"


def cmd_predict(args):
    _require(args.image, "image file")
    _require(args.ckpt, "checkpoint")
    cfg, params = load_checkpoint(args.ckpt)
    image = read_array(args.image).astype(np.float64)
    if image.ndim == 2:
        image = image[None]
    logits = predict_logits(params, cfg, image[None])
    mask = logits[0].argmax(axis=0).astype(np.uint8)
    write_tensor(args.out, mask, "u8")
    if args.pgm:
        atomic_write(args.pgm, to_pgm(mask, cfg.num_classes).encode("ascii"))
    counts = np.bincount(mask.ravel(), minlength=cfg.num_classes)
    print(f"mask {mask.shape} written to {args.out}; class counts {counts.tolist()}")
    return 0


def cmd_gradcheck(args):
    modules = [args.module] if args.module else None
    results = run_suite(modules, seed=args.seed)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{r.module:<9} {r.name:<26} {r.error:.3e}  (tol {r.tolerance:.0e})  {status}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_flops(args):
    if args.config:
        _require(args.config, "config file")
        with open(args.config, encoding="utf-8") as fh:
            cfg = ModelConfig.from_mapping(parse_kv(fh.read()))
    else:
        cfg = ModelConfig()
    report = count_flops(cfg, batch=args.batch)
    print(f"input {cfg.input_size[0]}x{cfg.input_size[1]}, widths {list(cfg.stage_widths)}, batch {args.batch}")
    print(report.format_table())
    return 0


def ablation_table(rows):
    """``rows``: (wiring, per_class, mean, params, gflops); ranked by mean dice."""
    ranked = sorted(range(len(rows)), key=lambda i: -rows[i][2])
    rank = {i: r + 1 for r, i in enumerate(ranked)}
    n_fg = len(rows[0][1]) if rows else 0
    head = ["wiring", "GFB", "LFB", "mean_dice"] + [f"class{k + 1}" for k in range(n_fg)] + ["params", "gflops", "rank"]
    lines = [" | ".join(head)]
    for i, (wiring, per, mean, n_params, gflops) in enumerate(rows):
        branches = wiring.split("+")
        cells = [
            wiring,
            str(branches.count("gfb")),
            str(branches.count("lfb")),
            f"{100 * mean:.2f}",
            *[f"{100 * d:.2f}" for d in per],
            str(n_params),
            f"{gflops:.4f}",
            str(rank[i]),
        ]
        lines.append(" | ".join(cells))
    return "\n".join(lines)


def cmd_ablate(args):
    _require(args.data, "dataset directory")
    if args.config:
        _require(args.config, "config file")
    header, samples = data_mod.load_dataset(args.data)
    rows = []
    for wiring in args.wiring:
        overrides = {"wiring": wiring}
        if args.epochs is not None:
            overrides["epochs"] = str(args.epochs)
        cfg, tc = _configs_for(args.config, header, overrides)
        logger.info("ablation variant %s", wiring)
        params, history = _train(samples, cfg, tc, args.val)
        report = history[-1].report if history else evaluate(
            model_predictor(params, cfg), data_mod.split(samples, args.val)[1] or samples, cfg.num_classes
        )
        rows.append((wiring, report.per_class_dice, report.mean_dice, params.parameter_count(), count_flops(cfg).gflops))
        print(f"{wiring}: mean dice {report.mean_dice:.4f}", flush=True)
    table = ablation_table(rows)
    if args.out:
        atomic_write(args.out, (table + "\n").encode("utf-8"))
    print(table)
    return 0


# -- parser -----------------------------------------------------------------------

def _wiring(value):
    try:
        return "+".join(parse_wiring(value))
    except GLFNetError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    p = argparse.ArgumentParser(prog="glfnet", description="Global/local frequency-filter segmentation network.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic dataset directory")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=64)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--channels", type=int, default=1)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model and write a checkpoint plus metrics")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key = value config file (defaults apply when omitted)")
    t.add_argument("--out", required=True, help="checkpoint path; metrics go to OUT.log and OUT.csv")
    t.add_argument("--val", type=int, default=0, help="hold out the last VAL samples for scoring")
    t.add_argument("--epochs", type=int, help="override the configured epoch count")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--val", type=int, default=0, help="score only the last VAL samples")
    e.add_argument("--out", help="table file (default CKPT.eval.txt)")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="segment one image tensor file")
    pr.add_argument("--image", required=True)
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--out", required=True, help="u8 mask tensor file")
    pr.add_argument("--pgm", help="optional plain PGM visualisation")
    pr.set_defaults(func=cmd_predict)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    gc.add_argument("--module", choices=sorted(SUITES))
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("flops", help="per-layer FLOP table")
    f.add_argument("--config")
    f.add_argument("--batch", type=int, default=1)
    f.set_defaults(func=cmd_flops)

    a = sub.add_parser("ablate", help="train each filter wiring and compare")
    a.add_argument("--data", required=True)
    a.add_argument("--wiring", nargs="+", type=_wiring, default=list(WIRINGS))
    a.add_argument("--config")
    a.add_argument("--epochs", type=int)
    a.add_argument("--val", type=int, default=16)
    a.add_argument("--out", help="also write the comparison table here")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (GLFNetError, OSError, ValueError) as exc:
        print(f"glfnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
