"""wavenet-ndt command line: generate, train, eval, reconstruct.

Exit codes: 0 success, 2 usage or validation, 3 IO, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import RunConfig, load_config
from .dataset import (
    NoiseConfig,
    build_mixed_dataset,
    build_noisy_rect_dataset,
    build_sample,
    load_dataset,
    save_dataset,
)
from .errors import Divergence, FormatVersionMismatch, InvalidParameter, WavenetError
from .evaluation import evaluate, export_report
from .geometry import WEAK_SCATTERER_LIMIT, DefectClass, DefectParams
from .nn.model import build_default_model, load_checkpoint, predict, save_checkpoint
from .nn.training import train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "WAVENET_NDT_THREADS"


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _common() -> argparse.ArgumentParser:
    # Defaults are suppressed so the flags work before or after the subcommand.
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", type=Path, help="INI run configuration")
    p.add_argument("--seed", type=_u64, help="master seed (overrides [run] seed)")
    p.add_argument("--out", type=Path, help="output path")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavenet-ndt",
        description="Guided-wave defect reconstruction: WNST inversion plus a CNN post-processor.",
        parents=[_common()],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    g = sub.add_parser("generate", parents=[common], help="synthesise a dataset file")
    g.add_argument("--kind", choices=["mixed", "noisy-rect"], default="mixed")
    g.add_argument("--count", type=int, help="samples (default 1200 mixed, 400 noisy-rect)")
    g.add_argument("--snr-db", type=float, help="injected noise SNR for noisy-rect")

    t = sub.add_parser("train", parents=[common], help="train the post-processing network")
    t.add_argument("--data", type=Path, required=True, help="dataset JSON-lines file")
    t.add_argument("--history", type=Path, help="per-epoch CSV (default: <out>.history.csv)")
    for name, typ in (("learning-rate", float), ("batch-size", int), ("max-epochs", int),
                      ("l2-lambda", float), ("dropout-rate", float), ("patience", int),
                      ("lr-decay", float), ("lr-decay-patience", int)):
        t.add_argument(f"--{name}", type=typ, help="override [train] " + name.replace("-", "_"))
    t.add_argument("--normalization", choices=["rms", "fixed"], help="override [train] normalization")

    e = sub.add_parser("eval", parents=[common], help="score WNST and network reconstructions")
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--model", type=Path, help="checkpoint; omit for WNST-only baseline")
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--format", choices=["csv", "markdown"], default="csv")

    r = sub.add_parser("reconstruct", parents=[common], help="write one profile overlay CSV")
    r.add_argument("--model", type=Path, required=True)
    r.add_argument("--data", type=Path, help="dataset file (with --sample-id)")
    r.add_argument("--sample-id", type=int)
    r.add_argument("--defect", help="ad-hoc defect class: tri, rect or step")
    r.add_argument("--depth-mm", type=float)
    r.add_argument("--width-mm", type=float)
    r.add_argument("--center-mm", type=float)
    r.add_argument("--step-fraction", type=float, default=0.5, help="step: first-level width fraction")
    r.add_argument("--step-depth2-mm", type=float, help="step: second-level depth")
    return parser


def _run_config(args) -> RunConfig:
    return load_config(args.config).with_seed(args.seed)


def cmd_generate(args) -> int:
    cfg = _run_config(args)
    noisy = args.kind == "noisy-rect"
    count = args.count if args.count is not None else (400 if noisy else 1200)
    if count <= 0:
        raise InvalidParameter("--count must be positive")
    out = args.out or Path("dataset.jsonl")
    common = dict(seed=cfg.seed, plate=cfg.plate, spatial=cfg.grid, ranges=cfg.ranges)
    if noisy:
        noise = cfg.noise if args.snr_db is None else NoiseConfig(args.snr_db)
        ds = build_noisy_rect_dataset(count, noise, **common)
    else:
        if args.snr_db is not None:
            raise InvalidParameter("--snr-db only applies to --kind noisy-rect")
        ds = build_mixed_dataset(count, **common)
    save_dataset(ds, out)
    sizes = ds.split_sizes()
    print(f"wrote {len(ds)} samples to {out} (train/val/test {sizes[0]}/{sizes[1]}/{sizes[2]})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    overrides = {
        k: getattr(args, k)
        for k in ("learning_rate", "batch_size", "max_epochs", "l2_lambda", "dropout_rate",
                  "patience", "lr_decay", "lr_decay_patience")
        if getattr(args, k) is not None
    }
    tcfg = replace(cfg.train, **overrides)
    ds = load_dataset(args.data)
    scale = ds.provenance.get("normalization", {}).get("scale", cfg.plate.half_thickness_b)
    x_tr, y_tr, _ = ds.arrays("train")
    x_va, y_va, _ = ds.arrays("val")
    length = x_tr.shape[1] if x_tr.size else cfg.grid.point_count
    model = build_default_model(
        length, tcfg.dropout_rate, tcfg.seed, scale, normalization=args.normalization or cfg.normalization
    )
    t0 = time.perf_counter()
    model, hist = train(model, (x_tr, y_tr), (x_va, y_va), tcfg)
    out = args.out or Path("model.json")
    save_checkpoint(model, out, {**tcfg.to_dict(), "normalization": model.normalization})
    history = args.history or out.with_suffix(".history.csv")
    with open(history, "w", newline="", encoding="utf-8") as fh:
        # wall times stay out of the file so reruns are byte-identical
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse", "learning_rate"])
        for i, row in enumerate(zip(hist.train_mse, hist.val_mse, hist.learning_rate), 1):
            w.writerow([i, *map(repr, row)])
    print(
        f"trained {hist.epochs} epochs in {time.perf_counter() - t0:.1f} s, "
        f"best epoch {hist.best_epoch + 1} val_mse {min(hist.val_mse):.4g}; wrote {out} and {history}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    model = load_checkpoint(args.model)[0] if args.model is not None else None
    report = evaluate(model, ds, args.split)
    out = args.out or Path("report")
    files = export_report(report, out, args.format)
    conv = model is not None
    print(f"{'class':<6} {'count':>5} {'wnst_db':>9}" + (f" {'convnet_db':>10}" if conv else ""))
    rows = list(report.per_class_snr.items()) + [("all", report.overall)]
    for cls, s in rows:
        line = f"{cls:<6} {s['count']:>5} {s['wnst_mean_db']:>9.2f}"
        if conv:
            line += f" {s['convnet_mean_db']:>10.2f}"
        print(line)
    print("wrote " + ", ".join(str(f) for f in files))
    return EXIT_OK


def _adhoc_sample(args, cfg: RunConfig):
    missing = [n for n in ("depth_mm", "width_mm", "center_mm") if getattr(args, n) is None]
    if missing:
        raise InvalidParameter("ad-hoc mode needs " + ", ".join("--" + m.replace("_", "-") for m in missing))
    cls = DefectClass.parse(args.defect)
    step = {}
    if cls is DefectClass.STEP:
        if args.step_depth2_mm is None:
            raise InvalidParameter("--defect step needs --step-depth2-mm")
        step = dict(step_fraction=args.step_fraction, step_depth2=args.step_depth2_mm * 1e-3)
    params = DefectParams(cls, args.center_mm * 1e-3, args.width_mm * 1e-3, args.depth_mm * 1e-3, **step)
    if params.max_depth > WEAK_SCATTERER_LIMIT * cfg.plate.half_thickness_b:
        print(f"warning: depth exceeds {WEAK_SCATTERER_LIMIT} b; outside the weak-scatterer regime "
              "the training data covers", file=sys.stderr)
    return build_sample(params, cfg.plate, cfg.grid), cfg.grid.x


def cmd_reconstruct(args) -> int:
    cfg = _run_config(args)
    model, _ = load_checkpoint(args.model)
    if args.defect is not None:
        if args.data is not None or args.sample_id is not None:
            raise InvalidParameter("use either --defect or --data/--sample-id, not both")
        pair, x = _adhoc_sample(args, cfg)
    else:
        if args.data is None or args.sample_id is None:
            raise InvalidParameter("give --data with --sample-id, or an ad-hoc --defect")
        ds = load_dataset(args.data)
        if not 0 <= args.sample_id < len(ds):
            raise InvalidParameter(f"--sample-id must lie in [0, {len(ds)})")
        pair = ds.samples[args.sample_id]
        g = ds.provenance.get("grid")
        x = cfg.grid.x if g is None else replace(cfg.grid, **g).x
    t0 = time.perf_counter()
    net = predict(model, pair.input_profile)
    elapsed = time.perf_counter() - t0
    out = args.out or Path("profile.csv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_m", "exact", "wnst", "convnet"])
        for row in zip(x, pair.target_profile, pair.input_profile, net):
            w.writerow([repr(float(v)) for v in row])
    print(f"convnet inference {elapsed * 1e3:.2f} ms", file=sys.stderr)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
}


def _thread_limit() -> int | None:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InvalidParameter(f"{THREADS_ENV} must be a nonnegative integer, got {raw!r}") from None
    if n < 0:
        raise InvalidParameter(f"{THREADS_ENV} must be a nonnegative integer, got {raw!r}")
    return n or None


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    for name in ("config", "seed", "out"):
        setattr(args, name, getattr(args, name, None))
    try:
        with threadpool_limits(limits=_thread_limit()):
            return COMMANDS[args.command](args)
    except Divergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatVersionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (WavenetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
