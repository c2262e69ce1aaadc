"""Command-line entry point: ``fusionsteer <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint as ck
from . import dataset as ds
from . import evaluate as ev
from .models import build_model, count_flops, count_parameters, get_profile
from .tensor import ShapeError, make_rng, set_deterministic
from .synth import PERTURB
from .train import DEFAULT_DELTA, DEFAULT_LR, EVAL_BATCH, TRAIN_BATCH, TrainingDiverged, train

PUBLISHED_PARAMS = {"conemb": 83_902_001, "gated": 22_098_691}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="global random seed")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, fixed-order math")
    p.add_argument("--profile", default="paper", choices=["paper", "tiny"], help="architecture profile")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="fusionsteer", description="RGB-D fusion steering networks")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic corridor dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--samples", type=int, default=7566)
    p.add_argument("--difficulty", type=int, default=1)
    p.add_argument("--image-size", type=int, default=240)
    p.add_argument("--perturb", type=float, default=PERTURB,
                   help="per-step chance of a held random command (labels stay the expert's)")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--model", required=True, choices=["conemb", "gated"])
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--batch-size", type=int, default=TRAIN_BATCH)
    p.add_argument("--val-batch-size", type=int, default=EVAL_BATCH)
    p.add_argument("--select", choices=["final", "best"], default="final")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--log", type=Path)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--split", default="test", choices=list(ds.SPLITS))
    p.add_argument("--mask", default="none", choices=["none", "rgb", "depth"])
    p.add_argument("--batch-size", type=int, default=EVAL_BATCH)
    p.add_argument("--timing", action="store_true", help="also record per-batch forward times")
    p.add_argument("--report", required=True, type=Path)
    p.add_argument("--residuals", type=Path)

    p = sub.add_parser("ablate", parents=[common], help="zero-modality ablation (none / rgb / depth)")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--split", default="test", choices=list(ds.SPLITS))
    p.add_argument("--report", required=True, type=Path)

    p = sub.add_parser("bench", parents=[common], help="inference-time benchmark")
    p.add_argument("--ckpt", type=Path, help="checkpoint to time (default: fresh model of --model/--profile)")
    p.add_argument("--model", choices=["conemb", "gated"])
    p.add_argument("--batch", type=int, default=5)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--report", type=Path)

    p = sub.add_parser("params", parents=[common], help="parameter count and FLOPs of a profile")
    p.add_argument("--model", required=True, choices=["conemb", "gated"])
    return parser


def _header(args) -> None:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}
    print("# config: " + json.dumps(resolved, sort_keys=True))


def _load_data(args, config, stats):
    manifest = ds.read_manifest(args.data)
    return manifest, ds.load_split(manifest, args.split, stats, config.image_size)


def cmd_gen_data(args) -> None:
    manifest = ds.generate_dataset(make_rng(args.seed), args.samples, args.out, args.difficulty, args.image_size,
                                     perturb=args.perturb)
    sizes = {s: len(manifest.split(s)) for s in ds.SPLITS}
    print(f"wrote {len(manifest.records)} samples to {args.out} ({sizes})")


def cmd_train(args) -> None:
    config = get_profile(args.model, args.profile)
    manifest = ds.read_manifest(args.data)
    norm_path = args.data / "norm.csv"
    stats = ds.read_norm_stats(norm_path) if norm_path.is_file() else ds.compute_norm_stats(manifest)
    train_data = ds.load_split(manifest, "train", stats, config.image_size)
    val_data = ds.load_split(manifest, "val", stats, config.image_size) if manifest.split("val") else None
    rng = make_rng(args.seed)
    model = build_model(config, rng)
    print(f"{config.profile}: {count_parameters(model):,} parameters, "
          f"{len(train_data)} train / {len(val_data) if val_data else 0} val samples")

    def sink(row):
        gates = "" if row.w_rgb_mean is None else f"  w_rgb {row.w_rgb_mean:.4f}  w_depth {row.w_depth_mean:.4f}"
        print(f"epoch {row.epoch:4d}  train {row.train_loss:.6f}  val {row.val_loss:.6f}{gates}", flush=True)

    model, history, opt = train(model, train_data, val_data, args.epochs, rng, lr=args.lr, delta=args.delta,
                                batch_size=args.batch_size, val_batch_size=args.val_batch_size,
                                log_sink=sink, select=args.select)
    ck.save_checkpoint(args.out, ck.Checkpoint.from_model(model, stats, args.epochs, rng, opt))
    if args.log:
        history.write_csv(args.log)
    print(f"saved {args.out}")


def _load_ckpt(path):
    c = ck.load_checkpoint(path)
    if c.norm_stats is None:
        raise ck.CheckpointError(f"{path}: checkpoint has no normalization statistics")
    return c, c.build_model()


def cmd_eval(args) -> None:
    c, model = _load_ckpt(args.ckpt)
    _, data = _load_data(args, c.config, c.norm_stats)
    report, dump = ev.evaluate(model, data, args.mask, args.batch_size, timed=args.timing)
    ev.write_report(args.report, [report])
    if args.residuals:
        dump.write_csv(args.residuals)
    print(ev.format_table([report]))


def cmd_ablate(args) -> None:
    c, model = _load_ckpt(args.ckpt)
    _, data = _load_data(args, c.config, c.norm_stats)
    reports = ev.ablate(model, data)
    ev.write_report(args.report, reports)
    print(ev.format_table(reports))
    print(ev.ablation_observation(reports))


def cmd_bench(args) -> None:
    if args.ckpt is not None:
        model = _load_ckpt(args.ckpt)[1]
    elif args.model is not None:
        model = build_model(get_profile(args.model, args.profile), make_rng(args.seed))
    else:
        raise UsageError("bench: give --ckpt or --model")
    t = ev.bench_inference(model, args.batch, args.warmup, args.iters, args.seed)
    print(f"model {model.config.profile}  batch {t.batch}  iters {t.iters}  (normalization excluded)")
    print(f"per batch      mean {t.ms_per_batch_mean:.3f} ms  std {t.ms_per_batch_std:.3f} ms  "
          f"min {t.ms_per_batch_min:.3f} ms")
    print(f"per inference  mean {t.ms_per_inference_mean:.3f} ms  std {t.ms_per_inference_std:.3f} ms  "
          f"min {t.ms_per_inference_min:.3f} ms")
    print(f"flops per inference {t.flops_per_sample:,}  per batch {t.flops_per_sample * t.batch:,}")
    if args.report:
        Path(args.report).write_text(
            "model,batch,iters,ms_per_batch_mean,ms_per_batch_std,ms_per_batch_min,"
            "ms_per_inference_mean,ms_per_inference_std,ms_per_inference_min,flops_per_inference\n"
            f"{model.config.profile},{t.batch},{t.iters},{t.ms_per_batch_mean!r},{t.ms_per_batch_std!r},"
            f"{t.ms_per_batch_min!r},{t.ms_per_inference_mean!r},{t.ms_per_inference_std!r},"
            f"{t.ms_per_inference_min!r},{t.flops_per_sample}\n")


def cmd_params(args) -> None:
    config = get_profile(args.model, args.profile)
    n = count_parameters(config)
    print(f"profile {config.profile}")
    print(f"parameters {n:,}")
    print(f"flops per inference {count_flops(config):,}")
    if args.profile == "paper":
        pub = PUBLISHED_PARAMS[args.model]
        print(f"published {pub:,} (difference {100.0 * (n - pub) / pub:+.4f}%)")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "bench": cmd_bench, "params": cmd_params}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    set_deterministic(args.deterministic)
    _header(args)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ds.DatasetError, ck.CheckpointError, ShapeError, TrainingDiverged, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        set_deterministic(False)
    return 0


def main() -> None:
    sys.exit(run())
