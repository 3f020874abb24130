"""Command line: ``draw {train,eval-bound,generate,classify-eval,prepare-data}``.

Failures exit with status 1 (2 for usage errors) and print one line to
stderr: ``error: <kind>: <message>``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import dataio
from .classifier import Classifier
from .config import TASKS, ConfigError, TrainConfig, load_config
from .export import export_sequence
from .train import Trainer, binarize_eval, eval_bound, load_model, prepare_data


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def _data_dir(arg):
    return Path(arg) if arg else dataio.default_data_dir()


def cmd_train(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    if cfg.task != args.task:
        cfg = TrainConfig(**{**cfg.__dict__, "task": args.task})
    train, valid, _ = prepare_data(cfg, _data_dir(args.data))
    trainer = Trainer(cfg, train, valid, seed=args.seed)
    log_path = Path(str(args.out) + ".log.jsonl")
    log_path.unlink(missing_ok=True)
    history = trainer.run(ckpt_path=args.out, log_path=log_path)
    print(json.dumps(history[-1] if history else {"step": trainer.step}))


def _load(ckpt):
    try:
        return load_model(ckpt)
    except FileNotFoundError:
        raise CliError("io", f"checkpoint not found: {ckpt}") from None


def cmd_eval_bound(args):
    model, cfg = _load(args.ckpt)
    if isinstance(model, Classifier):
        raise CliError("config", "checkpoint holds a classifier; use classify-eval")
    _, _, test = prepare_data(cfg, _data_dir(args.data))
    images = binarize_eval(cfg, test)
    try:
        nats = eval_bound(model, images, samples=args.samples, rng=np.random.default_rng(args.seed))
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    print(json.dumps({"bound_nats": nats, "images": len(images), "samples": args.samples}))


def cmd_generate(args):
    model, _ = _load(args.ckpt)
    if isinstance(model, Classifier):
        raise CliError("config", "checkpoint holds a classifier, not a generative model")
    try:
        paths = export_sequence(
            model, args.count, args.out, np.random.default_rng(args.seed), args.annotate, args.sample_pixels
        )
    except OSError as exc:
        raise CliError("io", str(exc)) from None
    print(json.dumps({"files": len(paths), "out": str(args.out)}))


def cmd_classify_eval(args):
    model, cfg = _load(args.ckpt)
    if not isinstance(model, Classifier):
        raise CliError("config", "checkpoint does not hold a classifier")
    _, _, test = prepare_data(cfg, _data_dir(args.data))
    if test.dims != (model.config.B, model.config.A):
        raise CliError("config", f"test images {test.dims} do not match the model")
    err = model.error_rate(test.images.astype(model.dtype), test.labels)
    print(json.dumps({"error_rate": err, "images": len(test)}))


def cmd_prepare_data(args):
    from .fetch import build_mnist_dir

    out = build_mnist_dir(_data_dir(args.data), args.sources, download=not args.offline)
    print(json.dumps({"data": str(out)}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="draw", description="DRAW training, evaluation and generation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--task", choices=TASKS, required=True)
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--data", help=f"MNIST directory (default ${dataio.DATA_ENV})")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-bound", help="variational bound on the test split, nats/image")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data")
    e.add_argument("--samples", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval_bound)

    g = sub.add_parser("generate", help="export canvas sequences as PGM frames")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--count", type=int, default=8)
    g.add_argument("--out", required=True)
    g.add_argument("--annotate", action="store_true", help="also write frames with the write patch outlined")
    g.add_argument("--sample-pixels", action="store_true", help="also write a Bernoulli sample of each image")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("classify-eval", help="test error of a glimpse classifier")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--data")
    c.set_defaults(func=cmd_classify_eval)

    d = sub.add_parser("prepare-data", help="build the MNIST IDX directory from registry mirrors")
    d.add_argument("--data")
    d.add_argument("--sources", help="directory holding (or receiving) the source archives")
    d.add_argument("--offline", action="store_true", help="use only archives already in --sources")
    d.set_defaults(func=cmd_prepare_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except CliError as exc:
        kind, msg = exc.kind, str(exc)
    except ConfigError as exc:
        kind, msg = "config", str(exc)
    except (dataio.IdxFormatError, ck.CheckpointError) as exc:
        kind, msg = "format", str(exc)
    except FileNotFoundError as exc:
        kind, msg = "io", f"{exc.strerror}: {exc.filename}"
    except OSError as exc:
        kind, msg = "io", str(exc)
    except ValueError as exc:
        kind, msg = "value", str(exc)
    else:
        return 0
    print(f"error: {kind}: {' '.join(msg.split())}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
