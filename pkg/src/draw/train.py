"""Training loops, evaluation and checkpoint round-trips.

Randomness is keyed by ``(seed, purpose, counter)``: the data order of epoch
``e``, the binarization and latent noise of global step ``k``, and so on each
come from their own generator.  Resuming therefore only needs the step count,
and a run interrupted by save/load replays the uninterrupted one exactly.
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import dataio
from . import tensor as tn
from .classifier import Classifier, ClassifierConfig
from .config import TrainConfig, from_numeric, to_numeric
from .model import DrawConfig, DrawModel
from .optim import AdamState, adam_step, clip_global_norm

log = logging.getLogger(__name__)

_ORDER, _BINARIZE, _NOISE, _EVAL = 1, 2, 3, 4


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def image_dims(cfg: TrainConfig) -> tuple[int, int]:
    """``(B, A)`` for the task."""
    if cfg.task == "two-digit":
        return 60, 60
    if cfg.task == "cluttered-class":
        return cfg.canvas, cfg.canvas
    return 28, 28


def make_model(cfg: TrainConfig, seed: int):
    B, A = image_dims(cfg)
    if cfg.task == "cluttered-class":
        ccfg = ClassifierConfig(cfg.glimpses, cfg.lstm_h, cfg.read_size, A, B, attention=cfg.attention)
        return Classifier(ccfg, seed=seed, dtype=cfg.dtype)
    dcfg = DrawConfig(cfg.glimpses, cfg.lstm_h, cfg.z, cfg.read_size, cfg.write_size, cfg.attention, A, B)
    return DrawModel(dcfg, seed=seed, dtype=cfg.dtype)


def prepare_data(cfg: TrainConfig, data_dir=None):
    """``(train, valid, test)`` datasets for the task, synthesised deterministically
    from ``cfg.data_seed`` where needed.  Intensities are left continuous;
    binarization happens per batch."""
    root = Path(data_dir) if data_dir is not None else dataio.default_data_dir()
    fixed = [root / dataio.AMAT_FILES[s] for s in ("train", "valid", "test")]
    if cfg.task == "mnist" and cfg.binarize == "fixed" and all(p.exists() for p in fixed):
        train, valid, test = (dataio.load_amat(p, s) for p, s in zip(fixed, ("train", "valid", "test")))
    else:
        if cfg.binarize == "fixed":
            log.warning("fixed binarization files not found in %s; falling back to threshold", root)
        train = dataio.load_mnist(root, "train")
        valid = dataio.load_mnist(root, "valid")
        test = dataio.load_mnist(root, "test")
    if cfg.train_size:
        train = train.subset(slice(0, cfg.train_size))
    if cfg.valid_size:
        valid = valid.subset(slice(0, cfg.valid_size))
        test = test.subset(slice(0, cfg.valid_size))
    if cfg.task == "two-digit":
        out = []
        for k, ds in enumerate((train, valid, test)):
            out.append(dataio.make_two_digit(ds, _rng(cfg.data_seed, 10 + k)))
        return tuple(out)
    if cfg.task == "cluttered-class":
        dims = (cfg.canvas, cfg.canvas)
        out = []
        for k, ds in enumerate((train, valid, test)):
            out.append(dataio.make_cluttered(ds, dims, cfg.clutter, cfg.clutter_size, _rng(cfg.data_seed, 20 + k)))
        return tuple(out)
    return train, valid, test


def binarize_eval(cfg: TrainConfig, ds: dataio.Dataset) -> np.ndarray:
    """Fixed binary version of an evaluation set (stochastic mode uses one fixed draw)."""
    if cfg.task == "cluttered-class":
        return ds.images
    mode = "threshold" if cfg.binarize == "fixed" else cfg.binarize
    return dataio.binarize(ds, mode, _rng(cfg.data_seed, _BINARIZE, 0)).images


def eval_bound(model: DrawModel, images: np.ndarray, samples: int = 1, rng=None, batch: int = 500) -> float:
    """Mean variational bound in nats per image; each image's bound is the
    average of ``samples`` one-sample bounds."""
    rng = rng if rng is not None else np.random.default_rng(0)
    images = np.asarray(images, model.dtype)
    if images.shape[1:] != (model.config.B, model.config.A):
        raise ValueError(f"dataset images {images.shape[1:]} do not match the model {(model.config.B, model.config.A)}")
    total = 0.0
    for k in range(0, len(images), batch):
        chunk = images[k:k + batch]
        acc = np.zeros(len(chunk))
        for _ in range(samples):
            acc += model.per_image_bound(chunk, rng)
        total += float(np.sum(acc / samples))
    return total / len(images)


class Trainer:
    def __init__(self, cfg: TrainConfig, train: dataio.Dataset, valid: dataio.Dataset | None = None, seed: int = 0, model=None):
        if len(train) == 0:
            raise ValueError("training set is empty")
        if train.dims != image_dims(cfg):
            raise ValueError(f"dataset images are {train.dims}, task {cfg.task} expects {image_dims(cfg)}")
        if cfg.task == "cluttered-class" and train.labels is None:
            raise ValueError("classification needs labels")
        self.cfg = cfg
        self.seed = seed
        self.train_set = train
        self.valid_set = valid
        self.model = model if model is not None else make_model(cfg, seed)
        self.params = self.model.named_parameters()
        self.adam = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.step = 0
        self.history: list[dict] = []
        self._valid_images = None if valid is None else binarize_eval(cfg, valid)

    @property
    def is_classifier(self) -> bool:
        return self.cfg.task == "cluttered-class"

    @property
    def batches_per_epoch(self) -> int:
        return max(1, len(self.train_set) // self.cfg.batch_size)

    @property
    def epoch(self) -> int:
        return self.step // self.batches_per_epoch

    def batch_index(self, step: int) -> np.ndarray:
        bpe = self.batches_per_epoch
        order = _rng(self.seed, _ORDER, step // bpe).permutation(len(self.train_set))
        j = step % bpe
        bs = min(self.cfg.batch_size, len(self.train_set))
        return order[j * bs:(j + 1) * bs]

    def batch(self, step: int):
        idx = self.batch_index(step)
        ds = self.train_set.subset(idx)
        if self.is_classifier:
            return ds.images.astype(self.model.dtype), ds.labels
        mode = self.cfg.binarize
        if mode == "fixed":
            # fixed data is already binary, where thresholding is the identity
            mode = "threshold"
        ds = dataio.binarize(ds, mode, _rng(self.seed, _BINARIZE, step))
        return ds.images.astype(self.model.dtype), None

    def loss_on(self, step: int):
        """Build the tape for ``step``; returns ``(root, extras)``."""
        images, labels = self.batch(step)
        if self.is_classifier:
            loss = self.model.loss(images, labels)
            return loss, {"loss": loss}
        lx, lz, total = self.model.loss_terms(images, _rng(self.seed, _NOISE, step))
        return total, {"lx": lx, "lz": lz, "total": total}

    def train_step(self) -> dict[str, float]:
        with tn.Tape():
            root, extras = self.loss_on(self.step)
            g = tn.backward(root, list(self.params.values()))
        grads = {name: g[p] for name, p in self.params.items()}
        norm = clip_global_norm(grads, self.cfg.clip_norm)
        adam_step({n: p.data for n, p in self.params.items()}, grads, self.adam)
        self.step += 1
        out = {k: v.item() for k, v in extras.items()}
        out["grad_norm"] = norm
        return out

    def evaluate(self, ds_images=None, labels=None, samples: int = 1) -> dict[str, float]:
        if ds_images is None:
            if self.valid_set is None:
                return {}
            ds_images, labels = self._valid_images, self.valid_set.labels
        if self.is_classifier:
            return {"error": self.model.error_rate(np.asarray(ds_images, self.model.dtype), labels)}
        return {"bound": eval_bound(self.model, ds_images, samples, _rng(self.seed, _EVAL))}

    def run(self, epochs=None, max_steps=None, time_budget=None, ckpt_path=None, log_path=None) -> list[dict]:
        """Train until ``epochs`` / ``max_steps`` / ``time_budget`` (seconds), whichever
        comes first; evaluates the validation set after every epoch."""
        cfg = self.cfg
        epochs = cfg.epochs if epochs is None else epochs
        max_steps = (cfg.max_steps or None) if max_steps is None else max_steps
        time_budget = (cfg.time_budget or None) if time_budget is None else time_budget
        bpe = self.batches_per_epoch
        stop_step = epochs * bpe if epochs else None
        if max_steps is not None:
            stop_step = max_steps if stop_step is None else min(stop_step, max_steps)
        start = time.perf_counter()
        sums, count = {}, 0
        while stop_step is None or self.step < stop_step:
            stats = self.train_step()
            for k, v in stats.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
            if cfg.checkpoint_every and ckpt_path and self.step % cfg.checkpoint_every == 0:
                self.save(ckpt_path)
            out_of_time = time_budget is not None and time.perf_counter() - start > time_budget
            if self.step % bpe == 0 or out_of_time or self.step == stop_step:
                entry = {"epoch": self.step / bpe, "step": self.step, "seconds": time.perf_counter() - start}
                entry.update({f"train_{k}": v / count for k, v in sums.items()})
                entry.update({f"valid_{k}": v for k, v in self.evaluate().items()})
                self.history.append(entry)
                log.info("%s", entry)
                if log_path:
                    with open(log_path, "a") as f:
                        f.write(json.dumps(entry) + "\n")
                sums, count = {}, 0
            if out_of_time:
                break
        if ckpt_path:
            self.save(ckpt_path)
        return self.history

    # persistence -------------------------------------------------------

    def save(self, path):
        records: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            records[f"param/{name}"] = p.data
        for name in self.params:
            if name in self.adam.m:
                records[f"adam/m/{name}"] = self.adam.m[name]
                records[f"adam/v/{name}"] = self.adam.v[name]
        records["adam/step"] = np.array(self.adam.step)
        records["adam/hyper"] = np.array([self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.eps])
        records["meta/step"] = np.array(self.step)
        records["meta/epoch"] = np.array(self.epoch)
        records["meta/seed"] = np.array(self.seed)
        for key, value in to_numeric(self.cfg).items():
            records[f"config/{key}"] = np.array(value)
        ck.write_records(path, records)

    @classmethod
    def load(cls, path, train: dataio.Dataset, valid: dataio.Dataset | None = None):
        records = ck.read_records(path)
        cfg = config_from_records(records)
        seed = int(records["meta/seed"])
        trainer = cls(cfg, train, valid, seed=seed, model=model_from_records(records, cfg))
        trainer.step = int(records["meta/step"])
        lr, b1, b2, eps = records["adam/hyper"]
        trainer.adam = AdamState(float(lr), float(b1), float(b2), float(eps), int(records["adam/step"]))
        dtype = cfg.dtype
        for name in trainer.params:
            if f"adam/m/{name}" in records:
                trainer.adam.m[name] = records[f"adam/m/{name}"].astype(dtype)
                trainer.adam.v[name] = records[f"adam/v/{name}"].astype(dtype)
        return trainer


def config_from_records(records) -> TrainConfig:
    prefix = "config/"
    return from_numeric({k[len(prefix):]: float(v) for k, v in records.items() if k.startswith(prefix)})


def model_from_records(records, cfg: TrainConfig | None = None):
    cfg = cfg or config_from_records(records)
    model = make_model(cfg, seed=int(records.get("meta/seed", 0)))
    prefix = "param/"
    model.load_arrays({k[len(prefix):]: v for k, v in records.items() if k.startswith(prefix)})
    return model


def load_model(path):
    """``(model, config)`` from a checkpoint file."""
    records = ck.read_records(path)
    cfg = config_from_records(records)
    return model_from_records(records, cfg), cfg
