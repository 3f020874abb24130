import math

import numpy as np
import pytest

from draw import checkpoint as ck
from draw import tensor as tn
from draw.config import ConfigError, TrainConfig, dump_config, from_numeric, parse_config, to_numeric
from draw.dataio import Dataset
from draw.model import DrawConfig, DrawModel
from draw.optim import adam_step
from draw.train import Trainer, _rng, eval_bound, load_model


def tiny_cfg(**kw):
    base = dict(glimpses=2, lstm_h=8, z=4, attention=False, batch_size=4, precision=64, epochs=1)
    base.update(kw)
    return TrainConfig(**base)


def data(rng, n=8):
    return Dataset(rng.uniform(size=(n, 28, 28)), rng.integers(0, 10, n))


def test_overfit_one_image(rng):
    image = Dataset((rng.random((1, 28, 28)) < 0.3).astype(float))
    tr = Trainer(tiny_cfg(batch_size=1, learning_rate=0.01, attention=True), image, seed=1)
    # fixed noise so the objective is a deterministic function of the weights
    noise = tr.model.draw_noise(np.random.default_rng(0), 1)
    losses = []
    for _ in range(50):
        with tn.Tape():
            _, _, total = tr.model.loss_terms(image.images, noise=noise)
            g = tn.backward(total, list(tr.params.values()))
        losses.append(total.item())
        adam_step({k: p.data for k, p in tr.params.items()}, {k: g[p] for k, p in tr.params.items()}, tr.adam)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_logged_loss_matches_outside_evaluation(rng):
    tr = Trainer(tiny_cfg(), data(rng), seed=3)
    images, _ = tr.batch(0)
    outside = tr.model.total_loss(images, _rng(3, 3, 0))
    stats = tr.train_step()
    assert stats["total"] == outside.total
    assert stats["lx"] == outside.lx and stats["lz"] == outside.lz


def test_run_logs_every_epoch(rng, tmp_path):
    tr = Trainer(tiny_cfg(), data(rng), Dataset(rng.uniform(size=(4, 28, 28))), seed=0)
    hist = tr.run(epochs=3, ckpt_path=tmp_path / "c", log_path=tmp_path / "log")
    assert [h["step"] for h in hist] == [2, 4, 6]
    assert all("valid_bound" in h and "train_total" in h for h in hist)
    assert len((tmp_path / "log").read_text().splitlines()) == 3
    assert (tmp_path / "c").exists()


def test_checkpoint_round_trip_bit_identical(rng, tmp_path):
    ds = data(rng)
    for attention in (False, True):
        cfg = tiny_cfg(attention=attention, precision=32)
        a = Trainer(cfg, ds, seed=5)
        for _ in range(3):
            a.train_step()
        a.save(tmp_path / "ck")
        b = Trainer.load(tmp_path / "ck", ds)
        for _ in range(3):
            a.train_step()
            b.train_step()
        for name, p in a.params.items():
            assert np.array_equal(p.data, b.params[name].data), name
            assert p.data.dtype == b.params[name].data.dtype
        assert a.adam.step == b.adam.step == 6


def test_checkpoint_records(rng, tmp_path):
    tr = Trainer(tiny_cfg(), data(rng), seed=2)
    tr.train_step()
    tr.save(tmp_path / "ck")
    raw = (tmp_path / "ck").read_bytes()
    assert raw[:8] == b"DRAWCKPT" and raw[8:12] == (1).to_bytes(4, "little")
    rec = ck.read_records(tmp_path / "ck")
    assert int(rec["meta/step"]) == 1 and int(rec["meta/seed"]) == 2
    assert "adam/m/write.W" in rec and "param/canvas0" in rec
    model, cfg = load_model(tmp_path / "ck")
    assert cfg == tr.cfg
    assert np.array_equal(model.write.W.data, tr.model.write.W.data)


def test_checkpoint_corruption(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOTACKPT")
    with pytest.raises(ck.CheckpointError):
        ck.read_records(tmp_path / "bad")
    ck.write_records(tmp_path / "ok", {"a": np.arange(6.0).reshape(2, 3)})
    raw = (tmp_path / "ok").read_bytes()
    (tmp_path / "cut").write_bytes(raw[:-5])
    with pytest.raises(ck.CheckpointError):
        ck.read_records(tmp_path / "cut")


def test_trainer_rejects_mismatched_data(rng):
    with pytest.raises(ValueError):
        Trainer(tiny_cfg(), Dataset(np.zeros((4, 20, 20))))
    with pytest.raises(ValueError):
        Trainer(tiny_cfg(), Dataset(np.zeros((0, 28, 28))))


# ------------------------------------------------------------------ config


def test_config_parse_and_dump():
    cfg = parse_config("# comment\nglimpses = 8\nattention=false\nlearning_rate=3e-4\n\ntask=two-digit\n")
    assert cfg.glimpses == 8 and cfg.attention is False and cfg.learning_rate == 3e-4 and cfg.task == "two-digit"
    assert parse_config(dump_config(cfg)) == cfg
    assert from_numeric(to_numeric(cfg)) == cfg


@pytest.mark.parametrize(
    "text", ["colour=red", "glimpses=many", "task=svhn", "binarize=dither", "novalue", "precision=16"]
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -------------------------------------------------------------- evaluation


def test_eval_bound_zero_write(rng):
    m = DrawModel(DrawConfig(T=3, H=8, Z=4, attention=True), seed=0)
    for p in m.write.parameters():
        p.data[:] = 0
    images = (rng.random((5, 28, 28)) < 0.3).astype(float)
    bound = eval_bound(m, images, rng=np.random.default_rng(1))
    lz = m.total_loss(images, np.random.default_rng(1)).lz
    assert bound == pytest.approx(784 * math.log(2) + lz, rel=1e-12)


def test_averaged_bound_not_above_worst_sample(rng):
    m = DrawModel(DrawConfig(T=3, H=8, Z=4, attention=False), seed=0)
    images = (rng.random((1, 28, 28)) < 0.3).astype(float)
    singles = [eval_bound(m, images, rng=np.random.default_rng(k)) for k in range(10)]
    r = np.random.default_rng(0)
    avg = np.mean([m.per_image_bound(images, r)[0] for _ in range(10)])
    assert avg <= max(singles) or avg == pytest.approx(max(singles))
    assert eval_bound(m, images, samples=10, rng=np.random.default_rng(0)) == pytest.approx(avg, rel=1e-12)


def test_eval_bound_shape_mismatch():
    m = DrawModel(DrawConfig(T=1, H=4, Z=2, attention=False), seed=0)
    with pytest.raises(ValueError):
        eval_bound(m, np.zeros((1, 20, 20)))
