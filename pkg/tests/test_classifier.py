import numpy as np
import pytest

from draw import tensor as tn
from draw.classifier import Classifier, ClassifierConfig, downsample
from draw.gradcheck import check_gradients
from draw.optim import AdamState, adam_step


def small(**kw):
    base = dict(glimpses=2, H=6, N=3, A=12, B=12)
    base.update(kw)
    return Classifier(ClassifierConfig(**base), seed=2)


def test_probabilities_sum_to_one(rng):
    m = small()
    for p in m.parameters():
        p.data = rng.normal(size=p.shape)
    probs = m.classify(rng.uniform(size=(5, 12, 12)))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_zero_weights_uniform(rng):
    m = small()
    for p in m.parameters():
        p.data[:] = 0
    np.testing.assert_allclose(m.classify(rng.uniform(size=(3, 12, 12))), 0.1, rtol=1e-12)


@pytest.mark.parametrize("attention", [True, False])
def test_cross_entropy_gradient(rng, attention):
    m = small(attention=attention)
    m.h0.data = rng.normal(scale=0.5, size=6)
    images = rng.uniform(size=(2, 12, 12))
    labels = np.array([3, 7])
    errors = check_gradients(lambda: m.loss(images, labels), m.parameters())
    assert max(errors) < 1e-4


def test_memorises_single_example(rng):
    m = small()
    image = rng.uniform(size=(1, 12, 12))
    label = np.array([4])
    params = m.named_parameters()
    state = AdamState(lr=0.05)
    for _ in range(200):
        with tn.Tape():
            loss = m.loss(image, label)
            g = tn.backward(loss, list(params.values()))
        adam_step({k: p.data for k, p in params.items()}, {k: g[p] for k, p in params.items()}, state)
    assert m.loss(image, label).item() < 0.01


def test_error_rate(rng):
    m = small()
    images = rng.uniform(size=(6, 12, 12))
    pred = m.classify(images).argmax(axis=1)
    assert m.error_rate(images, pred, batch=4) == 0.0
    assert m.error_rate(images, (pred + 1) % 10) == 1.0


def test_record_params_trail(rng):
    m = small(glimpses=3)
    _, trail = m.logits(rng.uniform(size=(2, 12, 12)), record_params=True)
    assert len(trail) == 3 and trail[0]["gx"].shape == (2,)


def test_downsample_constant_image():
    out = downsample(np.full((2, 40, 40), 0.3), 12)
    assert out.shape == (2, 144)
    np.testing.assert_allclose(out, 0.3, rtol=1e-12)


def test_config_rejects_small_read():
    with pytest.raises(ValueError):
        ClassifierConfig(N=1)
