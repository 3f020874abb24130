import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from draw import tensor as tn
from draw.gradcheck import check_gradients, numeric_grad, relative_error


def P(a):
    return tn.parameter(np.array(a, dtype=np.float64))


# ------------------------------------------------------------------ examples


def test_linear_identity():
    out = tn.linear(P(np.eye(2)), P([0.0, 0.0]), P([3.0, -1.0]))
    np.testing.assert_array_equal(out.data, [3.0, -1.0])


def test_linear_hand_example():
    out = tn.linear(P([[1, 2], [0, 1]]), P([1, 1]), P([1, 1]))
    np.testing.assert_array_equal(out.data, [4.0, 2.0])


def test_linear_input_gradient_is_column_sums(rng):
    W, b, a = P(rng.normal(size=(3, 4))), P(rng.normal(size=3)), P(rng.normal(size=4))
    with tn.Tape():
        g = tn.backward(tn.sum(tn.linear(W, b, a)), [a])
    np.testing.assert_allclose(g[a], W.data.sum(axis=0), rtol=1e-12)
    fd = numeric_grad(lambda: tn.sum(tn.linear(W, b, a)), a)
    assert relative_error(g[a], fd) < 1e-4


def test_linear_shape_error_reports_both_shapes():
    with pytest.raises(tn.DimensionError, match=r"\(2, 3\).*\(4,\)"):
        tn.linear(P(np.zeros((2, 3))), P(np.zeros(2)), P(np.zeros(4)))


def test_matmul_identity(rng):
    Q = P(rng.normal(size=(3, 5)))
    np.testing.assert_array_equal(tn.matmul(P(np.eye(3)), Q).data, Q.data)


def test_matmul_brute_force(rng):
    p, q = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
    expected = [[sum(p[i, k] * q[k, j] for k in range(3)) for j in range(2)] for i in range(2)]
    np.testing.assert_allclose(tn.matmul(P(p), P(q)).data, expected, rtol=1e-13)


def test_matmul_frobenius_gradient(rng):
    Pm, Qm = P(rng.normal(size=(2, 3))), P(rng.normal(size=(3, 2)))
    (err,) = check_gradients(lambda: tn.sum(tn.square(tn.matmul(Pm, Qm))), [Pm])
    assert err < 1e-4


def test_matmul_shape_mismatch():
    with pytest.raises(tn.DimensionError):
        tn.matmul(P(np.zeros((2, 3))), P(np.zeros((2, 3))))


def test_logistic_values(rng):
    assert tn.logistic(P([0.0])).data[0] == 0.5
    x = rng.normal(scale=5, size=50)
    np.testing.assert_allclose(tn.logistic(P(-x)).data, 1 - tn.logistic(P(x)).data, atol=1e-15)
    big = tn.logistic(P([-800.0, 800.0])).data
    assert np.all(np.isfinite(big)) and big[0] == 0.0 and big[1] == 1.0


def test_softmax_uniform():
    np.testing.assert_allclose(tn.softmax(P([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_binary_ops_refuse_broadcasting():
    with pytest.raises(tn.DimensionError):
        tn.add(P(np.zeros(3)), P(np.zeros((2, 3))))


def test_log_domain_policy():
    out = tn.log(P([0.0, -1.0, 1.0])).data
    assert np.all(np.isfinite(out)) and out[2] == 0.0 and out[0] < -700
    with tn.debug_mode(), pytest.raises(tn.DomainError):
        tn.log(P([0.0]))


def test_debug_mode_flags_nonfinite():
    with np.errstate(over="ignore"), tn.debug_mode(), pytest.raises(FloatingPointError):
        tn.exp(P([1000.0]))


def test_backward_sum_gives_ones(rng):
    p = P(rng.normal(size=(3, 2)))
    with tn.Tape():
        g = tn.backward(tn.sum(p), [p])
    np.testing.assert_array_equal(g[p], np.ones((3, 2)))


def test_backward_half_square_norm(rng):
    p = P(rng.normal(size=5))
    with tn.Tape():
        g = tn.backward(tn.scale(tn.sum(tn.square(p)), 0.5), [p])
    np.testing.assert_allclose(g[p], p.data, rtol=1e-15)


def test_untouched_parameter_gets_zero(rng):
    p, q = P(rng.normal(size=3)), P(rng.normal(size=4))
    with tn.Tape():
        g = tn.backward(tn.sum(p), [p, q])
    assert np.array_equal(g[q], np.zeros(4))


def test_backward_rejects_nonscalar(rng):
    p = P(rng.normal(size=3))
    with tn.Tape(), pytest.raises(tn.DimensionError):
        tn.backward(tn.exp(p))


def test_shared_use_accumulates_once_per_path(rng):
    p = P(rng.normal(size=3))
    with tn.Tape():
        y = tn.mul(p, p)
        g = tn.backward(tn.sum(tn.add(y, p)), [p])
    np.testing.assert_allclose(g[p], 2 * p.data + 1)


# ---------------------------------------------- per-primitive gradient suite


def _case(name, rng):
    """Return (params, f) where f builds a scalar through primitive ``name``."""
    n = lambda *s: P(rng.normal(size=s))  # noqa: E731
    a, b = n(3, 4), n(3, 4)
    fixed = {}

    def R(t):
        # generic scalar: fixed random weighting of every output entry
        if t.shape not in fixed:
            fixed[t.shape] = tn.constant(rng.normal(size=t.shape))
        return tn.sum(tn.mul(t, fixed[t.shape]))

    pos = P(rng.uniform(0.5, 2.0, size=(3, 4)))
    target = rng.uniform(size=(3, 4))
    cases = {
        "add": ([a, b], lambda: R(tn.add(a, b))),
        "sub": ([a, b], lambda: R(tn.sub(a, b))),
        "mul": ([a, b], lambda: R(tn.mul(a, b))),
        "div": ([a, pos], lambda: R(tn.div(a, pos))),
        "neg": ([a], lambda: R(tn.neg(a))),
        "scale": ([a], lambda: R(tn.scale(a, -1.7))),
        "shift": ([a], lambda: R(tn.shift(a, 0.3))),
        "square": ([a], lambda: R(tn.square(a))),
        "exp": ([a], lambda: R(tn.exp(a))),
        "log": ([pos], lambda: R(tn.log(pos))),
        "logistic": ([a], lambda: R(tn.logistic(a))),
        "tanh": ([a], lambda: R(tn.tanh(a))),
        "softmax": ([a], lambda: R(tn.softmax(a))),
        "clamp": ([a], lambda: R(tn.clamp(a, -10.0, 10.0))),
        "maximum": ([pos], lambda: R(tn.maximum(pos, 1e-9))),
        "sum_all": ([a], lambda: tn.mul(tn.sum(a), tn.sum(a))),
        "sum_axis": ([a], lambda: R(tn.square(tn.sum(a, axis=1)))),
        "mean": ([a], lambda: tn.square(tn.mean(a))),
        "reshape": ([a], lambda: R(tn.reshape(a, (2, 6)))),
        "transpose": ([a], lambda: R(tn.transpose(a))),
        "broadcast_to": ([n(3, 1)], None),
        "concat": ([a, n(3, 2)], None),
        "slice": ([a], lambda: R(tn.slice_last(a, 1, 3))),
        "linear_vec": ([n(2, 4), n(2), n(4)], None),
        "linear_batch": ([n(2, 4), n(2), n(5, 4)], None),
        "matmul": ([n(3, 4), n(4, 2)], None),
        "matmul_batch": ([n(2, 3, 4), n(2, 4, 2)], None),
        "bce_with_logits": ([a], lambda: tn.sum(tn.bce_with_logits(a, target))),
        "softmax_cross_entropy": ([a], lambda: tn.sum(tn.softmax_cross_entropy(a, [0, 3, 1]))),
    }
    params, f = cases[name]
    if f is None:
        if name == "broadcast_to":
            f = lambda: R(tn.broadcast_to(params[0], (2, 3, 4)))  # noqa: E731
        elif name == "concat":
            f = lambda: R(tn.concat(params, axis=1))  # noqa: E731
        elif name.startswith("linear"):
            f = lambda: R(tn.linear(*params))  # noqa: E731
        else:
            f = lambda: R(tn.matmul(*params))  # noqa: E731
    return params, f


PRIMITIVES = [
    "add", "sub", "mul", "div", "neg", "scale", "shift", "square", "exp", "log",
    "logistic", "tanh", "softmax", "clamp", "maximum", "sum_all", "sum_axis", "mean",
    "reshape", "transpose", "broadcast_to", "concat", "slice", "linear_vec",
    "linear_batch", "matmul", "matmul_batch", "bce_with_logits", "softmax_cross_entropy",
]


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(20):
        params, f = _case(name, rng)
        errors = check_gradients(f, params, eps=1e-5)
        assert max(errors) < 1e-4, (name, errors)


# ---------------------------------------------------------- compositions


def test_composite_logistic_matches_primitive(rng):
    x = P(rng.normal(size=7))
    w = tn.constant(rng.normal(size=7))
    with tn.Tape():
        g1 = tn.backward(tn.sum(tn.mul(tn.logistic(x), w)), [x])[x]
    with tn.Tape():
        one = tn.constant(np.ones(7))
        composite = tn.div(one, tn.shift(tn.exp(tn.neg(x)), 1.0))
        g2 = tn.backward(tn.sum(tn.mul(composite, w)), [x])[x]
    np.testing.assert_allclose(g1, g2, rtol=1e-12)


def test_composite_softmax_matches_primitive(rng):
    x = P(rng.normal(size=(2, 5)))
    w = tn.constant(rng.normal(size=(2, 5)))
    with tn.Tape():
        g1 = tn.backward(tn.sum(tn.mul(tn.softmax(x), w)), [x])[x]
    with tn.Tape():
        e = tn.exp(x)
        z = tn.broadcast_to(tn.reshape(tn.sum(e, axis=1), (2, 1)), (2, 5))
        g2 = tn.backward(tn.sum(tn.mul(tn.div(e, z), w)), [x])[x]
    np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-14)


# ------------------------------------------------------------ determinism


def test_tape_replay_is_bit_identical(rng):
    W, b = P(rng.normal(size=(4, 3))), P(rng.normal(size=4))
    x = P(rng.normal(size=(5, 3)))
    with tn.Tape() as tape:
        tn.sum(tn.tanh(tn.linear(W, b, x)))
    recorded = [n.data.copy() for n in tape.nodes]
    replayed = tape.replay()
    assert len(recorded) == len(tape) > 0
    for r, s in zip(recorded, replayed):
        assert np.array_equal(r, s)


def test_nodes_not_recorded_without_tape(rng):
    p = P(rng.normal(size=3))
    with tn.Tape() as tape:
        with tn.no_tape():
            tn.exp(p)
    assert len(tape) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
def test_softmax_is_a_distribution(xs):
    s = tn.softmax(P(xs)).data
    assert np.all(s >= 0) and abs(s.sum() - 1) < 1e-12
