"""Engine tests: forward ops against naive oracles, backward rules against
central finite differences, tape semantics, Adam, and the freeze contract."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facegan3d import autodiff as ad
from facegan3d.errors import NonFiniteError, ShapeError

from oracles import (naive_avg_pool2, naive_conv2d, naive_l1_mean,
                     naive_matmul_affine, naive_upsample2, reference_adam)


def t64(arr, **kw):
    return ad.Tensor(np.asarray(arr, dtype=np.float64), **kw)


def rand_away_from_zero(rng, shape, low=0.1, high=1.0):
    """Magnitudes in [low, high] with random signs: keeps ELU/L1 kinks out
    of finite-difference windows."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return mag * sign


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_identity_kernel():
    x = ad.Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    out = ad.conv2d(x, ad.Tensor(w), ad.Tensor(np.zeros(1, dtype=np.float32)))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_zero_weight_gives_bias():
    rng = np.random.default_rng(0)
    x = ad.Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
    w = ad.Tensor(np.zeros((5, 3, 3, 3), dtype=np.float32))
    b = ad.Tensor(np.full(5, 2.5, dtype=np.float32))
    out = ad.conv2d(x, w, b)
    np.testing.assert_array_equal(out.data, np.full((2, 5, 4, 4), 2.5, np.float32))


def test_conv2d_all_ones_2x2_frozen_value():
    # computed by the six-nested-loop oracle: every output cell sums the
    # whole 2x2 input under padding
    x = ad.Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
    w = ad.Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
    b = ad.Tensor(np.zeros(1, dtype=np.float32))
    out = ad.conv2d(x, w, b)
    np.testing.assert_array_equal(out.data[0, 0], [[10.0, 10.0], [10.0, 10.0]])
    oracle = naive_conv2d(x.data, w.data, b.data)
    np.testing.assert_allclose(out.data, oracle, rtol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_conv2d_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 5, 4))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = ad.conv2d(t64(x), t64(w), t64(b))
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, b), rtol=1e-12, atol=1e-12)


def test_conv2d_shape_errors_name_dimensions():
    x = t64(np.zeros((1, 3, 4, 4)))
    with pytest.raises(ShapeError, match="3"):
        ad.conv2d(x, t64(np.zeros((2, 5, 3, 3))), t64(np.zeros(2)))
    with pytest.raises(ShapeError, match="bias"):
        ad.conv2d(x, t64(np.zeros((2, 3, 3, 3))), t64(np.zeros(3)))


# ---------------------------------------------------------------------------
# pooling / upsampling


def test_avg_pool2_constant_and_mean():
    c = np.full((1, 1, 4, 4), 3.25, dtype=np.float32)
    np.testing.assert_array_equal(ad.avg_pool2(ad.Tensor(c)).data, c[:, :, ::2, ::2])
    x = ad.Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
    assert ad.avg_pool2(x).data.item() == 2.5


def test_avg_pool2_matches_naive_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 4, 4))
    np.testing.assert_allclose(ad.avg_pool2(t64(x)).data, naive_avg_pool2(x),
                               rtol=1e-12)


def test_avg_pool2_odd_dims_error():
    with pytest.raises(ShapeError, match="even"):
        ad.avg_pool2(t64(np.zeros((1, 1, 3, 4))))


def test_upsample_single_cell():
    out = ad.upsample_nearest2(t64([[[[1.0]]]]))
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 2, 2)))


def test_upsample_matches_naive_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 3, 3))
    np.testing.assert_allclose(ad.upsample_nearest2(t64(x)).data,
                               naive_upsample2(x), rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 3), st.integers(1, 4))
def test_pool_of_upsample_is_identity(seed, c, h):
    x = np.random.default_rng(seed).standard_normal((1, c, h, h)).astype(np.float32)
    back = ad.avg_pool2(ad.upsample_nearest2(ad.Tensor(x)))
    np.testing.assert_array_equal(back.data, x)


# ---------------------------------------------------------------------------
# activations


def test_activation_zero_points():
    z = t64(np.zeros((2, 2)))
    assert np.all(ad.elu(z).data == 0)
    assert np.all(ad.tanh(z).data == 0)


def test_activation_asymptotes():
    out = ad.elu(t64([-50.0]))
    np.testing.assert_allclose(out.data, [-1.0], atol=1e-12)
    big = ad.tanh(t64([-5.0, 5.0]))
    assert np.all(big.data > -1.0) and np.all(big.data < 1.0)


def test_elu_minus_one_scalar_oracle():
    out = ad.elu(t64([-1.0]))
    np.testing.assert_allclose(out.data, [math.exp(-1.0) - 1.0], rtol=1e-15)


def test_activation_unknown_kind():
    with pytest.raises(ValueError):
        ad.activation("relu", t64([0.0]))


# ---------------------------------------------------------------------------
# fully connected / l1


def test_fc_identity_and_zero_input():
    x = np.eye(3)
    out = ad.fully_connected(t64(x), t64(np.eye(3)), t64(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x)
    b = np.array([1.0, -2.0])
    out = ad.fully_connected(t64(np.zeros((4, 3))), t64(np.zeros((2, 3))), t64(b))
    np.testing.assert_array_equal(out.data, np.tile(b, (4, 1)))


def test_fc_matches_naive_matmul():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3))
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    out = ad.fully_connected(t64(x), t64(w), t64(b))
    np.testing.assert_allclose(out.data, naive_matmul_affine(x, w, b), rtol=1e-12)


def test_l1_mean_values():
    a = t64([1.0, -1.0])
    assert float(ad.l1_mean(a, t64([0.0, 0.0])).data) == 1.0
    assert float(ad.l1_mean(a, a).data) == 0.0


def test_l1_mean_matches_elementwise_loop():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((3, 4, 5))
    b = rng.standard_normal((3, 4, 5))
    got = float(ad.l1_mean(t64(a), t64(b)).data)
    assert got == pytest.approx(naive_l1_mean(a, b), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_l1_mean_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(17)
    b = rng.standard_normal(17)
    assert float(ad.l1_mean(t64(a), t64(b)).data) == float(ad.l1_mean(t64(b), t64(a)).data)


def test_l1_mean_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.l1_mean(t64(np.zeros(3)), t64(np.zeros(4)))


# ---------------------------------------------------------------------------
# backward / tape semantics


def test_backward_sum_gives_ones():
    tape = ad.Tape()
    x = tape.leaf(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
    loss = ad.sum_all(x)
    ad.backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_unused_param_gets_zero_grad():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3), requires_grad=True)
    p = ad.Tensor(np.ones(4), requires_grad=True)
    loss = ad.sum_all(x)
    ad.backward(tape, loss, params=[x, p])
    np.testing.assert_array_equal(p.grad, np.zeros(4))


def test_backward_rejects_non_scalar_loss():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3), requires_grad=True)
    y = ad.scale(x, 2.0)
    with pytest.raises(ShapeError):
        ad.backward(tape, y)


def test_tape_is_topologically_ordered():
    tape = ad.Tape()
    x = tape.leaf(np.ones((1, 1, 2, 2)), requires_grad=True)
    y = ad.upsample_nearest2(x)
    z = ad.avg_pool2(y)
    loss = ad.sum_all(z)
    ad.backward(tape, loss)
    seen = set()
    for rec in tape.records:
        for t in rec.inputs:
            if tape.is_intermediate(t):
                assert t.node_id in seen
        seen.add(rec.output.node_id)


def test_mixed_tapes_rejected():
    t1, t2 = ad.Tape(), ad.Tape()
    a = t1.leaf(np.ones(3))
    b = t2.leaf(np.ones(3))
    with pytest.raises(ValueError):
        ad.add(a, b)


def test_non_finite_input_raises():
    with pytest.raises(NonFiniteError):
        ad.Tensor(np.array([1.0, np.nan]))


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    o1 = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
    o2 = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
    assert o1.tobytes() == o2.tobytes()


# ---------------------------------------------------------------------------
# per-operator gradient checks (strict elementwise, kink-free inputs)

OPS = ["conv2d", "conv1x1", "avg_pool2", "upsample", "elu", "tanh", "fc",
       "l1_mean", "add", "scale", "concat"]


@pytest.mark.parametrize("op", OPS)
@pytest.mark.parametrize("seed", range(10))
def test_operator_gradients_match_finite_differences(op, seed):
    rng = np.random.default_rng(seed)
    params = []

    def leaf(shape, low=0.1, high=1.0):
        t = ad.Tensor(rand_away_from_zero(rng, shape, low, high), requires_grad=True)
        params.append(t)
        return t

    if op == "conv2d":
        x, w, b = leaf((1, 2, 4, 4)), leaf((2, 2, 3, 3)), leaf((2,))
        fwd = lambda tp: ad.conv2d(*[_attach(tp, t) for t in (x, w, b)])
    elif op == "conv1x1":
        x, w, b = leaf((1, 3, 3, 3)), leaf((2, 3)), leaf((2,))
        fwd = lambda tp: ad.conv1x1(*[_attach(tp, t) for t in (x, w, b)])
    elif op == "avg_pool2":
        x = leaf((1, 2, 4, 4))
        fwd = lambda tp: ad.avg_pool2(_attach(tp, x))
    elif op == "upsample":
        x = leaf((1, 2, 3, 3))
        fwd = lambda tp: ad.upsample_nearest2(_attach(tp, x))
    elif op == "elu":
        x = leaf((3, 4))
        fwd = lambda tp: ad.elu(_attach(tp, x))
    elif op == "tanh":
        x = leaf((3, 4))
        fwd = lambda tp: ad.tanh(_attach(tp, x))
    elif op == "fc":
        x, w, b = leaf((2, 3)), leaf((4, 3)), leaf((4,))
        fwd = lambda tp: ad.fully_connected(*[_attach(tp, t) for t in (x, w, b)])
    elif op == "l1_mean":
        a = leaf((2, 5))
        # keep |a - b| >= 0.2 so no sign kink sits inside the FD window
        b = ad.Tensor(a.data + rand_away_from_zero(rng, (2, 5), 0.2, 1.0),
                      requires_grad=True)
        params.append(b)
        fwd = lambda tp: ad.l1_mean(_attach(tp, a), _attach(tp, b))
    elif op == "add":
        a, b = leaf((2, 3)), leaf((2, 3))
        fwd = lambda tp: ad.add(_attach(tp, a), _attach(tp, b))
    elif op == "scale":
        a = leaf((2, 3))
        fwd = lambda tp: ad.scale(_attach(tp, a), -1.7)
    elif op == "concat":
        a, b = leaf((1, 2, 2, 2)), leaf((1, 3, 2, 2))
        fwd = lambda tp: ad.concat_channels(_attach(tp, a), _attach(tp, b))

    def build():
        tape = ad.Tape()
        out = fwd(tape)
        if out.data.size == 1:
            return tape, out
        return tape, ad.l1_mean(out, tape.leaf(np.full_like(out.data, 5.0)))

    err = ad.check_gradients(build, params, eps=1e-4)
    assert err < 1e-4, f"{op} seed {seed}: max rel err {err}"


def _attach(tape, t):
    t._tape = tape
    return t


def test_composite_net_gradients():
    # conv -> ELU -> pool -> FC chain against central differences
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 4, 4))
    w1 = ad.Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
    b1 = ad.Tensor(rng.standard_normal(3) * 0.5, requires_grad=True)
    w2 = ad.Tensor(rng.standard_normal((2, 12)) * 0.5, requires_grad=True)
    b2 = ad.Tensor(rng.standard_normal(2) * 0.5, requires_grad=True)
    params = [w1, b1, w2, b2]

    def build():
        tape = ad.Tape()
        h = ad.avg_pool2(ad.elu(ad.conv2d(tape.leaf(x), w1, b1)))
        h = ad.reshape(h, (1, 12))
        out = ad.fully_connected(h, w2, b2)
        return tape, ad.scale(ad.sum_all(out), 0.25)

    err = ad.check_gradients(build, params, eps=1e-4)
    assert err < 1e-4


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_grad_leaves_params():
    p = ad.Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    p.grad = np.zeros(2, dtype=np.float32)
    before = p.data.copy()
    ad.adam_step([p], ad.AdamState(), 0.1)
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_magnitude_and_direction():
    for g in (0.5, -2.0):
        p = ad.Tensor(np.array([0.0]), requires_grad=True)
        p.grad = np.array([g])
        ad.adam_step([p], ad.AdamState(), lr=0.01)
        # bias-corrected first step has magnitude ~ lr, direction -sign(g)
        assert float(p.data[0]) == pytest.approx(-0.01 * np.sign(g), rel=1e-6)


def test_adam_three_step_trajectory_matches_reference():
    grads = [0.7, -0.3, 1.1]
    expect = reference_adam(grads, lr=0.05)
    p = ad.Tensor(np.array([0.0]), requires_grad=True)
    state = ad.AdamState()
    got = []
    for g in grads:
        p.grad = np.array([g])
        ad.adam_step([p], state, 0.05)
        got.append(float(p.data[0]))
    np.testing.assert_allclose(got, expect, rtol=1e-12)


def test_adam_missing_grad_errors():
    p = ad.Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError, match="no grad"):
        ad.adam_step([p], ad.AdamState(), 0.1)


def test_adam_freeze_flag_bit_identical():
    rng = np.random.default_rng(8)
    frozen = ad.Tensor(rng.standard_normal(5).astype(np.float32), requires_grad=True)
    frozen.frozen = True
    live = ad.Tensor(rng.standard_normal(5).astype(np.float32), requires_grad=True)
    before = frozen.data.tobytes()
    state = ad.AdamState()
    for _ in range(7):
        frozen.grad = rng.standard_normal(5).astype(np.float32)
        live.grad = rng.standard_normal(5).astype(np.float32)
        ad.adam_step([frozen, live], state, 1e-2)
    assert frozen.data.tobytes() == before
    assert live.data.tobytes() != before
