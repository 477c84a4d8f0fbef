"""Operation-level checks: worked examples, loop oracles, finite differences."""

import numpy as np
import pytest

import oracles
from viewmotion.autodiff import ShapeError, Tape, Tensor, ops


def run_tape(build):
    with Tape() as tape:
        loss = build()
    tape.backward(loss)
    return loss, tape


def max_rel_grad_error(build, wrt, eps=1e-6):
    """Tape gradients vs central differences; returns the worst rel error."""
    for t in wrt:
        t.grad = None
    run_tape(build)

    def value():
        return float(build().data)

    worst = 0.0
    for t in wrt:
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        num = oracles.fd_grad(value, t.data, eps)
        worst = max(worst, oracles.rel_error(ana, num))
    return worst


def randt(rng, *shape, requires_grad=True):
    return Tensor(rng.normal(size=shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# elementwise and reductions


def test_add_mul_shapes_must_match():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        ops.add(a, b)
    with pytest.raises(ShapeError):
        ops.mul(a, b)


def test_elementwise_gradients():
    rng = np.random.default_rng(0)
    a = randt(rng, 4, 3)
    b = randt(rng, 4, 3)
    err = max_rel_grad_error(
        lambda: ops.sum_all(ops.mul(ops.add(a, b), ops.sub(a, ops.scale(b, 0.7)))),
        [a, b],
    )
    assert err <= 1e-6


def test_sum_all_gradient_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    run_tape(lambda: ops.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_pointwise_values():
    x = Tensor(np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(ops.relu(x).data, [0.0, 0.0, 2.0])
    assert ops.sigmoid(Tensor(np.array(0.0))).data == 0.5
    assert ops.tanh(Tensor(np.array(0.0))).data == 0.0


def test_pointwise_sigmoid_extreme_inputs_finite():
    x = Tensor(np.array([-1e4, 1e4]))
    y = ops.sigmoid(x).data
    assert np.all(np.isfinite(y))
    assert y[0] == pytest.approx(0.0, abs=1e-300)
    assert y[1] == pytest.approx(1.0)


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh"])
def test_pointwise_gradients(kind):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 7))
    # keep relu inputs away from the kink where central differences lie
    x = x + np.sign(x) * 0.05
    xt = Tensor(x, requires_grad=True)
    err = max_rel_grad_error(lambda: ops.sum_all(ops.pointwise(xt, kind)), [xt])
    assert err <= 1e-6


def test_pointwise_unknown_kind():
    with pytest.raises(ValueError):
        ops.pointwise(Tensor(np.zeros(3)), "gelu")


def test_softmax_rows_sum_to_one_and_gradcheck():
    rng = np.random.default_rng(11)
    x = randt(rng, 4, 6)
    y = ops.softmax(x)
    assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)
    w = Tensor(rng.normal(size=(4, 6)))
    err = max_rel_grad_error(lambda: ops.sum_all(ops.mul(ops.softmax(x), w)), [x])
    assert err <= 1e-6


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_scalar_kernel_scales():
    x = Tensor(np.ones((1, 3, 3)))
    w = Tensor(np.full((1, 1, 1, 1), 2.0))
    out = ops.conv2d(x, w)
    assert np.array_equal(out.data, np.full((1, 3, 3), 2.0))


def test_conv2d_zero_weights_zero_output():
    rng = np.random.default_rng(1)
    x = randt(rng, 2, 5, 5, requires_grad=False)
    w = Tensor(np.zeros((3, 2, 3, 3)))
    b = Tensor(np.zeros(3))
    assert np.array_equal(ops.conv2d(x, w, b, 1, 1).data, np.zeros((3, 5, 5)))


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    want = oracles.conv2d_loops(x, w, b, stride=2, padding=1)
    assert np.max(np.abs(got - want)) <= 1e-12


def test_conv2d_batched_matches_loop_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 2, 6, 5))
    w = rng.normal(size=(4, 2, 3, 2))
    got = ops.conv2d(Tensor(x), Tensor(w), None, stride=1, padding=0).data
    want = oracles.conv2d_loops(x, w, None, stride=1, padding=0)
    assert got.shape == (3, 4, 4, 4)
    assert np.max(np.abs(got - want)) <= 1e-12


def test_conv2d_gradients():
    rng = np.random.default_rng(5)
    x = randt(rng, 2, 2, 5, 5)
    w = randt(rng, 3, 2, 3, 3)
    b = randt(rng, 3)
    err = max_rel_grad_error(
        lambda: ops.sum_all(ops.tanh(ops.conv2d(x, w, b, stride=2, padding=1))),
        [x, w, b],
    )
    assert err <= 1e-4


def test_conv2d_channel_mismatch_names_both_shapes():
    x = Tensor(np.zeros((1, 4, 4, 4)))
    w = Tensor(np.zeros((2, 3, 3, 3)))
    with pytest.raises(ShapeError) as exc:
        ops.conv2d(x, w)
    assert "(1, 4, 4, 4)" in str(exc.value) and "(2, 3, 3, 3)" in str(exc.value)


def test_conv2d_kernel_larger_than_padded_input():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


def test_conv2d_bad_stride():
    with pytest.raises(ValueError):
        ops.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=0)


# ---------------------------------------------------------------------------
# conv_transpose2d


def test_conv_transpose2d_single_pixel_spreads_kernel():
    x = Tensor(np.ones((1, 1, 1)))
    w = Tensor(np.ones((1, 1, 2, 2)))
    out = ops.conv_transpose2d(x, w, stride=2)
    assert np.array_equal(out.data, np.ones((1, 2, 2)))


def test_conv_transpose2d_zero_input():
    w = Tensor(np.ones((2, 3, 4, 4)))
    out = ops.conv_transpose2d(Tensor(np.zeros((2, 3, 3))), w, stride=2, padding=1)
    assert out.shape == (3, 6, 6)
    assert not out.data.any()


def test_conv_transpose2d_matches_scatter_oracle():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 3, 4, 4))
    w = rng.normal(size=(3, 5, 4, 4))
    b = rng.normal(size=5)
    got = ops.conv_transpose2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    want = oracles.conv_transpose2d_loops(x, w, b, stride=2, padding=1)
    assert got.shape == (2, 5, 8, 8)
    assert np.max(np.abs(got - want)) <= 1e-12


def test_conv_transpose2d_input_grad_is_conv_forward():
    # upstream gradient convolved with the kernel (swapped roles) gives grad_x
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
    w = rng.normal(size=(2, 4, 3, 3))
    with Tape() as tape:
        y = ops.conv_transpose2d(x, Tensor(w), stride=2, padding=1)
        loss = ops.sum_all(y)
    tape.backward(loss)
    ones = np.ones(y.shape)
    # viewed as a conv weight, w already maps the 4 upstream channels back to 2
    want = oracles.conv2d_loops(ones, w, None, stride=2, padding=1)
    assert np.max(np.abs(x.grad - want)) <= 1e-12


def test_conv_transpose2d_gradients():
    rng = np.random.default_rng(8)
    x = randt(rng, 2, 2, 3, 3)
    w = randt(rng, 2, 3, 4, 4)
    b = randt(rng, 3)
    err = max_rel_grad_error(
        lambda: ops.sum_all(
            ops.sigmoid(ops.conv_transpose2d(x, w, b, stride=2, padding=1))
        ),
        [x, w, b],
    )
    assert err <= 1e-4


def test_conv_transpose2d_collapsed_output():
    with pytest.raises(ShapeError):
        ops.conv_transpose2d(
            Tensor(np.zeros((1, 1, 1))), Tensor(np.zeros((1, 1, 2, 2))), padding=1
        )


# ---------------------------------------------------------------------------
# linear


def test_linear_identity_and_bias():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    eye = Tensor(np.eye(3))
    assert np.array_equal(ops.linear(x, eye).data, x.data)
    b = Tensor(np.array([1.0, 2.0]))
    out = ops.linear(x, Tensor(np.zeros((2, 3))), b)
    assert np.array_equal(out.data, np.tile([1.0, 2.0], (2, 1)))


def test_linear_matches_loop_oracle():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 7))
    w = rng.normal(size=(3, 7))
    b = rng.normal(size=3)
    got = ops.linear(Tensor(x), Tensor(w), Tensor(b)).data
    assert np.max(np.abs(got - oracles.linear_loops(x, w, b))) <= 1e-12


def test_linear_gradients():
    rng = np.random.default_rng(10)
    x = randt(rng, 4, 5)
    w = randt(rng, 3, 5)
    b = randt(rng, 3)
    err = max_rel_grad_error(
        lambda: ops.sum_all(ops.relu(ops.linear(x, w, b))), [x, w, b]
    )
    assert err <= 1e-4


def test_linear_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


# ---------------------------------------------------------------------------
# batch_norm


def bn_args(c):
    return Tensor(np.ones(c), requires_grad=True), Tensor(np.zeros(c), requires_grad=True)


def test_batch_norm_constant_input_is_zero():
    gamma, beta = bn_args(2)
    x = Tensor(np.full((3, 2, 4, 4), 5.0))
    rm, rv = np.zeros(2), np.ones(2)
    out = ops.batch_norm(x, gamma, beta, rm, rv, training=True)
    assert np.allclose(out.data, 0.0, atol=1e-6)


def test_batch_norm_zero_gamma_broadcasts_beta():
    rng = np.random.default_rng(12)
    x = Tensor(rng.normal(size=(2, 3, 4, 4)))
    gamma = Tensor(np.zeros(3))
    beta = Tensor(np.array([1.0, -2.0, 0.5]))
    out = ops.batch_norm(x, gamma, beta, np.zeros(3), np.ones(3), training=True)
    assert np.allclose(out.data, beta.data.reshape(1, 3, 1, 1), atol=1e-12)


def test_batch_norm_normalizes_per_channel():
    rng = np.random.default_rng(13)
    x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(4, 2, 6, 6)))
    gamma = Tensor(np.array([1.5, 0.5]))
    beta = Tensor(np.array([-1.0, 2.0]))
    out = ops.batch_norm(x, gamma, beta, np.zeros(2), np.ones(2), training=True).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), beta.data, atol=1e-10)
    # the eps variance floor shifts the result by ~eps/var
    assert np.allclose(out.var(axis=(0, 2, 3)), gamma.data**2, rtol=1e-4)


def test_batch_norm_running_stats_update():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(3, 2, 4, 4))
    rm, rv = np.zeros(2), np.ones(2)
    ops.batch_norm(Tensor(x), *bn_args(2), rm, rv, training=True, momentum=0.1)
    m = 3 * 4 * 4
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3)) * m / (m - 1)
    assert np.allclose(rm, 0.1 * mean, atol=1e-12)
    assert np.allclose(rv, 0.9 + 0.1 * var, atol=1e-12)


def test_batch_norm_train_gradients():
    rng = np.random.default_rng(15)
    x = randt(rng, 3, 2, 4, 4)
    gamma = Tensor(rng.normal(size=2) + 1.0, requires_grad=True)
    beta = Tensor(rng.normal(size=2), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 4, 4)))
    rm, rv = np.zeros(2), np.ones(2)
    err = max_rel_grad_error(
        lambda: ops.sum_all(
            ops.mul(ops.batch_norm(x, gamma, beta, rm, rv, training=True), w)
        ),
        [x, gamma, beta],
    )
    assert err <= 1e-4


def test_batch_norm_eval_gradients():
    rng = np.random.default_rng(16)
    x = randt(rng, 2, 3, 3, 3)
    gamma = Tensor(rng.normal(size=3), requires_grad=True)
    beta = Tensor(rng.normal(size=3), requires_grad=True)
    rm = rng.normal(size=3)
    rv = rng.uniform(0.5, 2.0, size=3)
    err = max_rel_grad_error(
        lambda: ops.sum_all(
            ops.tanh(ops.batch_norm(x, gamma, beta, rm, rv, training=False))
        ),
        [x, gamma, beta],
    )
    assert err <= 1e-4


def test_batch_norm_needs_two_values_per_channel():
    with pytest.raises(ShapeError):
        ops.batch_norm(
            Tensor(np.zeros((1, 2, 1, 1))), *bn_args(2), np.zeros(2), np.ones(2), True
        )


# ---------------------------------------------------------------------------
# structural ops


def test_concat_channels_order_and_values():
    a = Tensor(np.ones((1, 2, 2)))
    b = Tensor(np.full((1, 2, 2), 2.0))
    out = ops.concat_channels(a, b)
    assert np.array_equal(out.data[0], np.ones((2, 2)))
    assert np.array_equal(out.data[1], np.full((2, 2), 2.0))


def test_concat_channels_gradient_routing():
    a = Tensor(np.zeros((2, 3, 3)), requires_grad=True)
    b = Tensor(np.zeros((1, 3, 3)), requires_grad=True)
    run_tape(lambda: ops.sum_all(ops.concat_channels(a, b)))
    assert np.array_equal(a.grad, np.ones((2, 3, 3)))
    assert np.array_equal(b.grad, np.ones((1, 3, 3)))


def test_concat_channels_rejects_mismatch():
    with pytest.raises(ShapeError):
        ops.concat_channels(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 3, 3))))
    with pytest.raises(ShapeError):
        ops.concat_channels(Tensor(np.zeros((1, 0, 2, 2))), Tensor(np.zeros((1, 1, 2, 2))))


def test_channel_slice_roundtrip_gradient():
    rng = np.random.default_rng(17)
    x = randt(rng, 2, 5, 3, 3)
    w = Tensor(rng.normal(size=(2, 2, 3, 3)))
    err = max_rel_grad_error(
        lambda: ops.sum_all(ops.mul(ops.channel_slice(x, 1, 3), w)), [x]
    )
    assert err <= 1e-6
    with pytest.raises(ShapeError):
        ops.channel_slice(x, 3, 3)


def test_gather_rows_accumulates_repeats():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    run_tape(lambda: ops.sum_all(ops.gather_rows(x, [0, 0, 2])))
    assert np.array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_stack_rows_and_reshape_gradients():
    rng = np.random.default_rng(18)
    a = randt(rng, 2, 3)
    b = randt(rng, 2, 3)
    err = max_rel_grad_error(
        lambda: ops.sum_all(
            ops.mul(
                ops.reshape(ops.stack_rows([a, b]), (4, 3)),
                Tensor(np.arange(12.0).reshape(4, 3)),
            )
        ),
        [a, b],
    )
    assert err <= 1e-6


# ---------------------------------------------------------------------------
# losses


def test_mse_loss_values():
    p = Tensor(np.ones(4))
    t = Tensor(np.zeros(4))
    assert ops.mse_loss(p, p, "sum").item() == 0.0
    assert ops.mse_loss(p, t, "sum").item() == 4.0
    assert ops.mse_loss(p, t, "mean").item() == 1.0
    with pytest.raises(ShapeError):
        ops.mse_loss(p, Tensor(np.zeros(3)))
    with pytest.raises(ValueError):
        ops.mse_loss(p, t, "median")


@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_mse_loss_gradients(reduction):
    rng = np.random.default_rng(19)
    p = randt(rng, 3, 4)
    t = randt(rng, 3, 4)
    err = max_rel_grad_error(lambda: ops.mse_loss(p, t, reduction), [p, t])
    assert err <= 1e-6


def test_softmax_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((3, 5)))
    loss = ops.softmax_cross_entropy(logits, [0, 2, 4], "sum")
    assert loss.item() == pytest.approx(3 * np.log(5.0), abs=1e-12)
    loss = ops.softmax_cross_entropy(logits, [0, 2, 4], "mean")
    assert loss.item() == pytest.approx(np.log(5.0), abs=1e-12)


def test_softmax_cross_entropy_confident_logit():
    logits = np.zeros((1, 4))
    logits[0, 1] = 1000.0
    loss = ops.softmax_cross_entropy(Tensor(logits), [1])
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_softmax_cross_entropy_gradient_formula():
    rng = np.random.default_rng(20)
    logits = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    labels = [1, 0, 4, 2]
    run_tape(lambda: ops.softmax_cross_entropy(logits, labels, "sum"))
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    soft = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    onehot = np.zeros((4, 5))
    onehot[np.arange(4), labels] = 1.0
    assert np.max(np.abs(logits.grad - (soft - onehot))) <= 1e-12
    logits.grad = None
    err = max_rel_grad_error(
        lambda: ops.softmax_cross_entropy(logits, labels, "sum"), [logits]
    )
    assert err <= 1e-6


def test_softmax_cross_entropy_label_range():
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [-1, 0])


# ---------------------------------------------------------------------------
# gradient reversal


def test_grad_reverse_forward_is_bitwise_identity():
    rng = np.random.default_rng(21)
    x = Tensor(rng.normal(size=(3, 4)))
    y = ops.grad_reverse(x, 1.0)
    assert y.data is x.data


def test_grad_reverse_negates_exactly():
    rng = np.random.default_rng(22)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 4)))
    with Tape() as tape:
        plain = ops.sum_all(ops.mul(x, w))
    tape.backward(plain)
    g_plain = x.grad.copy()
    x.grad = None
    with Tape() as tape:
        reversed_loss = ops.sum_all(ops.mul(ops.grad_reverse(x, 1.0), w))
    tape.backward(reversed_loss)
    assert np.array_equal(x.grad, -g_plain)


def test_grad_reverse_lambda_scales():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        y = ops.scale(ops.grad_reverse(x, 0.5), 2.0)
        loss = ops.sum_all(y)
    tape.backward(loss)
    assert x.grad[0] == -1.0
