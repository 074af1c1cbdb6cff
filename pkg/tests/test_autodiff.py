import math

import numpy as np
import pytest

from affectbench.autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    conv1d,
    dropout,
    flatten,
    grad_check,
    matmul,
    maxpool1d,
    silu,
    softmax,
    softmax_cross_entropy,
    weighted_sum,
)
from affectbench.errors import NumericsError
from affectbench.gradcheck import TOLERANCE, run_gradient_checks
from affectbench.rng import Rng


def test_tensor_coerces_ints_to_float64():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64


def test_tensor_keeps_float32():
    t = Tensor(np.zeros((2, 2), dtype=np.float32))
    assert t.data.dtype == np.float32


def test_add_equal_shapes_forward_backward():
    tape = Tape()
    a = tape.watch(Tensor([[1.0, 2.0], [3.0, 4.0]]))
    b = tape.watch(Tensor([[10.0, 20.0], [30.0, 40.0]]))
    out = weighted_sum(add(a, b), np.ones((2, 2)))
    tape.backward(out)
    assert np.array_equal(tape.grad(a), np.ones((2, 2)))
    assert np.array_equal(tape.grad(b), np.ones((2, 2)))


def test_add_bias_broadcast_sums_gradient():
    tape = Tape()
    x = tape.watch(Tensor(np.zeros((2, 3, 5))))
    b = tape.watch(Tensor(np.zeros(3)))
    out = weighted_sum(add(x, b), np.ones((2, 3, 5)))
    tape.backward(out)
    assert np.array_equal(tape.grad(b), np.full(3, 10.0))


def test_add_shape_mismatch_raises():
    with pytest.raises(ValueError):
        add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_add_same_tensor_twice_doubles_gradient():
    tape = Tape()
    x = tape.watch(Tensor([1.0, 2.0]))
    out = weighted_sum(add(x, x), np.ones(2))
    tape.backward(out)
    assert np.array_equal(tape.grad(x), np.full(2, 2.0))


def test_matmul_forward_and_shape_error():
    a = Tensor([[1.0, 2.0]])
    b = Tensor([[3.0], [4.0]])
    assert np.array_equal(matmul(a, b).data, [[11.0]])
    with pytest.raises(ValueError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_conv1d_padded_example():
    x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    w = Tensor(np.array([[[1.0, 1.0, 1.0]]]))
    b = Tensor(np.zeros(1))
    out = conv1d(x, w, b, pad=1)
    assert np.array_equal(out.data, [[[3.0, 6.0, 9.0, 7.0]]])


def test_conv1d_identity_kernel_recovers_input():
    rng = Rng(4)
    x = rng.normals(2 * 3 * 9).reshape(2, 3, 9)
    w = np.zeros((3, 3, 1))
    for c in range(3):
        w[c, c, 0] = 1.0
    out = conv1d(Tensor(x), Tensor(w), Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x)


def test_conv1d_channel_mismatch_raises():
    with pytest.raises(ValueError):
        conv1d(Tensor(np.zeros((1, 2, 8))), Tensor(np.zeros((4, 3, 3))),
               Tensor(np.zeros(4)))


def test_conv1d_kernel_longer_than_input_raises():
    with pytest.raises(ValueError):
        conv1d(Tensor(np.zeros((1, 1, 2))), Tensor(np.zeros((1, 1, 5))),
               Tensor(np.zeros(1)))


def test_maxpool_halves_length_and_takes_max():
    x = Tensor(np.array([[[1.0, 5.0, 2.0, 2.0, -3.0, -1.0]]]))
    out = maxpool1d(x, 2)
    assert np.array_equal(out.data, [[[5.0, 2.0, -1.0]]])


def test_maxpool_tie_routes_gradient_to_first():
    tape = Tape()
    x = tape.watch(Tensor(np.array([[[2.0, 2.0]]])))
    out = weighted_sum(maxpool1d(x, 2), np.ones((1, 1, 1)))
    tape.backward(out)
    assert np.array_equal(tape.grad(x), [[[1.0, 0.0]]])


def test_maxpool_drops_trailing_remainder():
    x = Tensor(np.array([[[1.0, 4.0, 3.0, 2.0, 99.0]]]))
    out = maxpool1d(x, 2)
    assert np.array_equal(out.data, [[[4.0, 3.0]]])


def test_silu_known_values():
    x = Tensor(np.array([0.0, 1.0, -1.0]))
    out = silu(x).data
    assert out[0] == 0.0
    assert out[1] == pytest.approx(0.7310585786300049, abs=1e-12)
    sig = 1.0 / (1.0 + math.exp(1.0))
    assert out[2] == pytest.approx(-sig, abs=1e-12)


def test_dropout_eval_is_identity_object():
    x = Tensor(np.ones((2, 3)))
    assert dropout(x, 0.5, "eval") is x
    assert dropout(x, 0.0, "train", Rng(0)) is x


def test_dropout_train_scales_survivors():
    x = Tensor(np.ones(10_000))
    out = dropout(x, 0.25, "train", Rng(9)).data
    kept = out != 0.0
    assert set(np.unique(out[kept])) == {1.0 / 0.75}
    assert abs(kept.mean() - 0.75) < 0.02


def test_dropout_same_rng_same_mask():
    x = Tensor(np.ones(64))
    a = dropout(x, 0.5, "train", Rng(77)).data
    b = dropout(x, 0.5, "train", Rng(77)).data
    assert np.array_equal(a, b)


def test_dropout_argument_validation():
    x = Tensor(np.ones(4))
    with pytest.raises(ValueError):
        dropout(x, 1.0, "train", Rng(0))
    with pytest.raises(ValueError):
        dropout(x, -0.1, "train", Rng(0))
    with pytest.raises(ValueError):
        dropout(x, 0.5, "training", Rng(0))
    with pytest.raises(ValueError):
        dropout(x, 0.5, "train", None)


def test_flatten_shape_and_order():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    out = flatten(x)
    assert out.data.shape == (2, 12)
    assert np.array_equal(out.data[0], np.arange(12.0))


def test_softmax_cross_entropy_uniform_is_ln3():
    loss = softmax_cross_entropy(Tensor(np.zeros((4, 3))),
                                 np.array([0, 1, 2, 0]))
    assert loss.item() == pytest.approx(math.log(3.0), abs=1e-12)


def test_softmax_cross_entropy_peaked_logits():
    loss = softmax_cross_entropy(Tensor(np.array([[10.0, 0.0, 0.0]])),
                                 np.array([0]))
    want = math.log1p(2.0 * math.exp(-10.0))
    assert loss.item() == pytest.approx(want, rel=1e-9)


def test_softmax_cross_entropy_shift_invariance():
    rng = Rng(2)
    logits = rng.normals(15).reshape(5, 3)
    targets = np.array([0, 1, 2, 1, 0])
    a = softmax_cross_entropy(Tensor(logits), targets).item()
    b = softmax_cross_entropy(Tensor(logits + 1000.0), targets).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_softmax_cross_entropy_target_validation():
    logits = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        softmax_cross_entropy(logits, np.array([0, 3]))
    with pytest.raises(ValueError):
        softmax_cross_entropy(logits, np.array([-1, 0]))
    with pytest.raises(ValueError):
        softmax_cross_entropy(logits, np.array([0]))


def test_softmax_rows_sum_to_one():
    rng = Rng(31)
    p = softmax(rng.normals(12).reshape(4, 3))
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert p.min() > 0.0


def test_weighted_sum_gradient_is_weights():
    tape = Tape()
    x = tape.watch(Tensor(np.ones((2, 3))))
    w = np.arange(6.0).reshape(2, 3)
    tape.backward(weighted_sum(x, w))
    assert np.array_equal(tape.grad(x), w)


def test_weighted_sum_shape_mismatch():
    with pytest.raises(ValueError):
        weighted_sum(Tensor(np.ones((2, 3))), np.ones(6))


def test_backward_requires_scalar_loss():
    tape = Tape()
    x = tape.watch(Tensor(np.ones(3)))
    y = add(x, x)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_backward_rejects_foreign_loss():
    tape = Tape()
    other = Tape()
    x = other.watch(Tensor(np.ones(1)))
    y = weighted_sum(x, np.ones(1))
    with pytest.raises(ValueError):
        tape.backward(y)
    # the free function dispatches to the loss's own tape
    backward(y)
    assert np.array_equal(other.grad(x), np.ones(1))


def test_untracked_backward_raises():
    loss = weighted_sum(Tensor(np.ones(1)), np.ones(1))
    with pytest.raises(ValueError):
        backward(loss)


def test_watch_rejects_cross_tape_tensor():
    a = Tape()
    b = Tape()
    x = a.watch(Tensor(np.ones(1)))
    with pytest.raises(ValueError):
        b.watch(x)


def test_mixed_tape_operands_raise():
    a = Tape()
    b = Tape()
    x = a.watch(Tensor(np.ones(2)))
    y = b.watch(Tensor(np.ones(2)))
    with pytest.raises(ValueError):
        add(x, y)


def test_independent_tapes_do_not_interfere():
    t1 = Tape()
    t2 = Tape()
    x1 = t1.watch(Tensor(np.array([2.0])))
    x2 = t2.watch(Tensor(np.array([5.0])))
    l1 = weighted_sum(silu(x1), np.ones(1))
    l2 = weighted_sum(silu(x2), np.ones(1))
    t2.backward(l2)
    t1.backward(l1)
    assert tape_grad_scalar(t1, x1) != tape_grad_scalar(t2, x2)


def tape_grad_scalar(tape, t):
    return float(tape.grad(t)[0])


def test_grad_check_suite_within_tolerance():
    results = run_gradient_checks(seed=0)
    for name, err in results.items():
        assert err <= TOLERANCE, f"{name}: {err}"


def test_grad_check_catches_wrong_gradient():
    # A deliberately broken op: forward x^2 but adjoint claims 3x.
    def broken(p):
        x = p[0]
        out = Tensor(x.data * x.data)
        if x.tape is not None:
            xn = x.node

            def bwd(g, grads):
                grads[xn] = g * 3.0 * x.data

            out.tape = x.tape
            out.node = x.tape._record(bwd)
        return weighted_sum(out, np.ones(3))

    err = grad_check(broken, [np.array([1.0, 2.0, -1.5])])
    assert err > 0.1


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        grad_check(lambda p: weighted_sum(p[0], np.ones(1)),
                   [np.ones(1)], eps=0.0)


def test_grad_check_nonfinite_objective_raises():
    def f(p):
        out = Tensor(np.array(np.inf))
        out.tape = p[0].tape
        if out.tape is not None:
            out.node = out.tape._record(lambda g, grads: None)
        return out

    with pytest.raises(NumericsError):
        grad_check(f, [np.ones(1)])
