import numpy as np
import pytest

from tempoproj.tensor import (Tensor, no_grad, conv2d, maxpool2d, upsample2d, leaky_relu, sigmoid,
                              tanh, stack, mse_loss, gru, pooled_extent, glorot_uniform, AdamState,
                              adam_step, gradcheck)
from tempoproj.utils import ShapeError


def gru_params(rng, d, h, scale=0.5):
    return {'W': Tensor(scale * rng.standard_normal((d, 3 * h)), requires_grad=True),
            'U': Tensor(scale * rng.standard_normal((h, 3 * h)), requires_grad=True),
            'b': Tensor(scale * rng.standard_normal(3 * h), requires_grad=True)}


def test_conv_identity_kernel():
    x = np.arange(12.0).reshape(1, 1, 3, 4)
    out = conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    assert np.array_equal(out.data, x)


def test_conv_same_padding_example():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    k = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    out = conv2d(x, k, np.zeros(1))
    assert out.shape == (1, 1, 2, 2)
    assert np.array_equal(out.data[0, 0], [[5.0, 2.0], [3.0, 4.0]])


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        conv2d(np.zeros((1, 2, 4, 4)), np.zeros((3, 1, 2, 2)), np.zeros(3))
    with pytest.raises(ShapeError):
        conv2d(np.zeros((1, 1, 4, 4)), np.zeros((3, 1, 2, 2)), np.zeros(2))


@pytest.mark.parametrize('kernel', [(1, 1), (2, 3), (3, 3), (4, 4)])
def test_conv_gradcheck(kernel):
    err = gradcheck(conv2d, [(2, 2, 5, 6), (3, 2) + kernel, (3,)], seed=1)
    assert err < 1e-4


def test_maxpool_example_and_ragged_edge():
    x = np.arange(5.0).reshape(1, 1, 5, 1)
    out = maxpool2d(x, (2, 1))
    assert out.shape == (1, 1, 3, 1)
    assert out.data.ravel().tolist() == [1.0, 3.0, 4.0]
    assert pooled_extent(5, 2) == (2, 3)
    assert pooled_extent(3, 5) == (3, 1)


def test_maxpool_gradcheck():
    err = gradcheck(lambda x: maxpool2d(x, (2, 3)), [(2, 3, 7, 8)], seed=2)
    assert err < 1e-4


def test_maxpool_gradient_goes_to_max():
    x = Tensor(np.array([[[[1.0, 5.0], [2.0, 3.0]]]]), requires_grad=True)
    maxpool2d(x, (2, 2)).sum().backward()
    assert np.array_equal(x.grad[0, 0], [[0.0, 1.0], [0.0, 0.0]])


def test_upsample_crop_and_gradcheck():
    out = upsample2d(np.array([[[[1.0, 2.0]]]]), (2, 2), out_hw=(2, 3))
    assert np.array_equal(out.data[0, 0], [[1, 1, 2], [1, 1, 2]])
    with pytest.raises(ShapeError):
        upsample2d(np.zeros((1, 1, 2, 2)), (2, 2), out_hw=(5, 4))
    err = gradcheck(lambda x: upsample2d(x, (2, 3), out_hw=(5, 7)), [(2, 2, 3, 3)], seed=3)
    assert err < 1e-4


def test_pool_then_upsample_keeps_constant():
    x = np.full((1, 2, 6, 5), 3.5)
    pooled = maxpool2d(x, (2, 2))
    back = upsample2d(pooled, (2, 2), out_hw=(6, 5))
    assert np.array_equal(back.data, x)


def test_activation_gradchecks():
    assert gradcheck(lambda x: leaky_relu(x, 0.1), [(4, 5)], seed=4) < 1e-6
    assert gradcheck(sigmoid, [(4, 5)], seed=5) < 1e-4
    assert gradcheck(tanh, [(4, 5)], seed=6) < 1e-4


def test_activation_values():
    assert np.allclose(leaky_relu(np.array([-2.0, 0.0, 3.0]), 0.1).data, [-0.2, 0.0, 3.0])
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0])).data
    assert np.all(np.isfinite(s))
    assert np.allclose(s, [0.0, 0.5, 1.0])


def test_mse_loss():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert float(mse_loss(a, np.zeros((2, 2))).data) == pytest.approx(7.5)
    assert gradcheck(mse_loss, [(3, 4), (3, 4)], seed=7) < 1e-4
    with pytest.raises(ShapeError):
        mse_loss(np.zeros(3), np.zeros(4))


def test_gru_zero_weights_give_zero_state():
    params = {'W': Tensor(np.zeros((3, 6))), 'U': Tensor(np.zeros((2, 6))), 'b': Tensor(np.zeros(6))}
    out = gru(np.ones((4, 5, 3)), 2, params)
    assert out.shape == (4, 2)
    assert np.array_equal(out.data, np.zeros((4, 2)))


def test_gru_single_step_scalar():
    wz, wr, wh = 0.3, -0.7, 1.2
    params = {'W': Tensor(np.array([[wz, wr, wh]])), 'U': Tensor(np.zeros((1, 3))), 'b': Tensor(np.zeros(3))}
    out = gru(np.ones((1, 1, 1)), 1, params)
    z = 1.0 / (1.0 + np.exp(-wz))
    assert out.data[0, 0] == pytest.approx(z * np.tanh(wh))


def test_gru_sequences_and_gradcheck():
    rng = np.random.default_rng(8)
    params = gru_params(rng, 3, 4)
    seq = gru(np.ones((2, 5, 3)), 4, params, return_sequences=True)
    assert seq.shape == (2, 5, 4)
    final = gru(np.ones((2, 5, 3)), 4, params)
    assert np.allclose(seq.data[:, -1, :], final.data)
    with pytest.raises(ShapeError):
        gru(np.ones((2, 5, 2)), 4, params)
    err = gradcheck(lambda x, W, U, b: gru(x, 4, {'W': W, 'U': U, 'b': b}, return_sequences=True),
                    [(2, 5, 3), params['W'], params['U'], params['b']], seed=9)
    assert err < 1e-4


def test_diamond_graph_accumulates():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    a = x * 2.0
    y = a * a + a
    y.sum().backward()
    # d/dx (4x^2 + 2x) = 8x + 2
    assert np.allclose(x.grad, 8 * x.data + 2)


def test_stack_index_transpose_gradcheck():
    def op(a, b):
        s = stack([a, b], axis=1)
        return s.transpose(2, 0, 1)[1:, :, :].reshape(-1)
    assert gradcheck(op, [(3, 4), (3, 4)], seed=10) < 1e-6


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y.ctx is None
    assert not y.requires_grad
    z = x * 2.0
    assert z.requires_grad


def test_glorot_uniform_limits():
    rng = np.random.default_rng(0)
    w = glorot_uniform((30, 20), 30, 20, rng)
    assert w.requires_grad
    assert np.all(np.abs(w.data) <= np.sqrt(6.0 / 50))
    again = glorot_uniform((30, 20), 30, 20, np.random.default_rng(0))
    assert np.array_equal(w.data, again.data)


def test_adam_zero_gradient_keeps_parameter():
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    p.grad = np.zeros(2)
    adam_step({'p': p}, AdamState())
    assert np.array_equal(p.data, [1.0, -1.0])


def test_adam_first_step_is_learning_rate():
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    p.grad = np.array([0.5, -3.0])
    state = AdamState()
    adam_step({'p': p}, state)
    assert state.step == 1
    assert np.allclose(p.data, [1.0 - 0.001, -1.0 + 0.001], atol=1e-8)


def test_adam_minimizes_quadratic():
    p = Tensor(np.array([5.0, -4.0, 0.0]), requires_grad=True)
    state = AdamState(lr=0.05)
    for _ in range(2000):
        p.zero_grad()
        loss = ((p - 3.0) * (p - 3.0)).sum()
        loss.backward()
        adam_step({'p': p}, state)
    assert np.allclose(p.data, 3.0, atol=0.05)


def test_small_pool_and_upsample_examples():
    assert maxpool2d(np.array([[[[1.0, 3.0], [2.0, 0.0]]]]), (2, 2)).data.tolist() == [[[[3.0]]]]
    big = maxpool2d(np.array([[[[1.0, 7.0, 2.0]]]]), (5, 5))
    assert big.shape == (1, 1, 1, 1) and big.data.item() == 7.0
    assert upsample2d(np.ones((1, 1, 1, 1)), (2, 2)).data.tolist() == [[[[1.0, 1.0], [1.0, 1.0]]]]


def test_small_activation_and_loss_examples():
    assert leaky_relu(np.array([-1.0, 2.0]), 0.1).data.tolist() == [-0.1, 2.0]
    x = np.array([0.3, -0.2])
    assert float(mse_loss(x, x).data) == 0.0
    assert float(mse_loss(np.zeros(2), np.ones(2)).data) == 1.0
