import math

import numpy as np
import pytest

from gmarl import autodiff as ad


def fd_check(build, arrays, eps=1e-5, tol=1e-4):
    """Compare reverse-mode gradients of scalar build(*tensors) with central differences."""
    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    ad.backward(out)
    for leaf, arr in zip(leaves, arrays):

        def f():
            return float(build(*[ad.Tensor(a) for a in arrays]).data)

        num = ad.numerical_grad(f, arr, eps)
        got = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        scale = max(np.abs(num).max(), np.abs(got).max(), 1e-8)
        assert np.abs(got - num).max() / scale < tol


def test_relu_forward():
    np.testing.assert_array_equal(ad.relu(ad.Tensor([-1.0, 2.0])).data, [0, 2])


def test_gaussian_log_prob_at_mean():
    mu = np.array([0.3, -1.2, 4.0])
    out = ad.gaussian_log_prob(mu, mu, np.zeros(3)).data
    np.testing.assert_allclose(out, -0.5 * math.log(2 * math.pi))


def test_matmul_identity():
    X = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_array_equal(ad.matmul(np.eye(3), X).data, X)


def test_square_gradient():
    x = ad.Tensor(3.0, requires_grad=True)
    ad.backward(ad.mul(x, x))
    assert x.grad == 6.0


def test_sum_relu_gradient():
    x = ad.Tensor([-1.0, 2.0], requires_grad=True)
    ad.backward(ad.sum(ad.relu(x)))
    np.testing.assert_array_equal(x.grad, [0, 1])


def test_relu_subgradient_at_zero():
    x = ad.Tensor([0.0], requires_grad=True)
    ad.backward(ad.sum(ad.relu(x)))
    assert x.grad[0] == 0


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        ad.backward(ad.Tensor(np.ones(2), requires_grad=True) * ad.Tensor(np.ones(2)))


def test_shape_errors():
    with pytest.raises(ValueError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        ad.add(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        ad.concat([np.ones((2, 2)), np.ones((3, 3))], axis=-1)


def test_reused_tensor_accumulates():
    x = ad.Tensor([1.5, -2.0], requires_grad=True)
    y = ad.add(ad.mul(x, x), ad.scale(x, 3.0))
    ad.backward(ad.sum(ad.add(y, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data + 4.0)


PRIMITIVES = {
    "matmul": (lambda a, b: ad.sum(ad.tanh(ad.matmul(a, b))), [(3, 4), (4, 2)]),
    "batched_matmul": (lambda a, b: ad.sum(ad.tanh(ad.matmul(a, b))), [(4, 4), (2, 4, 3)]),
    "add_broadcast": (lambda a, b: ad.sum(ad.tanh(ad.add(a, b))), [(3, 4), (4,)]),
    "sub": (lambda a, b: ad.sum(ad.tanh(ad.sub(a, b))), [(3, 1), (3, 4)]),
    "mul": (lambda a, b: ad.sum(ad.mul(a, b)), [(2, 3), (2, 3)]),
    "scale": (lambda a: ad.sum(ad.tanh(ad.scale(a, -1.7))), [(5,)]),
    "relu": (lambda a: ad.sum(ad.mul(ad.relu(a), a)), [(6,)]),
    "tanh": (lambda a: ad.sum(ad.tanh(a)), [(6,)]),
    "softplus": (lambda a: ad.sum(ad.softplus(a)), [(6,)]),
    "exp": (lambda a: ad.sum(ad.exp(a)), [(4,)]),
    "concat": (lambda a, b: ad.sum(ad.tanh(ad.concat([a, b], axis=-1))), [(2, 3), (2, 2)]),
    "broadcast_to": (lambda a: ad.sum(ad.tanh(ad.broadcast_to(a, (3, 4, 2)))), [(3, 1, 2)]),
    "reshape": (lambda a: ad.sum(ad.tanh(ad.reshape(a, (3, 2)))), [(6,)]),
    "take": (lambda a: ad.sum(ad.tanh(ad.take(a, 1, axis=0))), [(3, 2)]),
    "sum_axis": (lambda a: ad.sum(ad.tanh(ad.sum(a, axis=1))), [(3, 4)]),
    "mean": (lambda a: ad.tanh(ad.mean(a)), [(3, 4)]),
    "gaussian_log_prob": (lambda x, m, s: ad.sum(ad.gaussian_log_prob(x, m, s)), [(5,), (5,), (5,)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    build, shapes = PRIMITIVES[name]
    for seed in range(100):
        rng = np.random.default_rng(seed)
        fd_check(build, [rng.standard_normal(s) for s in shapes])


def mlp(W1, b1, W2, b2, W3, x):
    h = ad.relu(ad.add(ad.matmul(x, W1), b1))
    h = ad.tanh(ad.add(ad.matmul(h, W2), b2))
    return ad.sum(ad.softplus(ad.matmul(h, W3)))


def test_three_layer_mlp_gradient():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shapes = [(4, 8), (8,), (8, 6), (6,), (6, 2), (3, 4)]
        fd_check(mlp, [rng.standard_normal(s) for s in shapes])


def test_backward_is_deterministic():
    rng = np.random.default_rng(0)
    arrays = [rng.standard_normal(s) for s in [(4, 8), (8,), (8, 6), (6,), (6, 2), (3, 4)]]
    grads = []
    for _ in range(2):
        leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
        ad.backward(mlp(*leaves))
        grads.append([leaf.grad.tobytes() for leaf in leaves])
    assert grads[0] == grads[1]
