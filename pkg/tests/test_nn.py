import numpy as np
import pytest

from pgdm import nn
from pgdm.errors import InvalidTarget, ShapeError


def straight_line_forward(net, x):
    """Independent per-unit re-implementation of the forward pass."""
    h = list(x)
    n_layers = len(net.weights)
    for i in range(n_layers):
        W, b = net.weights[i], net.biases[i]
        z = [b[j] + sum(h[k] * W[k, j] for k in range(len(h))) for j in range(W.shape[1])]
        if i < n_layers - 1:
            act = net.activations[i]
            h = [np.tanh(v) if act == "tanh" else max(v, 0.0) for v in z]
        else:
            h = z
    if net.head == "softmax":
        g = len(h) // net.head_groups
        out = []
        for k in range(net.head_groups):
            block = h[k * g:(k + 1) * g]
            m = max(block)
            e = [np.exp(v - m) for v in block]
            out += [v / sum(e) for v in e]
        h = out
    return np.array(h)


def random_net(rng, head="linear"):
    depth = int(rng.integers(0, 3))
    dims = [int(rng.integers(1, 6)) for _ in range(depth + 1)]
    groups = int(rng.integers(1, 4))
    out = groups * int(rng.integers(1, 4)) if head == "softmax" else int(rng.integers(1, 5))
    acts = tuple(rng.choice(["tanh", "relu"]) for _ in range(depth))
    net = nn.init_mlp(dims + [out], acts, head=head,
                      head_groups=groups if head == "softmax" else 1,
                      seed=int(rng.integers(1 << 30)))
    # non-zero biases so relu kinks are rarely hit exactly
    net.biases = [rng.normal(0, 0.5, size=b.shape) for b in net.biases]
    return net, dims[0], out, groups


def finite_difference(net, loss, x, t, h=1e-5):
    params = net.params()
    grads = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            for sign in (1, -1):
                q = [a.copy() for a in params]
                q[i][idx] += sign * h
                g[idx] += sign * nn.loss_value(net.with_params(q), loss, x, t)
        grads.append(g / (2 * h))
    return grads


def test_zero_net_outputs():
    net = nn.init_mlp([3, 5, 2], zero=True)
    net.biases[-1] = np.array([0.5, -1.0])
    np.testing.assert_array_equal(nn.forward(net, np.ones(3)), [0.5, -1.0])
    soft = nn.init_mlp([3, 4, 4], head="softmax", zero=True)
    np.testing.assert_allclose(nn.forward(soft, np.ones(3)), 0.25)


@pytest.mark.parametrize("seed", range(10))
def test_forward_matches_straight_line(seed):
    rng = np.random.default_rng(seed)
    head = "softmax" if seed % 2 else "linear"
    net, n_in, _, _ = random_net(rng, head)
    x = rng.normal(size=n_in)
    np.testing.assert_allclose(nn.forward(net, x), straight_line_forward(net, x),
                               rtol=0, atol=1e-12)


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        nn.forward(nn.init_mlp([3, 2]), np.ones(4))


def test_mse_zero_gradient_at_target():
    net = nn.init_mlp([3, 4, 2], seed=1)
    x = np.ones((2, 3))
    _, grads = nn.backward(net, "mse", x, nn.forward(net, x))
    assert all(np.all(g == 0) for g in grads)


def test_kl_zero_gradient_at_target():
    net = nn.init_mlp([3, 4, 6], head="softmax", head_groups=2, seed=2)
    x = np.ones((1, 3))
    _, grads = nn.backward(net, "kl", x, nn.forward(net, x))
    assert max(np.abs(g).max() for g in grads) < 1e-15


def test_kl_rejects_non_simplex_target():
    net = nn.init_mlp([2, 3], head="softmax")
    with pytest.raises(InvalidTarget):
        nn.backward(net, "kl", np.ones(2), np.array([0.5, 0.6, 0.1]))


def test_kl_value_closed_form():
    net = nn.init_mlp([2, 3], head="softmax", zero=True)
    t = np.array([[0.5, 0.5, 0.0]])
    expected = 0.5 * np.log(0.5 / (1 / 3)) * 2
    assert nn.loss_value(net, "kl", np.ones((1, 2)), t) == pytest.approx(expected)


@pytest.mark.parametrize("loss", ["mse", "kl"])
@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(loss, seed):
    rng = np.random.default_rng(1000 + seed)
    net, n_in, n_out, groups = random_net(rng, "softmax" if loss == "kl" else "linear")
    x = rng.normal(size=(3, n_in))
    if loss == "kl":
        t = rng.dirichlet(np.ones(n_out // groups), size=(3, groups)).reshape(3, n_out)
    else:
        t = rng.normal(size=(3, n_out))
    _, grads = nn.backward(net, loss, x, t)
    for g, fd in zip(grads, finite_difference(net, loss, x, t)):
        err = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)
        assert np.all(err < 1e-4)


def test_adam_zero_gradient_noop():
    p = [np.array([1.0, -2.0])]
    out = nn.adam_step(nn.AdamState(lr=0.1), p, [np.zeros(2)])
    np.testing.assert_array_equal(out[0], p[0])


def test_adam_first_step_is_sign():
    state = nn.AdamState(lr=0.01, eps=1e-12)
    out = nn.adam_step(state, [np.zeros(3)], [np.array([3.0, -0.2, 1e-3])])
    np.testing.assert_allclose(out[0], [-0.01, 0.01, -0.01], rtol=1e-6)
    assert state.step == 1


def test_adam_quadratic():
    target = np.array([1.0, -3.0, 0.5])
    p = [np.zeros(3)]
    state = nn.AdamState(lr=0.1)
    losses = []
    for _ in range(200):
        g = 2 * (p[0] - target)
        losses.append(float(np.sum((p[0] - target) ** 2)))
        p = nn.adam_step(state, p, [g])
    assert losses[-1] < 1e-4 * losses[0]
    # monotone once the first-moment estimate has warmed up
    assert np.all(np.diff(losses[:25]) < 0)


def test_serialization_roundtrip_and_determinism():
    a = nn.init_mlp([4, 8, 3], "relu", seed=5)
    b = nn.init_mlp([4, 8, 3], "relu", seed=5)
    for wa, wb in zip(a.params(), b.params()):
        np.testing.assert_array_equal(wa, wb)
    back = nn.Mlp.from_dict(a.to_dict())
    x = np.random.default_rng(0).normal(size=(5, 4))
    np.testing.assert_array_equal(nn.forward(back, x), nn.forward(a, x))
