"""
Small dense networks in numpy: forward pass, exact reverse-mode gradients
for MSE and KL losses, and Adam.

Weights are stored input-major, ``W[l]`` has shape (in, out), so a batch of
row vectors propagates as ``h @ W + b``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, InvalidTarget, ShapeError

KL_EPS = 1e-12
ACTIVATIONS = ("tanh", "relu")
HEADS = ("linear", "softmax")


@dataclass
class Mlp:
    weights: list
    biases: list
    activations: tuple
    head: str = "linear"
    head_groups: int = 1  # softmax is applied independently to each group

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix")
        for w0, w1 in zip(self.weights, self.weights[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ShapeError(f"layer dims do not chain: {w0.shape} -> {w1.shape}")
        if len(self.activations) != len(self.weights) - 1:
            raise ShapeError("need one activation per hidden layer")
        if self.head not in HEADS:
            raise InvalidInput(f"unknown head {self.head!r}")
        if self.weights[-1].shape[1] % self.head_groups:
            raise ShapeError("output width must be divisible by head_groups")

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params):
        return Mlp(list(params[0::2]), list(params[1::2]), self.activations,
                   self.head, self.head_groups)

    def copy(self):
        return self.with_params([p.copy() for p in self.params()])

    def to_dict(self):
        return {
            "layer_dims": self.layer_dims,
            "activations": list(self.activations),
            "head": self.head,
            "head_groups": self.head_groups,
            "params": [p.ravel().tolist() for p in self.params()],
        }

    @classmethod
    def from_dict(cls, obj):
        dims = obj["layer_dims"]
        flat = obj["params"]
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            weights.append(np.asarray(flat[2 * i], dtype=float).reshape(a, b))
            biases.append(np.asarray(flat[2 * i + 1], dtype=float).reshape(b))
        return cls(weights, biases, tuple(obj["activations"]), obj["head"],
                   int(obj["head_groups"]))


def init_mlp(layer_dims, activation="tanh", head="linear", head_groups=1, seed=0,
             zero=False):
    """Glorot-normal initialized network; ``zero=True`` gives all-zero parameters."""
    if len(layer_dims) < 2:
        raise ShapeError("need at least input and output dims")
    n_hidden = len(layer_dims) - 2
    if isinstance(activation, str):
        activation = (activation,) * n_hidden
    activation = tuple(activation)
    for act in activation:
        if act not in ACTIVATIONS:
            raise InvalidInput(f"unknown activation {act!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for a, b in zip(layer_dims, layer_dims[1:]):
        if zero:
            weights.append(np.zeros((a, b)))
        else:
            weights.append(rng.normal(0.0, np.sqrt(2.0 / (a + b)), size=(a, b)))
        biases.append(np.zeros(b))
    return Mlp(weights, biases, activation, head, head_groups)


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name, z, a):
    return 1.0 - a * a if name == "tanh" else (z > 0).astype(float)


def _log_softmax_groups(z, groups):
    zz = z.reshape(z.shape[0], groups, -1)
    zz = zz - zz.max(axis=2, keepdims=True)
    return (zz - np.log(np.exp(zz).sum(axis=2, keepdims=True))).reshape(z.shape)


def _forward(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.layer_dims[0]:
        raise ShapeError(f"input width {x.shape[1]} != {net.layer_dims[0]}")
    pre, post = [], [x]
    h = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        if i < len(net.activations):
            h = _act(net.activations[i], z)
            post.append(h)
    logits = pre[-1]
    if net.head == "softmax":
        out = np.exp(_log_softmax_groups(logits, net.head_groups))
    else:
        out = logits
    return out, single, pre, post


def forward(net, x):
    """Evaluate ``net`` on a vector or a batch of row vectors."""
    out, single, _, _ = _forward(net, x)
    return out[0] if single else out


def check_simplex_target(target, groups, atol=1e-6):
    t = np.asarray(target, dtype=float)
    tt = t.reshape(t.shape[0] if t.ndim == 2 else 1, groups, -1)
    if np.any(tt < -atol) or not np.allclose(tt.sum(axis=2), 1.0, atol=atol):
        raise InvalidTarget("KL target must be a simplex vector for every output step")


def loss_value(net, loss, x, target):
    out, _, pre, _ = _forward(net, x)
    target = np.atleast_2d(np.asarray(target, dtype=float))
    return _loss(net, loss, out, pre[-1], target)[0]


def _loss(net, loss, out, logits, target):
    n = out.shape[0]
    if loss == "mse":
        diff = out - target
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    if loss == "kl":
        if net.head != "softmax":
            raise InvalidInput("KL loss needs a softmax head")
        check_simplex_target(target, net.head_groups)
        logq = _log_softmax_groups(logits, net.head_groups)
        logt = np.log(np.maximum(target, KL_EPS))
        value = float(np.sum(target * (logt - logq)) / n)
        # d/dlogits of sum_h KL(t_h || softmax(z_h)) = (sum t_h) q_h - t_h
        g = target.shape[1] // net.head_groups
        tsum = target.reshape(n, net.head_groups, g).sum(axis=2, keepdims=True)
        q = out.reshape(n, net.head_groups, g)
        dlogits = (tsum * q).reshape(out.shape) - target
        return value, dlogits / n
    raise InvalidInput(f"unknown loss {loss!r}")


def backward(net, loss, x, target):
    """Loss value and exact gradients of the batch-mean loss.

    ``loss`` is ``"mse"`` (mean over all entries) or ``"kl"``
    (KL(target || output) summed over softmax groups, averaged over the
    batch; requires a softmax head). Gradients are returned in the order of
    ``net.params()``.
    """
    out, _, pre, post = _forward(net, x)
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if target.shape != out.shape:
        raise ShapeError(f"target shape {target.shape} != output shape {out.shape}")
    if loss == "mse" and net.head != "linear":
        raise InvalidInput("MSE is defined on the linear head only")
    value, delta = _loss(net, loss, out, pre[-1], target)
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = post[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * _act_grad(
                net.activations[i - 1], pre[i - 1], post[i])
    return value, grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default=None, repr=False)
    v: list = field(default=None, repr=False)


def adam_step(state, params, grads):
    """One bias-corrected Adam update; returns new parameter arrays.

    ``state`` is advanced in place.
    """
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out
