"""Layers, activations, losses, Adam, and gradient checking.

The building block is ``DenseLayer`` (affine + activation) and ``MLPBlock``
(a chain of dense layers). Blocks cache forward intermediates only in
training mode; ``backward`` replays the chain rule exactly and leaves
parameter gradients on each layer. ``BlockAdam`` then applies Adam with
bias correction per parameter tensor.

``finite_diff_loss_grads`` / ``grad_check_block`` implement the central
finite-difference oracle used throughout the test suite: relative errors
are measured as ``|a - n| / max(1, |a|, |n|)`` so that roundoff-scale
gradients do not inflate the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StateError
from .linalg import DTYPE, Matrix, Rng, he_normal_init, matmul


def _vectorize(fn):
    """Run fn on an array view of x; return a scalar if x was one."""

    def wrapped(x):
        a = np.asarray(x, dtype=DTYPE)
        scalar = a.ndim == 0
        out = fn(a.reshape(1) if scalar else a)
        return float(out[0]) if scalar else out

    return wrapped


@_vectorize
def elu(x):
    """Exponential linear unit with alpha = 1: x for x > 0, exp(x) - 1 below."""
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


@_vectorize
def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


@_vectorize
def sigmoid(x):
    """Logistic function, computed piecewise so large |x| cannot overflow."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad_from_output(out):
    return out * (1.0 - out)


def softmax(z: Matrix) -> Matrix:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class _Identity:
    name = "identity"

    def value(self, z):
        return z

    def backward(self, grad_out, z, out):
        return grad_out


class _Elu:
    name = "elu"

    def value(self, z):
        return elu(z)

    def backward(self, grad_out, z, out):
        return grad_out * elu_grad(z)


class _Sigmoid:
    name = "sigmoid"

    def value(self, z):
        return sigmoid(z)

    def backward(self, grad_out, z, out):
        return grad_out * sigmoid_grad_from_output(out)


class _Softmax:
    # Row-wise softmax; backward is the exact Jacobian-vector product.
    name = "softmax"

    def value(self, z):
        return softmax(z)

    def backward(self, grad_out, z, out):
        inner = (grad_out * out).sum(axis=1, keepdims=True)
        return out * (grad_out - inner)


ACTIVATIONS = {a.name: a for a in (_Identity(), _Elu(), _Sigmoid(), _Softmax())}


class DenseLayer:
    """Affine map plus activation.

    W has shape (fan_in, fan_out), bias (1, fan_out). Forward in training
    mode caches (input, pre-activation, output) for the backward pass;
    evaluation-mode forward clears the cache.
    """

    def __init__(self, fan_in: int, fan_out: int, activation: str = "identity",
                 rng: Rng | None = None, W: Matrix | None = None,
                 bias: Matrix | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if W is None:
            if rng is None:
                raise ValueError("need an rng when W is not given")
            W = he_normal_init(fan_in, fan_out, rng)
        W = np.asarray(W, dtype=DTYPE)
        if W.shape != (fan_in, fan_out):
            raise ShapeError(f"W shape {W.shape} != ({fan_in}, {fan_out})")
        if bias is None:
            bias = np.zeros((1, fan_out), dtype=DTYPE)
        bias = np.asarray(bias, dtype=DTYPE).reshape(1, fan_out)
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.activation = activation
        self.W = W
        self.bias = bias
        self.grad_W: Matrix | None = None
        self.grad_b: Matrix | None = None
        self._cache: tuple[Matrix, Matrix, Matrix] | None = None

    def forward(self, x: Matrix, train: bool = False) -> Matrix:
        z = matmul(x, self.W) + self.bias
        out = ACTIVATIONS[self.activation].value(z)
        self._cache = (x, z, out) if train else None
        return out

    def backward(self, grad_out: Matrix) -> Matrix:
        if self._cache is None:
            raise StateError("backward without a prior training-mode forward")
        x, z, out = self._cache
        if grad_out.shape != out.shape:
            raise ShapeError(
                f"upstream gradient shape {grad_out.shape} != {out.shape}")
        dz = ACTIVATIONS[self.activation].backward(grad_out, z, out)
        self.grad_W = x.T @ dz
        self.grad_b = dz.sum(axis=0, keepdims=True)
        return dz @ self.W.T

    def param_count(self) -> int:
        return self.W.size + self.bias.size


class MLPBlock:
    """Ordered chain of dense layers with matching inner dimensions."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ShapeError("a block needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.fan_out != b.fan_in:
                raise ShapeError(
                    f"layer dims do not chain: {a.fan_out} -> {b.fan_in}")
        self.layers = layers

    @property
    def fan_in(self) -> int:
        return self.layers[0].fan_in

    @property
    def fan_out(self) -> int:
        return self.layers[-1].fan_out

    def forward(self, x: Matrix, train: bool = False) -> Matrix:
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad_out: Matrix) -> Matrix:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def param_arrays(self) -> list[Matrix]:
        out = []
        for layer in self.layers:
            out.append(layer.W)
            out.append(layer.bias)
        return out

    def grad_arrays(self) -> list[Matrix | None]:
        out = []
        for layer in self.layers:
            out.append(layer.grad_W)
            out.append(layer.grad_b)
        return out


def make_block(widths: list[int], activation: str, rng: Rng,
               out_activation: str | None = None) -> MLPBlock:
    """Block from a width chain [in, h1, ..., out]; one activation for all
    layers, optionally a different one for the last."""
    if len(widths) < 2:
        raise ShapeError("width chain needs at least input and output")
    layers = []
    last = len(widths) - 2
    for k, (a, b) in enumerate(zip(widths, widths[1:])):
        act = out_activation if (k == last and out_activation) else activation
        layers.append(DenseLayer(a, b, act, rng=rng))
    return MLPBlock(layers)


# losses ---------------------------------------------------------------

def mse_loss(a: Matrix, b: Matrix) -> float:
    """Squared L2 distance per sample, averaged over the batch."""
    if a.shape != b.shape:
        raise ShapeError(f"mse_loss: shapes differ, {a.shape} vs {b.shape}")
    d = a - b
    return float((d * d).sum(axis=1).mean())


def mse_loss_grad(a: Matrix, b: Matrix) -> Matrix:
    """Gradient of mse_loss with respect to a."""
    if a.shape != b.shape:
        raise ShapeError(f"mse_loss: shapes differ, {a.shape} vs {b.shape}")
    return 2.0 * (a - b) / a.shape[0]


def mse_loss_and_grad(a: Matrix, b: Matrix) -> tuple[float, Matrix]:
    return mse_loss(a, b), mse_loss_grad(a, b)


_CE_EPS = 1e-12


def cross_entropy_loss(probs: Matrix, onehot: Matrix) -> float:
    if probs.shape != onehot.shape:
        raise ShapeError(
            f"cross_entropy: shapes differ, {probs.shape} vs {onehot.shape}")
    p = np.clip(probs, _CE_EPS, None)
    return float(-(onehot * np.log(p)).sum(axis=1).mean())


def cross_entropy_grad(probs: Matrix, onehot: Matrix) -> Matrix:
    p = np.clip(probs, _CE_EPS, None)
    return -(onehot / p) / probs.shape[0]


# Adam -----------------------------------------------------------------

@dataclass
class AdamState:
    """Per-tensor Adam moments; t counts applied updates."""

    m: Matrix
    v: Matrix
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Matrix, lr: float = 1e-4, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(param: Matrix, grad: Matrix, state: AdamState) -> Matrix:
    """One bias-corrected Adam step; returns the new parameter tensor."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError(
            f"adam_update: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class BlockAdam:
    """Adam over every parameter tensor of one MLPBlock.

    States are created lazily on the first step so that freshly built
    networks stay cheap until training actually starts.
    """

    def __init__(self, block: MLPBlock, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.block = block
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._states: dict[tuple[int, str], AdamState] = {}

    def _state(self, key: tuple[int, str], param: Matrix) -> AdamState:
        st = self._states.get(key)
        if st is None:
            st = AdamState.for_param(param, self.lr, self.beta1, self.beta2,
                                     self.eps)
            self._states[key] = st
        return st

    def set_lr(self, lr: float) -> None:
        self.lr = lr
        for st in self._states.values():
            st.lr = lr

    def step(self) -> None:
        for i, layer in enumerate(self.block.layers):
            if layer.grad_W is None or layer.grad_b is None:
                raise StateError("step without gradients; run backward first")
            layer.W = adam_update(layer.W, layer.grad_W,
                                  self._state((i, "W"), layer.W))
            layer.bias = adam_update(layer.bias, layer.grad_b,
                                     self._state((i, "b"), layer.bias))


# finite differences ---------------------------------------------------

def finite_diff_loss_grads(loss_fn, params: list[Matrix],
                           eps: float = 1e-5) -> list[Matrix]:
    """Central-difference gradient of loss_fn() for each tensor in params.

    loss_fn takes no arguments and must recompute the loss from the current
    (mutated in place) parameter values.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = loss_fn()
            flat[i] = saved - eps
            down = loss_fn()
            flat[i] = saved
            gflat[i] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic: Matrix, numeric: Matrix) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())


def grad_check_block(block: MLPBlock, x: Matrix, target: Matrix,
                     eps: float = 1e-5, inject_fault: bool = False) -> float:
    """Max floored-relative error between analytic and central-difference
    gradients of the MSE loss of block(x) against target."""
    out = block.forward(x, train=True)
    block.backward(mse_loss_grad(out, target))
    analytic = [np.array(g, copy=True) for g in block.grad_arrays()]
    if inject_fault:
        analytic[0].reshape(-1)[0] += 0.1

    def loss_fn() -> float:
        return mse_loss(block.forward(x, train=False), target)

    numeric = finite_diff_loss_grads(loss_fn, block.param_arrays(), eps=eps)
    return max(max_rel_error(a, n) for a, n in zip(analytic, numeric))
