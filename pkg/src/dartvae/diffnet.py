"""Dense layers with hand-derived backward passes and an AdamW optimizer.

Everything runs in float64. Parameters and gradients are plain
``dict[str, np.ndarray]`` mappings so the optimizer and the checkpoint
writer can walk them in a fixed order.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "identity")


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(pre, activation):
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "sigmoid":
        return sigmoid(pre)
    return pre


def _activation_grad(pre, out, activation):
    if activation == "relu":
        return (pre > 0).astype(np.float64)
    if activation == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(pre)


def check_finite(array, name):
    if not np.all(np.isfinite(array)):
        raise NumericError(name)
    return array


@dataclass
class MlpLayer:
    """One affine layer ``activation(x @ W.T + b)`` with ``W`` of shape (out, in)."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.biases.shape} incompatible with weights {self.weights.shape}"
            )

    @classmethod
    def glorot(cls, n_in, n_out, activation, rng):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights = rng.uniform(-limit, limit, size=(n_out, n_in))
        return cls(weights, np.zeros(n_out), activation)

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]


def linear_forward(x, layer):
    """Apply ``layer`` row-wise to a (batch, in) matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise ShapeError(f"input shape {x.shape} does not match layer input width {layer.n_in}")
    return _activate(x @ layer.weights.T + layer.biases, layer.activation)


def mlp_forward(x, layers):
    """Run a stack of layers, returning the output and a cache for backprop."""
    cache = []
    h = np.asarray(x, dtype=np.float64)
    for layer in layers:
        if h.shape[1] != layer.n_in:
            raise ShapeError(f"input shape {h.shape} does not match layer input width {layer.n_in}")
        pre = h @ layer.weights.T + layer.biases
        out = _activate(pre, layer.activation)
        cache.append((h, pre, out))
        h = out
    return h, cache


def mlp_backward(layers, cache, grad_out):
    """Backpropagate ``grad_out`` through the stack.

    Returns ``(grad_input, [(grad_W, grad_b), ...])`` with one entry per layer.
    """
    grads = [None] * len(layers)
    g = grad_out
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        h, pre, out = cache[idx]
        g = g * _activation_grad(pre, out, layer.activation)
        grads[idx] = (g.T @ h, g.sum(axis=0))
        g = g @ layer.weights
    return g, grads


def mse(a, b):
    """Mean of squared element-wise differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean((a - b) ** 2))


def mse_grad(a, b):
    """Gradient of ``mse(a, b)`` with respect to ``a`` (negate for ``b``)."""
    if a.size == 0:
        return np.zeros_like(a)
    return 2.0 * (a - b) / a.size


@dataclass
class OptimizerState:
    """AdamW hyperparameters and moment accumulators."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def optimizer_step(params, grads, state):
    """One AdamW update, applied in place to ``params``.

    Weight decay shrinks each parameter by ``lr * weight_decay`` before the
    adaptive step and never enters the moment estimates.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name!r} has shape {g.shape}, parameter has {params[name].shape}")
        check_finite(g, f"grad[{name}]")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.step
    bias2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params, state


def finite_difference_gradients(loss_fn, params, h=1e-4, names=None):
    """Central-difference gradient of ``loss_fn()`` with respect to ``params``.

    ``loss_fn`` takes no arguments and reads ``params`` (mutated in place
    during probing, restored afterwards).
    """
    out = {}
    for name in names or list(params):
        p = params[name]
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        out[name] = g
    return out


def gradient_mismatch(analytic, numeric, rtol=1e-4, atol=1e-6):
    """List ``(name, index, analytic, numeric)`` entries outside tolerance."""
    bad = []
    for name, a in analytic.items():
        n = numeric[name]
        err = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        off = (err > rtol * scale) & (err > atol)
        for idx in zip(*np.nonzero(off)):
            bad.append((name, idx, float(a[idx]), float(n[idx])))
    return bad
