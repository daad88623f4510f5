"""Layer primitives for a 1-D convolutional network, float64 throughout.

Tensors are laid out (batch, channels, length) for convolutional layers and
(batch, features) after flattening. Each functional op has a matching
backward; the layer classes cache what their backward needs.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DegenerateBatch, InvalidParameter, ShapeMismatch

BN_EPS = 1e-5


def _im2col(x: np.ndarray, kernel_size: int) -> np.ndarray:
    """(B, C, L) -> (B*L, C*K) patches for 'same' padding."""
    pad = kernel_size // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    cols = sliding_window_view(xp, kernel_size, axis=2)  # B, C, L, K
    b, c, length, k = cols.shape
    return cols.transpose(0, 2, 1, 3).reshape(b * length, c * k)


def conv1d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation.

    out[b, o, i] = bias[o] + sum_{c, j} x[b, c, i + j - K//2] * W[o, c, j]
    """
    if x.ndim != 3 or weights.ndim != 3 or x.shape[1] != weights.shape[1]:
        raise ShapeMismatch(
            f"conv1d: input {x.shape} incompatible with weights {weights.shape}"
        )
    if weights.shape[2] % 2 == 0:
        raise ShapeMismatch("conv1d: kernel size must be odd")
    if bias.shape != (weights.shape[0],):
        raise ShapeMismatch("conv1d: bias length must equal out_channels")
    b, _, length = x.shape
    out_ch = weights.shape[0]
    cols = _im2col(x, weights.shape[2])
    out = cols @ weights.reshape(out_ch, -1).T + bias
    return out.reshape(b, length, out_ch).transpose(0, 2, 1)


def conv1d_backward(grad_out: np.ndarray, x: np.ndarray, weights: np.ndarray):
    """Return (grad_input, grad_weights, grad_bias) for `conv1d_forward`."""
    b, out_ch, length = grad_out.shape
    if x.shape[0] != b or x.shape[2] != length or weights.shape[0] != out_ch:
        raise ShapeMismatch("conv1d_backward: grad_out does not match cached input")
    g2 = grad_out.transpose(0, 2, 1).reshape(b * length, out_ch)
    cols = _im2col(x, weights.shape[2])
    grad_w = (g2.T @ cols).reshape(weights.shape)
    grad_b = grad_out.sum(axis=(0, 2))
    flipped = weights[:, :, ::-1].transpose(1, 0, 2)
    grad_x = conv1d_forward(grad_out, np.ascontiguousarray(flipped), np.zeros(x.shape[1]))
    return grad_x, grad_w, grad_b


def _bn_axes(x):
    if x.ndim == 3:
        return (0, 2), (1, -1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise ShapeMismatch("batchnorm expects 2-D or 3-D input")


def batchnorm_forward(x, gamma, beta, state: dict, training: bool, momentum: float = 0.1):
    """Per-channel batch normalisation.

    ``state`` holds ``running_mean``/``running_var`` and is updated in place
    in training mode. Returns ``(out, cache)``.
    """
    axes, shape = _bn_axes(x)
    if gamma.shape[0] != x.shape[1]:
        raise ShapeMismatch("batchnorm: gamma length must equal channel count")
    if training:
        if x.shape[0] < 2:
            raise DegenerateBatch("batch normalisation needs at least 2 samples in training")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        state["running_mean"] = (1 - momentum) * state["running_mean"] + momentum * mean
        state["running_var"] = (1 - momentum) * state["running_var"] + momentum * var
    else:
        mean = state["running_mean"]
        var = state["running_var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * x_hat + beta.reshape(shape)
    return out, (x_hat, inv_std, training)


def batchnorm_backward(grad_out, gamma, cache):
    """Return (grad_input, grad_gamma, grad_beta)."""
    x_hat, inv_std, training = cache
    axes, shape = _bn_axes(grad_out)
    grad_gamma = (grad_out * x_hat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    g_hat = grad_out * gamma.reshape(shape)
    if not training:
        return g_hat * inv_std.reshape(shape), grad_gamma, grad_beta
    n = grad_out.size // grad_out.shape[1]
    mean_g = g_hat.sum(axis=axes, keepdims=True) / n
    mean_gx = (g_hat * x_hat).sum(axis=axes, keepdims=True) / n
    grad_x = (g_hat - mean_g - x_hat * mean_gx) * inv_std.reshape(shape)
    return grad_x, grad_gamma, grad_beta


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None):
    """Inverted dropout; returns ``(out, mask)`` with mask None when inactive."""
    if not 0 <= rate < 1:
        raise InvalidParameter("dropout rate must lie in [0, 1)")
    if not training or rate == 0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


def dense_forward(x, weights, bias):
    if x.ndim != 2 or x.shape[1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeMismatch(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    return x @ weights + bias


def dense_backward(grad_out, x, weights):
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


class Layer:
    """Base layer: ``params``/``grads`` dicts keyed by parameter name."""

    kind = "Layer"
    #: parameters subject to L2 regularisation
    weight_names: tuple = ()

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, training: bool, rng=None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}

    def state(self) -> dict:
        return {}

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape


class Conv1D(Layer):
    kind = "Conv1D"
    weight_names = ("weight",)

    def __init__(self, in_channels, out_channels, kernel_size, rng=None):
        super().__init__()
        if kernel_size % 2 == 0:
            raise InvalidParameter("Conv1D kernel_size must be odd")
        self.in_channels, self.out_channels, self.kernel_size = in_channels, out_channels, kernel_size
        rng = rng if rng is not None else np.random.default_rng(0)
        std = np.sqrt(2.0 / (in_channels * kernel_size))
        self.params = {
            "weight": rng.normal(0.0, std, (out_channels, in_channels, kernel_size)),
            "bias": np.zeros(out_channels),
        }

    def forward(self, x, training, rng=None):
        self._x = x
        return conv1d_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        gx, gw, gb = conv1d_backward(grad_out, self._x, self.params["weight"])
        self.grads = {"weight": gw, "bias": gb}
        return gx

    def spec(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "padding": "same",
        }

    def out_shape(self, in_shape):
        if in_shape[0] != self.in_channels:
            raise ShapeMismatch(f"Conv1D expects {self.in_channels} channels, got {in_shape[0]}")
        return (self.out_channels, in_shape[1])


class BatchNorm(Layer):
    kind = "BatchNorm"

    def __init__(self, channels, momentum=0.1):
        super().__init__()
        self.channels, self.momentum = channels, momentum
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.running = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}

    def forward(self, x, training, rng=None):
        out, self._cache = batchnorm_forward(
            x, self.params["gamma"], self.params["beta"], self.running, training, self.momentum
        )
        return out

    def backward(self, grad_out):
        gx, gg, gb = batchnorm_backward(grad_out, self.params["gamma"], self._cache)
        self.grads = {"gamma": gg, "beta": gb}
        return gx

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "momentum": self.momentum}

    def state(self):
        return self.running

    def out_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeMismatch(f"BatchNorm expects {self.channels} channels, got {in_shape[0]}")
        return in_shape


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, training, rng=None):
        self._x = x
        return relu(x)

    def backward(self, grad_out):
        return relu_backward(grad_out, self._x)


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0 <= rate < 1:
            raise InvalidParameter("dropout rate must lie in [0, 1)")
        self.rate = rate

    def forward(self, x, training, rng=None):
        out, self._mask = dropout(x, self.rate, training, rng)
        return out

    def backward(self, grad_out):
        return dropout_backward(grad_out, self._mask)

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, x, training, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Dense(Layer):
    kind = "Dense"
    weight_names = ("weight",)

    def __init__(self, in_dim, out_dim, rng=None):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "weight": rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, out_dim)),
            "bias": np.zeros(out_dim),
        }

    def forward(self, x, training, rng=None):
        self._x = x
        return dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        gx, gw, gb = dense_backward(grad_out, self._x, self.params["weight"])
        self.grads = {"weight": gw, "bias": gb}
        return gx

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ShapeMismatch(f"Dense expects ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)


LAYER_TYPES = {cls.kind: cls for cls in (Conv1D, BatchNorm, ReLU, Dropout, Flatten, Dense)}


def layer_from_spec(spec: dict, rng=None) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "Conv1D":
        if spec.pop("padding", "same") != "same":
            raise InvalidParameter("only 'same' padding is supported")
        return Conv1D(spec["in_channels"], spec["out_channels"], spec["kernel_size"], rng)
    if kind == "BatchNorm":
        return BatchNorm(spec["channels"], spec.get("momentum", 0.1))
    if kind == "Dropout":
        return Dropout(spec["rate"])
    if kind == "Dense":
        return Dense(spec["in_dim"], spec["out_dim"], rng)
    if kind in ("ReLU", "Flatten"):
        return LAYER_TYPES[kind]()
    raise InvalidParameter(f"unknown layer kind {kind!r}")
