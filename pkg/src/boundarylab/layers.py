"""Layer primitives with explicit forward/backward passes.

Every layer computes in float64 and keeps its parameters as plain numpy
arrays.  ``forward`` returns the output together with an opaque context
tuple; ``backward`` consumes that context and the upstream gradient and
returns the input gradient, plus parameter gradients when asked.  No
autograd tape: the model walks the layer list explicitly.
"""

from __future__ import annotations

import numpy as np

from .kernels import (
    conv2d_forward,
    conv2d_input_grad,
    conv2d_param_grad,
    maxpool2_backward,
    maxpool2_forward,
)


class ShapeMismatchError(ValueError):
    """Input shape does not match what the layer was built for."""


def as_tensor(x):
    """Coerce to a float64 numpy array."""
    return np.asarray(x, dtype=np.float64)


def _check_rank(name, x, rank):
    if x.ndim != rank:
        raise ShapeMismatchError(
            f"{name}: expected rank-{rank} input, got shape {x.shape}"
        )


class Dense:
    """Affine map y = x @ W^T + b.

    ``weight`` has shape (out_features, in_features) so that row k is the
    weight vector of output unit k.
    """

    kind = "dense"

    def __init__(self, in_features, out_features, *, rng=None):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        if rng is None:
            self.weight = np.zeros((self.out_features, self.in_features))
        else:
            # He-style scaling; fine for the small nets used here.
            scale = np.sqrt(2.0 / self.in_features)
            self.weight = rng.normal(0.0, scale, (self.out_features, self.in_features))
        self.bias = np.zeros(self.out_features)

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self):
        return {}

    def forward(self, x, train=False):
        _check_rank("dense", x, 2)
        if x.shape[1] != self.in_features:
            raise ShapeMismatchError(
                f"dense: expected {self.in_features} features, got {x.shape[1]}"
            )
        return x @ self.weight.T + self.bias, (x,)

    def backward(self, ctx, gy, need_param_grads=False):
        (x,) = ctx
        gx = gy @ self.weight
        if not need_param_grads:
            return gx, {}
        return gx, {"weight": gy.T @ x, "bias": gy.sum(axis=0)}


class Conv2d:
    """2D cross-correlation, stride 1, optional symmetric zero padding."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, *, padding=0, rng=None):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.padding = int(padding)
        shape = (self.out_channels, self.in_channels,
                 self.kernel_size, self.kernel_size)
        if rng is None:
            self.weight = np.zeros(shape)
        else:
            fan_in = self.in_channels * self.kernel_size * self.kernel_size
            self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        self.bias = np.zeros(self.out_channels)

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "padding": self.padding}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self):
        return {}

    def forward(self, x, train=False):
        _check_rank("conv2d", x, 4)
        if x.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                f"conv2d: expected {self.in_channels} channels, got {x.shape[1]}"
            )
        k = self.kernel_size - 2 * self.padding
        if x.shape[2] < k or x.shape[3] < k:
            raise ShapeMismatchError(
                f"conv2d: input {x.shape[2]}x{x.shape[3]} smaller than kernel"
            )
        y = conv2d_forward(x, self.weight, self.bias, padding=self.padding)
        return y, (x,)

    def backward(self, ctx, gy, need_param_grads=False):
        (x,) = ctx
        gx = conv2d_input_grad(gy, self.weight, x.shape, padding=self.padding)
        if not need_param_grads:
            return gx, {}
        gw, gb = conv2d_param_grad(x, gy, self.weight.shape, padding=self.padding)
        return gx, {"weight": gw, "bias": gb}


class ReLU:
    kind = "relu"

    def config(self):
        return {"kind": self.kind}

    def params(self):
        return {}

    def buffers(self):
        return {}

    def forward(self, x, train=False):
        mask = x > 0
        return np.where(mask, x, 0.0), (mask,)

    def backward(self, ctx, gy, need_param_grads=False):
        (mask,) = ctx
        return np.where(mask, gy, 0.0), {}


class MaxPool2x2:
    """2x2 max pooling, stride 2.  Odd trailing rows/columns are dropped.

    Ties go to the first maximum in row-major window order, and the
    backward pass routes the gradient to that single element.
    """

    kind = "maxpool2x2"

    def config(self):
        return {"kind": self.kind}

    def params(self):
        return {}

    def buffers(self):
        return {}

    def forward(self, x, train=False):
        _check_rank("maxpool2x2", x, 4)
        if x.shape[2] < 2 or x.shape[3] < 2:
            raise ShapeMismatchError(
                f"maxpool2x2: input {x.shape[2]}x{x.shape[3]} smaller than window"
            )
        h, w = x.shape[2], x.shape[3]
        xe = x[:, :, : h - h % 2, : w - w % 2]
        y, idx = maxpool2_forward(xe)
        return y, (idx, x.shape)

    def backward(self, ctx, gy, need_param_grads=False):
        idx, x_shape = ctx
        h, w = x_shape[2], x_shape[3]
        gx = maxpool2_backward(gy, idx, (x_shape[0], x_shape[1],
                                         h - h % 2, w - w % 2))
        if h % 2 or w % 2:
            full = np.zeros(x_shape)
            full[:, :, : h - h % 2, : w - w % 2] = gx
            gx = full
        return gx, {}


class BatchNorm:
    """Per-channel batch normalization.

    ``train=True`` normalizes by batch statistics and updates the running
    buffers with momentum 0.1; ``train=False`` uses the frozen running
    statistics, which keeps inference (and every attack gradient) a fixed
    affine map per channel.
    """

    kind = "batchnorm"

    def __init__(self, channels, *, eps=1e-5, momentum=0.1):
        self.channels = int(channels)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = np.ones(self.channels)
        self.beta = np.zeros(self.channels)
        self.running_mean = np.zeros(self.channels)
        self.running_var = np.ones(self.channels)

    def config(self):
        return {"kind": self.kind, "channels": self.channels,
                "eps": self.eps, "momentum": self.momentum}

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _axes(self, x):
        if x.ndim == 4:
            if x.shape[1] != self.channels:
                raise ShapeMismatchError(
                    f"batchnorm: expected {self.channels} channels, got {x.shape[1]}"
                )
            return (0, 2, 3), (1, self.channels, 1, 1)
        if x.ndim == 2:
            if x.shape[1] != self.channels:
                raise ShapeMismatchError(
                    f"batchnorm: expected {self.channels} features, got {x.shape[1]}"
                )
            return (0,), (1, self.channels)
        raise ShapeMismatchError(
            f"batchnorm: expected rank-2 or rank-4 input, got shape {x.shape}"
        )

    def forward(self, x, train=False):
        axes, bshape = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv.reshape(bshape)
        y = self.gamma.reshape(bshape) * xhat + self.beta.reshape(bshape)
        return y, (xhat, inv, axes, bshape, train, x.shape)

    def backward(self, ctx, gy, need_param_grads=False):
        xhat, inv, axes, bshape, train, x_shape = ctx
        g = self.gamma.reshape(bshape)
        if train:
            # Batch statistics depend on x, so the gradient couples the batch.
            n = 1
            for a in axes:
                n *= x_shape[a]
            gxhat = gy * g
            mean_g = gxhat.mean(axis=axes).reshape(bshape)
            mean_gx = (gxhat * xhat).mean(axis=axes).reshape(bshape)
            gx = (gxhat - mean_g - xhat * mean_gx) * inv.reshape(bshape)
        else:
            gx = gy * g * inv.reshape(bshape)
        if not need_param_grads:
            return gx, {}
        return gx, {"gamma": (gy * xhat).sum(axis=axes),
                    "beta": gy.sum(axis=axes)}


class Flatten:
    kind = "flatten"

    def config(self):
        return {"kind": self.kind}

    def params(self):
        return {}

    def buffers(self):
        return {}

    def forward(self, x, train=False):
        return x.reshape(x.shape[0], -1), (x.shape,)

    def backward(self, ctx, gy, need_param_grads=False):
        (x_shape,) = ctx
        return gy.reshape(x_shape), {}


LAYER_KINDS = {
    "dense": Dense,
    "conv2d": Conv2d,
    "relu": ReLU,
    "maxpool2x2": MaxPool2x2,
    "batchnorm": BatchNorm,
    "flatten": Flatten,
}


def layer_from_config(cfg):
    """Rebuild a layer from its ``config()`` dict."""
    kind = cfg.get("kind")
    if kind == "dense":
        return Dense(cfg["in_features"], cfg["out_features"])
    if kind == "conv2d":
        return Conv2d(cfg["in_channels"], cfg["out_channels"],
                      cfg["kernel_size"], padding=cfg.get("padding", 0))
    if kind == "relu":
        return ReLU()
    if kind == "maxpool2x2":
        return MaxPool2x2()
    if kind == "batchnorm":
        return BatchNorm(cfg["channels"], eps=cfg.get("eps", 1e-5),
                         momentum=cfg.get("momentum", 0.1))
    if kind == "flatten":
        return Flatten()
    raise ValueError(f"unknown layer kind {kind!r}")


def log_softmax(z):
    """Row-wise log softmax, stabilized by the row max."""
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax_rows(z):
    """Row-wise softmax, stabilized by the row max."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_with_logits(z, y):
    """Mean cross entropy over the batch and its gradient w.r.t. logits.

    ``z`` is (B, K) logits, ``y`` integer labels.  Returns (loss, gz) where
    ``gz`` already includes the 1/B factor, so it feeds backward() directly.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    if y.shape[0] != z.shape[0]:
        raise ShapeMismatchError(
            f"cross entropy: {z.shape[0]} logit rows vs {y.shape[0]} labels"
        )
    lsm = log_softmax(z)
    b = z.shape[0]
    loss = -lsm[np.arange(b), y].mean()
    gz = np.exp(lsm)
    gz[np.arange(b), y] -= 1.0
    gz /= b
    return loss, gz
