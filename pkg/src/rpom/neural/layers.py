"""Layers with explicit forward/backward passes on float64 numpy arrays.

Image tensors are ``(B, C, H, W)``. ``backward`` takes the loss gradient
with respect to the layer output, accumulates parameter gradients into
``self.grads`` and returns the gradient with respect to the input.
"""
import numpy as np

from ..errors import ShapeMismatch


def glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    params = {}
    buffers = {}

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": glorot(rng, n_in, n_out, (n_in, n_out)), "b": np.zeros(n_out)}
        self.zero_grad()

    def forward(self, x, training=False):
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"dense layer expects {self.n_in} inputs, got {x.shape[-1]}")
        self.x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] += self.x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["W"].T


class Tanh(Layer):
    def forward(self, x, training=False):
        self.y = np.tanh(x)
        return self.y

    def backward(self, dout):
        return dout * (1.0 - self.y * self.y)


class Sigmoid(Layer):
    def forward(self, x, training=False):
        # split by sign to avoid overflow in exp
        e = np.exp(-np.abs(x))
        self.y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self.y

    def backward(self, dout):
        return dout * self.y * (1.0 - self.y)


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, training=False):
        self.pos = x > 0
        return np.where(self.pos, x, self.slope * x)

    def backward(self, dout):
        return np.where(self.pos, dout, self.slope * dout)


class ReLU(LeakyReLU):
    def __init__(self):
        super().__init__(0.0)


class Conv2d(Layer):
    """3x3 (default) convolution, stride 1, zero padding, via im2col.

    Weights are stored as ``(k * k * c_in, c_out)`` in ``(row, col, channel)``
    order. The input gradient is itself a convolution of the padded output
    gradient with the flipped, transposed kernel.
    """

    def __init__(self, c_in, c_out, rng, k=3):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        fan_in, fan_out = c_in * k * k, c_out * k * k
        self.params = {"W": glorot(rng, fan_in, fan_out, (k * k * c_in, c_out)), "b": np.zeros(c_out)}
        self.zero_grad()

    def _cols(self, x_nhwc):
        """``(B*H*W, k*k*C)`` patches of a channels-last tensor (same padding)."""
        B, H, W, C = x_nhwc.shape
        k, pad = self.k, self.k // 2
        xp = np.pad(x_nhwc, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        cols = np.empty((B, H, W, k * k * C))
        for i in range(k):
            for j in range(k):
                o = (i * k + j) * C
                cols[..., o:o + C] = xp[:, i:i + H, j:j + W, :]
        return cols.reshape(B * H * W, k * k * C)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeMismatch(f"conv expects (B, {self.c_in}, H, W), got {x.shape}")
        B, C, H, W = x.shape
        self.cols = self._cols(x.transpose(0, 2, 3, 1))
        self.in_shape = x.shape
        out = self.cols @ self.params["W"] + self.params["b"]
        return out.reshape(B, H, W, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dout):
        B, C, H, W = self.in_shape
        k = self.k
        d = dout.transpose(0, 2, 3, 1)
        dflat = d.reshape(B * H * W, self.c_out)
        self.grads["W"] += self.cols.T @ dflat
        self.grads["b"] += dflat.sum(axis=0)
        # flip spatially and swap channel roles: (k, k, C, O) -> (k, k, O, C)
        Wf = self.params["W"].reshape(k, k, C, self.c_out)[::-1, ::-1].transpose(0, 1, 3, 2)
        dx = self._cols(d) @ Wf.reshape(k * k * self.c_out, C)
        return dx.reshape(B, H, W, C).transpose(0, 3, 1, 2)


class MaxPool2d(Layer):
    """2x2 max pooling with stride 2; ties go to the first window entry."""

    def forward(self, x, training=False):
        B, C, H, W = x.shape
        if H % 2 or W % 2:
            raise ShapeMismatch(f"max pool needs even spatial size, got {H}x{W}")
        win = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
        self.arg = win.argmax(axis=-1)
        self.in_shape = x.shape
        return np.take_along_axis(win, self.arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        B, C, H, W = self.in_shape
        g = np.zeros((B, C, H // 2, W // 2, 4))
        np.put_along_axis(g, self.arg[..., None], dout[..., None], axis=-1)
        return g.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)


class Upsample2x(Layer):
    """Nearest-neighbour upsampling by two in both spatial directions."""

    def forward(self, x, training=False):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dout):
        B, C, H, W = dout.shape
        return dout.reshape(B, C, H // 2, 2, W // 2, 2).sum(axis=(3, 5))


class BatchNorm2d(Layer):
    """Per-channel batch normalisation with running statistics (momentum 0.1)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}
        self.zero_grad()

    def forward(self, x, training=False):
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        self.training = training
        if training:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            unbiased = var * n / (n - 1) if n > 1 else var
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        self.inv_std = 1.0 / np.sqrt(var + self.eps)
        self.xhat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        return g * self.xhat + b

    def backward(self, dout):
        self.grads["gamma"] += (dout * self.xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dout.sum(axis=(0, 2, 3))
        g = self.params["gamma"][None, :, None, None]
        s = self.inv_std[None, :, None, None]
        dxhat = dout * g
        if not self.training:
            return dxhat * s
        mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx = (dxhat * self.xhat).mean(axis=(0, 2, 3), keepdims=True)
        return s * (dxhat - mean_d - self.xhat * mean_dx)


class Dropout(Layer):
    """Inverted dropout; inactive in inference mode or when ``p == 0``."""

    def __init__(self, p, rng):
        super().__init__()
        self.p, self.rng = p, rng

    def forward(self, x, training=False):
        if not training or self.p == 0.0:
            self.mask = None
            return x
        self.mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self.mask

    def backward(self, dout):
        return dout if self.mask is None else dout * self.mask


class Reshape(Layer):
    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x, training=False):
        self.in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dout):
        return dout.reshape(self.in_shape)


class Sequential:
    """Ordered layer chain with dotted parameter paths like ``"3.W"``."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self, prefix=""):
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                yield f"{prefix}{i}.{k}", layer.params, layer.grads, k

    def named_buffers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            for k in layer.buffers:
                yield f"{prefix}{i}.{k}", layer.buffers, k

    def shapes(self, x):
        """Output shape after every layer for a probe input (inference mode)."""
        out = []
        for layer in self.layers:
            x = layer.forward(x)
            out.append((type(layer).__name__, x.shape))
        return out
