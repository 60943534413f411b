"""Forward/backward kernels for each layer kind (NCHW, float64).

Every layer object is stateless apart from the cache of its last forward
pass; parameters live in the owning network's dictionaries and are passed in.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Layer:
    param_names: tuple[str, ...] = ()

    def __init__(self, spec):
        self.spec = spec
        self.cache = None

    def forward(self, params, inputs, train):
        raise NotImplementedError

    def backward(self, params, grads, dout):
        """Return the list of input gradients; accumulate parameter gradients into ``grads``."""
        raise NotImplementedError


def _pad(x, pad, value=0.0):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


class Conv2d(Layer):
    def __init__(self, spec):
        super().__init__(spec)
        self.param_names = ("W", "b") if spec.attrs.get("bias") else ("W",)

    def forward(self, params, inputs, train):
        (x,) = inputs
        a = self.spec.attrs
        k, s, p = a["kernel"], a["stride"], a["padding"]
        W = params["W"]
        xp = _pad(x, p)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        out = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if "b" in params:
            out = out + params["b"][None, :, None, None]
        self.cache = (xp.shape, win, x.shape)
        return np.ascontiguousarray(out)

    def backward(self, params, grads, dout):
        a = self.spec.attrs
        k, s, p = a["kernel"], a["stride"], a["padding"]
        xp_shape, win, x_shape = self.cache
        W = params["W"]
        grads["W"] += np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
        if "b" in params:
            grads["b"] += dout.sum(axis=(0, 2, 3))
        Ho, Wo = dout.shape[2], dout.shape[3]
        dxp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(W[:, :, i, j], dout, axes=([0], [1]))  # (C, B, Ho, Wo)
                dxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += contrib.transpose(1, 0, 2, 3)
        if p:
            dxp = dxp[:, :, p:p + x_shape[2], p:p + x_shape[3]]
        return [dxp]


class BatchNorm(Layer):
    param_names = ("gamma", "beta")

    def forward(self, params, inputs, train):
        (x,) = inputs
        g, b = params["gamma"], params["beta"]
        rm, rv = params["running_mean"], params["running_var"]
        if train:
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            rm *= 1 - BN_MOMENTUM
            rm += BN_MOMENTUM * mu
            rv *= 1 - BN_MOMENTUM
            rv += BN_MOMENTUM * var
        else:
            mu, var = rm, rv
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
        self.cache = (xhat, inv, train)
        return g[None, :, None, None] * xhat + b[None, :, None, None]

    def backward(self, params, grads, dout):
        xhat, inv, train = self.cache
        g = params["gamma"]
        grads["gamma"] += (dout * xhat).sum(axis=(0, 2, 3))
        grads["beta"] += dout.sum(axis=(0, 2, 3))
        dxhat = dout * g[None, :, None, None]
        if not train:
            return [dxhat * inv[None, :, None, None]]
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        dx = (inv[None, :, None, None] / m) * (
            m * dxhat
            - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        )
        return [dx]


class Affine(Layer):
    """Per-channel scale and shift (stand-in for batch normalization)."""

    param_names = ("gamma", "beta")

    def forward(self, params, inputs, train):
        (x,) = inputs
        self.cache = x
        return params["gamma"][None, :, None, None] * x + params["beta"][None, :, None, None]

    def backward(self, params, grads, dout):
        x = self.cache
        grads["gamma"] += (dout * x).sum(axis=(0, 2, 3))
        grads["beta"] += dout.sum(axis=(0, 2, 3))
        return [dout * params["gamma"][None, :, None, None]]


class ReLU(Layer):
    def forward(self, params, inputs, train):
        (x,) = inputs
        self.cache = x > 0
        return np.where(self.cache, x, 0.0)

    def backward(self, params, grads, dout):
        return [dout * self.cache]


class MaxPool(Layer):
    def forward(self, params, inputs, train):
        (x,) = inputs
        a = self.spec.attrs
        k, s, p = a["kernel"], a["stride"], a["padding"]
        B, C, H, W = x.shape
        Ho, Wo = self.spec.out_shape[1], self.spec.out_shape[2]
        # pad so that every output window is complete (ceil mode adds right/bottom padding)
        need_h = (Ho - 1) * s + k
        need_w = (Wo - 1) * s + k
        xp = np.full((B, C, max(need_h, H + 2 * p), max(need_w, W + 2 * p)), -np.inf)
        xp[:, :, p:p + H, p:p + W] = x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
        flat = win.reshape(B, C, Ho, Wo, k * k)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        self.cache = (arg, xp.shape, x.shape)
        return out

    def backward(self, params, grads, dout):
        a = self.spec.attrs
        k, s, p = a["kernel"], a["stride"], a["padding"]
        arg, xp_shape, x_shape = self.cache
        Ho, Wo = dout.shape[2], dout.shape[3]
        dxp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                hit = arg == i * k + j
                dxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += dout * hit
        return [dxp[:, :, p:p + x_shape[2], p:p + x_shape[3]]]


class GlobalAvgPool(Layer):
    def forward(self, params, inputs, train):
        (x,) = inputs
        self.cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, params, grads, dout):
        B, C, H, W = self.cache
        return [np.broadcast_to(dout[:, :, None, None] / (H * W), self.cache).copy()]


class Dense(Layer):
    param_names = ("W", "b")

    def forward(self, params, inputs, train):
        (x,) = inputs
        self.cache = x
        return x @ params["W"].T + params["b"]

    def backward(self, params, grads, dout):
        x = self.cache
        grads["W"] += dout.T @ x
        grads["b"] += dout.sum(axis=0)
        return [dout @ params["W"]]


class Sigmoid(Layer):
    def forward(self, params, inputs, train):
        (x,) = inputs
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self.cache = out
        return out

    def backward(self, params, grads, dout):
        p = self.cache
        return [dout * p * (1.0 - p)]


class Upsample(Layer):
    """Nearest-neighbour upsampling by an integer factor, cropped to the target size."""

    def forward(self, params, inputs, train):
        (x,) = inputs
        f = self.spec.attrs["factor"]
        Ht, Wt = self.spec.out_shape[1], self.spec.out_shape[2]
        up = x.repeat(f, axis=2).repeat(f, axis=3)
        self.cache = x.shape
        return np.ascontiguousarray(up[:, :, :Ht, :Wt])

    def backward(self, params, grads, dout):
        B, C, H, W = self.cache
        f = self.spec.attrs["factor"]
        full = np.zeros((B, C, H * f, W * f))
        full[:, :, :dout.shape[2], :dout.shape[3]] = dout
        return [full.reshape(B, C, H, f, W, f).sum(axis=(3, 5))]


class SkipAdd(Layer):
    def forward(self, params, inputs, train):
        a, b = inputs
        return a + b

    def backward(self, params, grads, dout):
        return [dout, dout]


LAYER_TYPES = {
    "conv2d": Conv2d,
    "batchnorm": BatchNorm,
    "affine": Affine,
    "relu": ReLU,
    "maxpool": MaxPool,
    "avgpool_global": GlobalAvgPool,
    "dense": Dense,
    "sigmoid": Sigmoid,
    "upsample": Upsample,
    "skip_add": SkipAdd,
}
