"""Network specifications, preset architectures and the graph executor."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from .layers import LAYER_TYPES

PRESETS = ("resnet34_reference", "resnet_mini", "segnet_mini")
INPUT = -1


@dataclass
class LayerSpec:
    kind: str
    name: str
    inputs: tuple[int, ...]
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)  # name -> shape (trainable)
    buffers: dict = field(default_factory=dict)  # name -> shape (non-trainable state)
    role: str = "main"  # "main" or "shortcut" (projection branches)


@dataclass
class NetSpec:
    name: str
    input_dims: tuple[int, int, int]  # (channels, H, W)
    layers: list[LayerSpec]
    head: str  # "classifier" or "autoencoder+classifier"
    prob_index: int = -1
    recon_index: int | None = None

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for layer in self.layers for s in layer.params.values())

    def weighted_layers(self, include_shortcuts: bool = False) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind in ("conv2d", "dense")
                and (include_shortcuts or l.role == "main")]


class _Builder:
    def __init__(self, name, input_dims, norm="affine"):
        self.name = name
        self.input_dims = tuple(input_dims)
        self.layers: list[LayerSpec] = []
        self.norm = norm
        self._count: dict[str, int] = {}

    def shape(self, idx):
        return self.input_dims if idx == INPUT else self.layers[idx].out_shape

    def _add(self, kind, inputs, out_shape, attrs=None, params=None, buffers=None, role="main"):
        n = self._count.get(kind, 0)
        self._count[kind] = n + 1
        self.layers.append(LayerSpec(kind, f"{kind}{n}", tuple(inputs), self.shape(inputs[0]),
                                     tuple(out_shape), attrs or {}, params or {}, buffers or {}, role))
        return len(self.layers) - 1

    def conv(self, x, out_ch, kernel, stride=1, padding=0, bias=False, role="main"):
        c, h, w = self.shape(x)
        ho = (h + 2 * padding - kernel) // stride + 1
        wo = (w + 2 * padding - kernel) // stride + 1
        if ho < 1 or wo < 1:
            raise InvalidInputError(f"input {h}x{w} too small for conv k={kernel} s={stride}")
        params = {"W": (out_ch, c, kernel, kernel)}
        if bias:
            params["b"] = (out_ch,)
        return self._add("conv2d", (x,), (out_ch, ho, wo),
                         {"kernel": kernel, "stride": stride, "padding": padding, "bias": bias},
                         params, role=role)

    def normalize(self, x, role="main"):
        c = self.shape(x)[0]
        if self.norm == "batchnorm":
            return self._add("batchnorm", (x,), self.shape(x), params={"gamma": (c,), "beta": (c,)},
                             buffers={"running_mean": (c,), "running_var": (c,)}, role=role)
        return self._add("affine", (x,), self.shape(x), params={"gamma": (c,), "beta": (c,)}, role=role)

    def relu(self, x):
        return self._add("relu", (x,), self.shape(x))

    def maxpool(self, x, kernel, stride, padding=0, ceil=False):
        c, h, w = self.shape(x)
        rnd = math.ceil if ceil else math.floor
        ho = rnd((h + 2 * padding - kernel) / stride) + 1
        wo = rnd((w + 2 * padding - kernel) / stride) + 1
        if ceil:
            ho, wo = max(ho, 1), max(wo, 1)
        return self._add("maxpool", (x,), (c, ho, wo),
                         {"kernel": kernel, "stride": stride, "padding": padding, "ceil": ceil})

    def gap(self, x):
        return self._add("avgpool_global", (x,), (self.shape(x)[0],))

    def dense(self, x, out):
        (fan_in,) = self.shape(x)
        return self._add("dense", (x,), (out,), params={"W": (out, fan_in), "b": (out,)})

    def sigmoid(self, x):
        return self._add("sigmoid", (x,), self.shape(x))

    def upsample(self, x, factor, target_hw):
        c = self.shape(x)[0]
        return self._add("upsample", (x,), (c, *target_hw), {"factor": factor})

    def add(self, a, b):
        if self.shape(a) != self.shape(b):
            raise InvalidInputError(f"skip_add shape mismatch {self.shape(a)} vs {self.shape(b)}")
        return self._add("skip_add", (a, b), self.shape(a))

    def basic_block(self, x, out_ch, stride):
        c = self.shape(x)[0]
        y = self.conv(x, out_ch, 3, stride, 1)
        y = self.relu(self.normalize(y))
        y = self.conv(y, out_ch, 3, 1, 1)
        y = self.normalize(y)
        if stride != 1 or c != out_ch:
            sc = self.conv(x, out_ch, 1, stride, 0, role="shortcut")
            sc = self.normalize(sc, role="shortcut")
        else:
            sc = x
        return self.relu(self.add(y, sc))


def _resnet(name, dims, blocks, widths, stem, norm):
    b = _Builder(name, dims, norm)
    x = INPUT
    if stem == "imagenet":
        x = b.conv(x, widths[0], 7, 2, 3)
        x = b.relu(b.normalize(x))
        x = b.maxpool(x, 3, 2, 1)
    else:
        x = b.conv(x, widths[0], 3, 1, 1)
        x = b.relu(b.normalize(x))
    for stage, (n, w) in enumerate(zip(blocks, widths)):
        for i in range(n):
            stride = 2 if (stage > 0 and i == 0) else 1
            x = b.basic_block(x, w, stride)
    x = b.gap(x)
    x = b.dense(x, 1)
    p = b.sigmoid(x)
    return NetSpec(name, b.input_dims, b.layers, "classifier", prob_index=p)


def _segnet_mini(dims, widths=(8, 16, 32)):
    b = _Builder("segnet_mini", dims, "affine")
    x = INPUT
    stage_dims = []
    for w in widths:
        stage_dims.append(b.shape(x)[1:])
        x = b.conv(x, w, 3, 1, 1)
        x = b.relu(b.normalize(x))
        x = b.maxpool(x, 2, 2, 0, ceil=True)
    latent = x
    # classifier on the latent representation
    c = b.gap(latent)
    c = b.dense(c, 1)
    prob = b.sigmoid(c)
    # mirrored decoder
    y = latent
    dec_widths = list(widths[:-1][::-1]) + [None]
    for target, w in zip(stage_dims[::-1], dec_widths):
        y = b.upsample(y, 2, target)
        if w is None:
            y = b.conv(y, dims[0], 3, 1, 1, bias=True)
        else:
            y = b.conv(y, w, 3, 1, 1)
            y = b.relu(b.normalize(y))
    return NetSpec("segnet_mini", b.input_dims, b.layers, "autoencoder+classifier",
                   prob_index=prob, recon_index=y)


def build_preset(name: str, input_dims, batchnorm: bool = False) -> NetSpec:
    """Shape-propagated specification of a named architecture.

    ``input_dims`` is (H, W) or (C, H, W); a single channel is assumed for (H, W).
    """
    dims = tuple(int(v) for v in input_dims)
    if len(dims) == 2:
        dims = (1, *dims)
    if len(dims) != 3 or min(dims) < 1:
        raise InvalidInputError(f"bad input dims {input_dims}")
    if name == "resnet34_reference":
        return _resnet(name, dims, (3, 4, 6, 3), (64, 128, 256, 512), "imagenet", "batchnorm")
    if name == "resnet_mini":
        return _resnet(name, dims, (1, 1, 1, 1), (16, 32, 64, 128), "small",
                       "batchnorm" if batchnorm else "affine")
    if name == "segnet_mini":
        return _segnet_mini(dims)
    raise InvalidInputError(f"unknown preset {name!r}; choose from {PRESETS}")


class Network:
    """Executable network: parameters plus a topologically ordered layer graph."""

    def __init__(self, spec: NetSpec, seed: int = 0, params: dict | None = None):
        self.spec = spec
        self.layers = [LAYER_TYPES[l.kind](l) for l in spec.layers]
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        if params is None:
            self._init(np.random.default_rng(seed))
        else:
            self.load_state(params)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _init(self, rng):
        for l in self.spec.layers:
            for pname, shape in l.params.items():
                key = f"{l.name}.{pname}"
                if pname == "W":
                    fan_in = int(np.prod(shape[1:]))
                    self.params[key] = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
                elif pname == "gamma":
                    self.params[key] = np.ones(shape)
                else:
                    self.params[key] = np.zeros(shape)
            for bname, shape in l.buffers.items():
                self.buffers[f"{l.name}.{bname}"] = np.ones(shape) if bname == "running_var" else np.zeros(shape)

    def state(self) -> dict[str, np.ndarray]:
        out = {k: v.copy() for k, v in self.params.items()}
        out.update({k: v.copy() for k, v in self.buffers.items()})
        return out

    def load_state(self, state):
        for l in self.spec.layers:
            for pname, shape in l.params.items():
                key = f"{l.name}.{pname}"
                self.params[key] = np.array(state[key], dtype=float).reshape(shape)
            for bname, shape in l.buffers.items():
                key = f"{l.name}.{bname}"
                self.buffers[key] = np.array(state[key], dtype=float).reshape(shape)

    def _view(self, spec):
        names = list(spec.params) + list(spec.buffers)
        out = {}
        for n in names:
            key = f"{spec.name}.{n}"
            out[n] = self.params[key] if key in self.params else self.buffers[key]
        return out

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, x, train: bool = False):
        """Probabilities (B,) and, for autoencoders, the reconstruction (B, C, H, W)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            x = x[:, None]
        if x.shape[1:] != self.spec.input_dims:
            raise InvalidInputError(f"input shape {x.shape[1:]} != net input {self.spec.input_dims}")
        outs = {INPUT: x}
        for idx, (spec, layer) in enumerate(zip(self.spec.layers, self.layers)):
            outs[idx] = layer.forward(self._view(spec), [outs[i] for i in spec.inputs], train)
        self._outs = outs
        prob = outs[self.spec.prob_index % len(self.layers)].reshape(-1)
        if self.spec.recon_index is None:
            return prob, None
        return prob, outs[self.spec.recon_index]

    def backward(self, dprob, drecon=None):
        """Accumulate parameter gradients; return the gradient w.r.t. the input."""
        n = len(self.layers)
        dout: dict[int, np.ndarray] = {}
        p_idx = self.spec.prob_index % n
        dout[p_idx] = np.asarray(dprob, dtype=float).reshape(self._outs[p_idx].shape)
        if drecon is not None and self.spec.recon_index is not None:
            dout[self.spec.recon_index] = np.asarray(drecon, dtype=float)
        dx = None
        for idx in range(n - 1, -1, -1):
            if idx not in dout:
                continue
            spec, layer = self.spec.layers[idx], self.layers[idx]
            gview = {pn: self.grads[f"{spec.name}.{pn}"] for pn in spec.params}
            dins = layer.backward(self._view(spec), gview, dout.pop(idx))
            for src, g in zip(spec.inputs, dins):
                if src == INPUT:
                    dx = g if dx is None else dx + g
                elif src in dout:
                    dout[src] = dout[src] + g
                else:
                    dout[src] = g
        return dx
