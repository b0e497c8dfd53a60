"""Composite blocks shared by every network: EDA module, downsampler, head.

Blocks are light descriptors. Their learned tensors live in the network's flat
parameter store under ``<name>.<local>`` keys, and running statistics live in
a parallel buffer store. Each block exposes ``param_shapes``/``buffer_shapes``
plus a ``forward``/``backward`` pair in the style of the primitives.

Modes: ``train`` and ``infer`` behave as usual. ``probe`` bypasses batch
normalization and dropout, so that with positive weights every path is linear
and positive (used to measure receptive fields empirically).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from edaseg import tensor as T
from edaseg.tensor import ConvGeometry, ShapeError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
DEFAULT_DROPOUT = 0.02
HEAD_INIT_SCALE = 0.1


def _bn_shapes(prefix, c):
    return {f"{prefix}.gamma": (c,), f"{prefix}.beta": (c,)}


def _bn_buffers(prefix, c):
    return {f"{prefix}.running_mean": (c,), f"{prefix}.running_var": (c,)}


def _bn_relu_forward(x, name, params, buffers, mode):
    if mode == "probe":
        bn_cache = None
        y = x
    else:
        y, bn_cache = T.batchnorm2d_forward(
            x, params[f"{name}.gamma"], params[f"{name}.beta"],
            buffers[f"{name}.running_mean"], buffers[f"{name}.running_var"],
            mode=mode, momentum=BN_MOMENTUM, eps=BN_EPS)
    y, relu_cache = T.relu_forward(y)
    return y, (name, bn_cache, relu_cache)


def _bn_relu_backward(dy, cache, grads):
    name, bn_cache, relu_cache = cache
    dy = T.relu_backward(dy, relu_cache)
    if bn_cache is None:
        return dy
    dx, dgamma, dbeta = T.batchnorm2d_backward(dy, bn_cache)
    grads[f"{name}.gamma"] = dgamma
    grads[f"{name}.beta"] = dbeta
    return dx


@dataclass(frozen=True)
class EdaModule:
    """Dense unit: ``y = concat(x, f(x))`` with ``growth`` new channels.

    ``f`` is 1x1 conv, BN-ReLU, 3x1/1x3 pair, BN-ReLU, dilated 3x1/1x3 pair,
    BN-ReLU, dropout. Convolutions carry no bias.
    """

    name: str
    in_channels: int
    growth: int
    dilation: int = 1
    dropout: float = DEFAULT_DROPOUT

    @property
    def out_channels(self):
        return self.in_channels + self.growth

    def convs(self):
        """(local name, weight shape, geometry) for each convolution, in order."""
        k, c, d = self.growth, self.in_channels, self.dilation
        return [
            ("conv1x1", (k, c, 1, 1), ConvGeometry.make(1)),
            ("conv3x1", (k, k, 3, 1), ConvGeometry.make((3, 1), padding=(1, 0))),
            ("conv1x3", (k, k, 1, 3), ConvGeometry.make((1, 3), padding=(0, 1))),
            ("conv3x1_d", (k, k, 3, 1), ConvGeometry.make((3, 1), dilation=(d, 1), padding=(d, 0))),
            ("conv1x3_d", (k, k, 1, 3), ConvGeometry.make((1, 3), dilation=(1, d), padding=(0, d))),
        ]

    def param_shapes(self):
        shapes = {}
        for local, shape, _ in self.convs():
            shapes[f"{self.name}.{local}.weight"] = shape
            if local == "conv1x1":
                shapes.update(_bn_shapes(f"{self.name}.bn1x1", self.growth))
            elif local == "conv1x3":
                shapes.update(_bn_shapes(f"{self.name}.bn_a", self.growth))
        shapes.update(_bn_shapes(f"{self.name}.bn_b", self.growth))
        return shapes

    def buffer_shapes(self):
        out = {}
        for bn in ("bn1x1", "bn_a", "bn_b"):
            out.update(_bn_buffers(f"{self.name}.{bn}", self.growth))
        return out

    def forward(self, x, params, buffers, mode="infer", rng=None):
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} input channels, "
                             f"got {x.shape[1]}")
        caches = []
        y = x
        bn_after = {"conv1x1": "bn1x1", "conv1x3": "bn_a", "conv1x3_d": "bn_b"}
        for local, _, geom in self.convs():
            y, c = T.conv2d_forward(y, params[f"{self.name}.{local}.weight"], None, geom)
            caches.append(("conv", local, c))
            if local in bn_after:
                y, c = _bn_relu_forward(y, f"{self.name}.{bn_after[local]}", params, buffers, mode)
                caches.append(("bnrelu", local, c))
        y, drop_mask = T.dropout_forward(y, self.dropout, mode, rng)
        out, sizes = T.concat_forward([x, y])
        return out, (caches, drop_mask, sizes)

    def backward(self, dout, cache, params):
        caches, drop_mask, sizes = cache
        dx_pass, dy = T.concat_backward(dout, sizes)
        dy = T.dropout_backward(dy, drop_mask)
        grads = {}
        for kind, local, c in reversed(caches):
            if kind == "bnrelu":
                dy = _bn_relu_backward(dy, c, grads)
            else:
                dy, dw, _ = T.conv2d_backward(dy, c)
                grads[f"{self.name}.{local}.weight"] = dw
        return dx_pass + dy, grads


@dataclass(frozen=True)
class Downsampler:
    """Halves H and W.

    Widening (``out > in``): concat of a 3x3/s2 conv with ``out - in`` filters
    and a 2x2 max pool, then BN-ReLU. Otherwise a plain 3x3/s2 conv with
    ``out`` filters, then BN-ReLU.
    """

    name: str
    in_channels: int
    out_channels: int

    @property
    def widening(self):
        return self.out_channels > self.in_channels

    @property
    def conv_filters(self):
        return self.out_channels - self.in_channels if self.widening else self.out_channels

    geom = ConvGeometry.make(3, stride=2, padding=1)

    def param_shapes(self):
        shapes = {f"{self.name}.conv.weight": (self.conv_filters, self.in_channels, 3, 3)}
        shapes.update(_bn_shapes(f"{self.name}.bn", self.out_channels))
        return shapes

    def buffer_shapes(self):
        return _bn_buffers(f"{self.name}.bn", self.out_channels)

    def forward(self, x, params, buffers, mode="infer", rng=None):
        _, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"{self.name}: spatial dims must be even, got {h}x{w}")
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} input channels, got {c}")
        y, conv_cache = T.conv2d_forward(x, params[f"{self.name}.conv.weight"], None, self.geom)
        pool_cache = sizes = None
        if self.widening:
            p, pool_cache = T.maxpool2d_forward(x)
            y, sizes = T.concat_forward([y, p])
        y, bnr_cache = _bn_relu_forward(y, f"{self.name}.bn", params, buffers, mode)
        return y, (conv_cache, pool_cache, sizes, bnr_cache)

    def backward(self, dout, cache, params):
        conv_cache, pool_cache, sizes, bnr_cache = cache
        grads = {}
        dy = _bn_relu_backward(dout, bnr_cache, grads)
        if self.widening:
            dy, dp = T.concat_backward(dy, sizes)
        dx, dw, _ = T.conv2d_backward(dy, conv_cache)
        grads[f"{self.name}.conv.weight"] = dw
        if self.widening:
            dx = dx + T.maxpool2d_backward(dp, pool_cache)
        return dx, grads


@dataclass(frozen=True)
class Head:
    """1x1 classifier conv (with bias) followed by bilinear upsampling."""

    name: str
    in_channels: int
    num_classes: int
    upsample_factor: int

    def param_shapes(self):
        return {f"{self.name}.conv.weight": (self.num_classes, self.in_channels, 1, 1),
                f"{self.name}.conv.bias": (self.num_classes,)}

    def buffer_shapes(self):
        return {}

    def forward(self, x, params, buffers=None, mode="infer", rng=None):
        y, conv_cache = T.conv2d_forward(x, params[f"{self.name}.conv.weight"],
                                         params[f"{self.name}.conv.bias"])
        y, up_cache = T.upsample_bilinear_forward(y, self.upsample_factor)
        return y, (conv_cache, up_cache)

    def backward(self, dout, cache, params):
        conv_cache, up_cache = cache
        dy = T.upsample_bilinear_backward(dout, up_cache)
        dx, dw, db = T.conv2d_backward(dy, conv_cache)
        return dx, {f"{self.name}.conv.weight": dw, f"{self.name}.conv.bias": db}


def init_params(blocks, rng: np.random.Generator, dtype=np.float32):
    """He-normal conv weights, zero biases, unit/zero BN affine, unit/zero running stats.

    The classifier weights are scaled down by ``HEAD_INIT_SCALE`` so a fresh
    network starts with near-uniform class scores.
    """
    params, buffers = {}, {}
    for block in blocks:
        scale = HEAD_INIT_SCALE if isinstance(block, Head) else 1.0
        for name, shape in block.param_shapes().items():
            if name.endswith(".weight"):
                fan_in = shape[1] * shape[2] * shape[3]
                std = scale * np.sqrt(2.0 / fan_in)
                params[name] = (rng.standard_normal(shape) * std).astype(dtype)
            elif name.endswith(".gamma"):
                params[name] = np.ones(shape, dtype=dtype)
            else:
                params[name] = np.zeros(shape, dtype=dtype)
        for name, shape in block.buffer_shapes().items():
            fill = np.ones if name.endswith("running_var") else np.zeros
            buffers[name] = fill(shape, dtype=dtype)
    return params, buffers
