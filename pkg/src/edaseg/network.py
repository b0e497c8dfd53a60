"""Binding an ArchitectureSpec to parameters, and running it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from edaseg.arch import ArchitectureSpec, Downsample, EdaBlock, validate
from edaseg.arch import Head as HeadStage
from edaseg.layers import DEFAULT_DROPOUT, Downsampler, EdaModule, Head, init_params
from edaseg.tensor import ShapeError


def expand_blocks(spec: ArchitectureSpec, num_classes: int, dropout=DEFAULT_DROPOUT):
    """Flatten a spec into its ordered layer blocks."""
    blocks = []
    c = spec.input_channels
    n_down = 0
    for stage in spec.stages:
        if isinstance(stage, Downsample):
            n_down += 1
            blocks.append(Downsampler(f"ds{n_down}", c, stage.out_channels))
            c = stage.out_channels
        elif isinstance(stage, EdaBlock):
            for i, d in enumerate(stage.dilations):
                blocks.append(EdaModule(f"{stage.name}.m{i}", c, stage.growth, d, dropout))
                c += stage.growth
        elif isinstance(stage, HeadStage):
            blocks.append(Head("head", c, num_classes, stage.upsample_factor))
    return blocks


@dataclass
class NetworkInstance:
    spec: ArchitectureSpec
    num_classes: int
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    dropout: float = DEFAULT_DROPOUT

    def blocks(self):
        return expand_blocks(self.spec, self.num_classes, self.dropout)

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "NetworkInstance":
        return NetworkInstance(self.spec, self.num_classes,
                               {k: v.astype(dtype) for k, v in self.params.items()},
                               {k: v.astype(dtype) for k, v in self.buffers.items()},
                               self.dropout)


def build(spec: ArchitectureSpec, num_classes: int = 6, seed: int = 0,
          dropout=DEFAULT_DROPOUT) -> NetworkInstance:
    """Initialize a network deterministically from ``seed``."""
    validate(spec)
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    rng = np.random.default_rng(seed)
    params, buffers = init_params(expand_blocks(spec, num_classes, dropout), rng)
    return NetworkInstance(spec, num_classes, params, buffers, dropout)


def check_input(spec: ArchitectureSpec, x):
    if x.ndim != 4:
        raise ShapeError(f"input batch must be rank 4 (N, C, H, W), got {x.shape}")
    if x.shape[1] != spec.input_channels:
        raise ShapeError(f"{spec.name} expects {spec.input_channels} input channels, "
                         f"got {x.shape[1]}")
    mult = 2 ** spec.depth
    h, w = x.shape[2:]
    if h % mult or w % mult:
        raise ShapeError(f"{spec.name}: input {h}x{w} must be a multiple of {mult} "
                         "in both height and width")


def network_forward(net: NetworkInstance, x, mode="infer", rng=None, stop_before_head=False):
    """Run the network. Returns ``(logits, caches)``.

    With ``stop_before_head`` the pre-head feature map is returned instead.
    """
    check_input(net.spec, x)
    caches = []
    y = x
    for block in net.blocks():
        if stop_before_head and isinstance(block, Head):
            break
        y, c = block.forward(y, net.params, net.buffers, mode, rng)
        caches.append((block, c))
    return y, caches


def network_backward(net: NetworkInstance, dout, caches):
    """Returns ``(dx, grads)`` with one gradient per learned parameter that was used."""
    grads = {}
    for block, c in reversed(caches):
        dout, g = block.backward(dout, c, net.params)
        grads.update(g)
    return dout, grads


def predict(net: NetworkInstance, x):
    """Per-pixel argmax of inference-mode logits; ties go to the lowest class index."""
    logits, _ = network_forward(net, x, "infer")
    return logits.argmax(axis=1).astype(np.uint8)
