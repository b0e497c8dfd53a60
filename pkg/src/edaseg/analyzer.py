"""Static cost and receptive-field analysis of architecture specs.

The analysis works from its own expansion of a spec into primitive ops
(convolution, batch norm, ReLU, pooling, upsampling), independently of the
layer implementations, so that its counts can be checked against a built
network.

Cost conventions: MACs are multiply-accumulates (not FLOPs). A convolution
costs ``Hout * Wout * Cout * Cin * kh * kw``; batch norm and ReLU cost one
per output element; bilinear upsampling costs 4 per output element; max
pooling, concatenation and dropout are free. Parameters include conv weights,
biases, and BN gamma/beta, but not running statistics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from edaseg.arch import ArchitectureSpec, Downsample, EdaBlock


@dataclass(frozen=True)
class PrimOp:
    kind: str  # conv | bn | relu | pool | upsample
    c_in: int
    c_out: int
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    dilation: tuple[int, int] = (1, 1)
    bias: bool = False
    # ops on the critical (deepest) path update the receptive field
    on_path: bool = True


def module_ops(c_in, growth, d):
    k = growth
    return [
        PrimOp("conv", c_in, k),
        PrimOp("bn", k, k), PrimOp("relu", k, k),
        PrimOp("conv", k, k, (3, 1)),
        PrimOp("conv", k, k, (1, 3)),
        PrimOp("bn", k, k), PrimOp("relu", k, k),
        PrimOp("conv", k, k, (3, 1), dilation=(d, 1)),
        PrimOp("conv", k, k, (1, 3), dilation=(1, d)),
        PrimOp("bn", k, k), PrimOp("relu", k, k),
    ]


def downsample_ops(c_in, c_out):
    if c_out > c_in:
        ops = [PrimOp("conv", c_in, c_out - c_in, (3, 3), (2, 2)),
               PrimOp("pool", c_in, c_in, (2, 2), (2, 2), on_path=False)]
    else:
        ops = [PrimOp("conv", c_in, c_out, (3, 3), (2, 2))]
    return ops + [PrimOp("bn", c_out, c_out), PrimOp("relu", c_out, c_out)]


def stage_ops(spec: ArchitectureSpec, num_classes: int):
    """Yield ``(stage_label, kind, out_channels, ops)`` per stage."""
    c = spec.input_channels
    n_down = 0
    for s in spec.stages:
        if isinstance(s, Downsample):
            n_down += 1
            yield f"ds{n_down}", "downsample", s.out_channels, downsample_ops(c, s.out_channels)
            c = s.out_channels
        elif isinstance(s, EdaBlock):
            ops = []
            for d in s.dilations:
                ops += module_ops(c, s.growth, d)
                c += s.growth
            yield s.name, "eda_block", c, ops
        else:
            ops = [PrimOp("conv", c, num_classes, bias=True),
                   PrimOp("upsample", num_classes, num_classes, stride=(s.upsample_factor,) * 2,
                          on_path=False)]
            yield "head", "head", num_classes, ops


def op_params(op: PrimOp) -> int:
    if op.kind == "conv":
        return op.c_out * op.c_in * op.kernel[0] * op.kernel[1] + (op.c_out if op.bias else 0)
    if op.kind == "bn":
        return 2 * op.c_out
    return 0


def op_macs(op: PrimOp, h_out: int, w_out: int) -> int:
    n = h_out * w_out
    if op.kind == "conv":
        return n * op.c_out * op.c_in * op.kernel[0] * op.kernel[1]
    if op.kind in ("bn", "relu"):
        return n * op.c_out
    if op.kind == "upsample":
        return 4 * n * op.c_out
    return 0


@dataclass
class LayerReport:
    stage: str
    kind: str
    channels: int
    height: int
    width: int
    downsample: int
    params: int
    macs: int
    rf_h: int
    rf_w: int
    jump_h: int
    jump_w: int

    @property
    def ratio(self) -> str:
        return f"1/{self.downsample}"


def _check_divisible(spec, h, w):
    mult = 2 ** spec.depth
    if h % mult or w % mult:
        raise ValueError(f"{spec.name}: input {h}x{w} must be a multiple of {mult} "
                         "in both height and width")


def analyze(spec: ArchitectureSpec, num_classes=6, height=480, width=720) -> list[LayerReport]:
    """Per-stage shapes, costs, and receptive fields."""
    _check_divisible(spec, height, width)
    h, w, factor = height, width, 1
    rf = [1, 1]
    jump = [1, 1]
    reports = []
    for label, kind, c_out, ops in stage_ops(spec, num_classes):
        params = macs = 0
        for op in ops:
            if op.kind == "upsample":
                h, w, factor = h * op.stride[0], w * op.stride[1], factor // op.stride[0]
            elif op.kind in ("conv", "pool") and op.on_path:
                for axis in (0, 1):
                    rf[axis] += op.dilation[axis] * (op.kernel[axis] - 1) * jump[axis]
                    jump[axis] *= op.stride[axis]
            if op.stride != (1, 1) and op.kind in ("conv", "pool") and op.on_path:
                h, w, factor = h // op.stride[0], w // op.stride[1], factor * op.stride[0]
            params += op_params(op)
            macs += op_macs(op, h, w)
        reports.append(LayerReport(label, kind, c_out, h, w, factor, params, macs,
                                   rf[0], rf[1], jump[0], jump[1]))
    return reports


def shape_trace(spec, height=480, width=720, num_classes=6):
    return analyze(spec, num_classes, height, width)


def count_params(spec: ArchitectureSpec, num_classes=6) -> int:
    return sum(op_params(op) for _, _, _, ops in stage_ops(spec, num_classes) for op in ops)


def count_macs(spec: ArchitectureSpec, num_classes=6, height=480, width=720) -> int:
    return sum(r.macs for r in analyze(spec, num_classes, height, width))


def receptive_field(spec: ArchitectureSpec, num_classes=6):
    """Per-stage ``(stage, rf_h, rf_w)``; the head does not change the field."""
    size = 2 ** spec.depth
    return [(r.stage, r.rf_h, r.rf_w) for r in analyze(spec, num_classes, size, size)]


def pre_head_rf(spec: ArchitectureSpec) -> tuple[int, int]:
    *_, rf_h, rf_w = receptive_field(spec)[-1]
    return rf_h, rf_w


# ---------------------------------------------------------------------------
# plain layer chains (recurrence and probe for arbitrary conv/pool stacks)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainLayer:
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    dilation: tuple[int, int] = (1, 1)
    pool: bool = False


def chain_rf(layers) -> tuple[int, int]:
    rf, jump = [1, 1], [1, 1]
    for layer in layers:
        kernel, stride = ((2, 2), (2, 2)) if layer.pool else (layer.kernel, layer.stride)
        for axis in (0, 1):
            rf[axis] += layer.dilation[axis] * (kernel[axis] - 1) * jump[axis]
            jump[axis] *= stride[axis]
    return rf[0], rf[1]


def _support_box(grad):
    mag = np.abs(grad).sum(axis=(0, 1))
    rows = np.flatnonzero(mag.any(axis=1))
    cols = np.flatnonzero(mag.any(axis=0))
    h, w = mag.shape
    if rows[0] == 0 or cols[0] == 0 or rows[-1] == h - 1 or cols[-1] == w - 1:
        raise ValueError("probe too small: gradient support reaches the input border")
    return int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1)


def _center_grad(shape, dtype=np.float64):
    dout = np.zeros(shape, dtype=dtype)
    dout[:, :, shape[2] // 2, shape[3] // 2] = 1.0
    return dout


def measure_chain_rf(layers, probe_size=64, seed=0) -> tuple[int, int]:
    """Empirical receptive field of a conv/pool chain with positive weights.

    Pools are probed as 2x2 averages so every input of the window stays on a
    positive path.
    """
    from edaseg import tensor as T

    rng = np.random.default_rng(seed)
    x = np.ones((1, 1, probe_size, probe_size))
    caches = []
    for layer in layers:
        if layer.pool:
            n, c, h, w = x.shape
            if h % 2 or w % 2:
                raise ValueError("probe too small: pooling an odd-sized map")
            caches.append(("pool", x.shape))
            x = x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
            continue
        kh, kw = layer.kernel
        pad = ((layer.dilation[0] * (kh - 1)) // 2, (layer.dilation[1] * (kw - 1)) // 2)
        geom = T.ConvGeometry.make(layer.kernel, layer.stride, layer.dilation, pad)
        wgt = rng.uniform(0.5, 1.5, (1, 1, kh, kw)) / (kh * kw)
        x, c = T.conv2d_forward(x, wgt, None, geom)
        caches.append(("conv", c))
    dx = _center_grad(x.shape)
    for kind, c in reversed(caches):
        if kind == "pool":
            dx = np.repeat(np.repeat(dx, 2, axis=2), 2, axis=3) / 4
        else:
            dx, _, _ = T.conv2d_backward(dx, c)
    return _support_box(dx)


def measure_rf_empirical(spec: ArchitectureSpec, num_classes=6, probe_size=None, seed=0):
    """Empirical pre-head receptive field of ``spec``.

    Builds the network, replaces every conv weight by a positive value,
    bypasses batch norm and dropout, and returns the bounding box of the
    nonzero input gradient of one central pre-head pixel.
    """
    from edaseg.network import build, network_backward, network_forward

    net = build(spec, num_classes, seed).astype(np.float64)
    rng = np.random.default_rng(seed)
    for name, p in net.params.items():
        if name.endswith(".weight"):
            fan_in = p[0].size
            net.params[name] = rng.uniform(0.5, 1.5, p.shape) / fan_in
    if probe_size is None:
        rf = max(pre_head_rf(spec))
        mult = 2 ** spec.depth
        probe_size = (rf + 2 * mult) // mult * mult + 2 * mult
    mult = 2 ** spec.depth
    if probe_size % mult:
        raise ValueError(f"probe size must be a multiple of {mult}")
    x = np.ones((1, spec.input_channels, probe_size, probe_size))
    feats, caches = network_forward(net, x, "probe", stop_before_head=True)
    dx, _ = network_backward(net, _center_grad(feats.shape), caches)
    return _support_box(dx)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

_COLUMNS = ("stage", "kind", "C", "H", "W", "ratio", "params", "macs", "rf_h", "rf_w",
            "jump_h", "jump_w")


def _row(r: LayerReport):
    return (r.stage, r.kind, r.channels, r.height, r.width, r.ratio, r.params, r.macs,
            r.rf_h, r.rf_w, r.jump_h, r.jump_w)


def render_report(reports, fmt="text") -> str:
    """Text table (header + one line per stage) or a JSON array of rows."""
    if fmt == "json":
        return json.dumps([asdict(r) for r in reports], indent=2)
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    rows = [tuple(str(v) for v in _row(r)) for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(_COLUMNS)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(_COLUMNS)).rstrip()]
    for row in rows:
        lines.append("  ".join(v.ljust(widths[i]) for i, v in enumerate(row)).rstrip())
    return "\n".join(lines)


def reports_from_json(text) -> list[LayerReport]:
    return [LayerReport(**d) for d in json.loads(text)]


def diff_reports(a, b) -> str:
    """Stage-aligned comparison; changed rows are prefixed with ``*``."""
    lines = [f"  {'stage':<12} {'params_a':>10} {'params_b':>10} {'macs_a':>14} {'macs_b':>14}"]
    n = max(len(a), len(b))
    for i in range(n):
        ra = a[i] if i < len(a) else None
        rb = b[i] if i < len(b) else None
        same = ra is not None and rb is not None and _row(ra) == _row(rb)
        name = (ra or rb).stage if (ra and rb and ra.stage == rb.stage) else \
            f"{ra.stage if ra else '-'}|{rb.stage if rb else '-'}"
        pa, pb = (ra.params if ra else "-"), (rb.params if rb else "-")
        ma, mb = (ra.macs if ra else "-"), (rb.macs if rb else "-")
        lines.append(f"{' ' if same else '*'} {name:<12} {pa!s:>10} {pb!s:>10} {ma!s:>14} {mb!s:>14}")
    return "\n".join(lines)
