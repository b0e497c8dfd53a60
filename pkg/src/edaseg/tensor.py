"""Differentiable primitives over NCHW arrays.

Every primitive is a ``*_forward`` / ``*_backward`` pair. The forward returns
``(out, cache)`` and the backward takes the upstream gradient plus that cache.
Arrays are plain ``numpy.ndarray`` in batch-channel-height-width layout; the
dtype of the input selects precision (float32 for normal use, float64 for
gradient verification).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True)
class ConvGeometry:
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    dilation: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    @classmethod
    def make(cls, kernel=1, stride=1, dilation=1, padding=0) -> "ConvGeometry":
        g = cls(_pair(kernel), _pair(stride), _pair(dilation), _pair(padding))
        if min(g.kernel + g.stride + g.dilation) < 1 or min(g.padding) < 0:
            raise ValueError(f"invalid convolution geometry {g}")
        return g

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        out = []
        for axis, n, k, s, d, p in zip(("height", "width"), (h, w), self.kernel,
                                       self.stride, self.dilation, self.padding):
            size = (n + 2 * p - d * (k - 1) - 1) // s + 1
            if size < 1:
                raise ShapeError(f"convolution output {axis} would be {size} "
                                 f"(input {n}, kernel {k}, dilation {d}, padding {p})")
            out.append(size)
        return out[0], out[1]


def _check_rank4(x, what="input"):
    if x.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (N, C, H, W), got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_forward(x, w, b=None, geom: ConvGeometry | None = None):
    """Dilated, strided, zero-padded 2-D convolution (cross-correlation).

    The im2col matrix is gathered one kernel tap at a time by strided slicing,
    then contracted against the weights with a single batched GEMM.
    """
    _check_rank4(x)
    _check_rank4(w, "weight")
    n, c, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    if geom is None:
        geom = ConvGeometry.make(kernel=(kh, kw))
    if c != cin:
        raise ShapeError(f"channel axis mismatch: input has {c} channels, weight expects {cin}")
    if geom.kernel != (kh, kw):
        raise ShapeError(f"kernel mismatch: geometry {geom.kernel}, weight {(kh, kw)}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} does not match {cout} output channels")
    ho, wo = geom.output_size(h, wd)
    (sh, sw), (dh, dw), (ph, pw) = geom.stride, geom.dilation, geom.padding

    pointwise = (kh, kw) == (1, 1) and (sh, sw) == (1, 1) and (ph, pw) == (0, 0)
    if pointwise:
        cols = x.reshape(n, cin, h * wd)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
        cols = np.empty((n, cin, kh, kw, ho, wo), dtype=x.dtype)
        for u in range(kh):
            r0 = u * dh
            for v in range(kw):
                c0 = v * dw
                cols[:, :, u, v] = xp[:, :, r0:r0 + sh * (ho - 1) + 1:sh,
                                      c0:c0 + sw * (wo - 1) + 1:sw]
        cols = cols.reshape(n, cin * kh * kw, ho * wo)
    out = np.matmul(w.reshape(cout, -1), cols)
    if b is not None:
        out += b[None, :, None]
    out = out.reshape(n, cout, ho, wo)
    return out, (x.shape, cols, w, b is not None, geom)


def conv2d_backward(dout, cache):
    """Returns ``(dx, dw, db)``; ``db`` is None for bias-free convolutions."""
    xshape, cols, w, has_bias, geom = cache
    n, cin, h, wd = xshape
    cout, _, kh, kw = w.shape
    _, _, ho, wo = dout.shape
    (sh, sw), (dh, dw_), (ph, pw) = geom.stride, geom.dilation, geom.padding

    dflat = dout.reshape(n, cout, ho * wo)
    db = dflat.sum(axis=(0, 2)) if has_bias else None
    dw = np.tensordot(dflat, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    dcols = np.matmul(w.reshape(cout, -1).T, dflat)

    if (kh, kw) == (1, 1) and (sh, sw) == (1, 1) and (ph, pw) == (0, 0):
        return dcols.reshape(xshape), dw, db

    dcols = dcols.reshape(n, cin, kh, kw, ho, wo)
    dxp = np.zeros((n, cin, h + 2 * ph, wd + 2 * pw), dtype=dout.dtype)
    for u in range(kh):
        r0 = u * dh
        for v in range(kw):
            c0 = v * dw_
            dxp[:, :, r0:r0 + sh * (ho - 1) + 1:sh, c0:c0 + sw * (wo - 1) + 1:sw] += dcols[:, :, u, v]
    dx = dxp[:, :, ph:ph + h, pw:pw + wd]
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm2d_forward(x, gamma, beta, running_mean, running_var, mode="train",
                        momentum=0.1, eps=1e-5):
    """Per-channel normalization.

    In ``train`` mode the batch statistics (population variance over N, H, W)
    are used and the running buffers are updated in place as
    ``running = (1 - momentum) * running + momentum * batch``. In ``infer`` mode
    the running buffers are used and left untouched.
    """
    _check_rank4(x)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    c = x.shape[1]
    for name, arr in (("gamma", gamma), ("beta", beta),
                      ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ShapeError(f"{name} has shape {arr.shape}, expected ({c},) for the channel axis")
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var
    elif mode == "infer":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    out = out.astype(x.dtype, copy=False)
    return out, (xhat, inv_std.astype(x.dtype, copy=False), gamma, mode)


def batchnorm2d_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, mode = cache
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    g = (gamma * inv_std)[None, :, None, None]
    if mode == "infer":
        return dout * g, dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = g * (dout - dbeta[None, :, None, None] / m - xhat * dgamma[None, :, None, None] / m)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# pooling, upsampling, concatenation
# ---------------------------------------------------------------------------

def maxpool2d_forward(x):
    """2x2 max pooling with stride 2. Ties go to the first element in row-major order."""
    _check_rank4(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max pooling needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2d_backward(dout, cache):
    shape, idx = cache
    n, c, h, w = shape
    win = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(win, idx[..., None], dout[..., None], axis=-1)
    dx = win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dx.reshape(shape)


def bilinear_matrix(size: int, factor: int, dtype=np.float64):
    """Interpolation matrix of shape (size * factor, size).

    Output index i samples the source at ``(i + 0.5) / factor - 0.5`` clamped to
    ``[0, size - 1]``.
    """
    out = size * factor
    src = (np.arange(out, dtype=np.float64) + 0.5) / factor - 0.5
    src = np.clip(src, 0, size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size - 1)
    frac = src - lo
    m = np.zeros((out, size), dtype=np.float64)
    rows = np.arange(out)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def upsample_bilinear_forward(x, factor: int):
    _check_rank4(x)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x.copy(), (factor, None, None)
    _, _, h, w = x.shape
    ah = bilinear_matrix(h, factor, x.dtype)
    aw = bilinear_matrix(w, factor, x.dtype)
    out = np.matmul(np.matmul(ah, x), aw.T)
    return out, (factor, ah, aw)


def upsample_bilinear_backward(dout, cache):
    factor, ah, aw = cache
    if factor == 1:
        return dout
    return np.matmul(np.matmul(ah.T, dout), aw)


def concat_forward(xs):
    if not xs:
        raise ShapeError("cannot concatenate an empty list")
    ref = xs[0].shape
    for i, x in enumerate(xs):
        _check_rank4(x, f"input {i}")
        if (x.shape[0], x.shape[2], x.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"input {i} has shape {x.shape}; batch {ref[0]} and "
                             f"spatial size {ref[2]}x{ref[3]} must match input 0")
    sizes = [x.shape[1] for x in xs]
    return np.concatenate(xs, axis=1), sizes


def concat_backward(dout, sizes):
    offsets = np.cumsum(sizes)[:-1]
    return np.split(dout, offsets, axis=1)


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, x):
    return dout * (x > 0)


def dropout_forward(x, p: float, mode: str, rng: np.random.Generator | None):
    """Inverted dropout; identity outside train mode or when p == 0."""
    if mode != "train" or p == 0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout requires a random generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels, class_weights=None, ignore_index=None):
    """Weighted mean pixel cross-entropy.

    Returns ``(loss, dlogits)``. The loss is normalized by the sum of the
    weights of the counted pixels, and ``dlogits`` is exactly zero at ignored
    pixels.
    """
    _check_rank4(logits, "logits")
    n, k, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    labels = labels.astype(np.int64, copy=False)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label values must lie in [0, {k - 1}]")
    valid = np.ones(labels.shape, dtype=bool) if ignore_index is None else labels != ignore_index
    if not valid.any():
        raise ValueError("every pixel is ignored; loss is undefined")

    if class_weights is None:
        pix_w = valid.astype(logits.dtype)
    else:
        cw = np.asarray(class_weights, dtype=logits.dtype)
        if cw.shape != (k,):
            raise ShapeError(f"class_weights must have length {k}")
        pix_w = cw[labels] * valid
    total = pix_w.sum()
    if total <= 0:
        raise ValueError("counted pixels carry zero total weight")

    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    picked = np.take_along_axis(z, labels[:, None], axis=1)[:, 0]
    nll = logsum - picked
    loss = float((pix_w * nll).sum() / total)

    grad = softmax(logits)
    np.put_along_axis(grad, labels[:, None],
                      np.take_along_axis(grad, labels[:, None], axis=1) - 1, axis=1)
    grad *= (pix_w / total)[:, None]
    return loss, grad.astype(logits.dtype, copy=False)
