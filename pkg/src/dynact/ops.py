"""Differentiable tensor operations recorded on the active tape."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .autodiff import (ConfigError, DataError, ShapeError, Tensor, record)
from .rng import DetRng


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return record("add", out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return record("sub", out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return record("mul", out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)))


def neg(x: Tensor) -> Tensor:
    return record("neg", -x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record("scale", x.data * c, (x,), lambda g: (g * c,))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())
    return record("sum", out, (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def abs_(x: Tensor) -> Tensor:
    # subgradient at 0 is 0, matching np.sign
    return record("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return record("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                  lambda g: (g.transpose(inv),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    return record("matmul", out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def apply_unary(x: Tensor, f: Callable[[np.ndarray], np.ndarray],
                fprime: Callable[[np.ndarray], np.ndarray], name: str = "unary") -> Tensor:
    """Elementwise map with derivative; the carrier for all static activations."""
    return record(name, f(x.data), (x,), lambda g: (g * fprime(x.data),))


# -- convolution (im2col + matmul, so conv reuses the matmul backward) --------

def _conv_out_hw(H: int, W: int, kh: int, kw: int, stride: int, padding: int):
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    return Ho, Wo


def im2col(x: Tensor, kh: int, kw: int, stride: int, padding: int) -> Tensor:
    """Unfold NCHW input into a (N*Ho*Wo, C*kh*kw) patch matrix."""
    N, C, H, W = x.data.shape
    Ho, Wo = _conv_out_hw(H, W, kh, kw, stride, padding)
    if Ho <= 0 or Wo <= 0:
        raise ConfigError(
            f"conv output dims non-positive: input {H}x{W}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = np.empty((N, C, kh, kw, Ho, Wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
    out = cols.transpose(0, 4, 5, 1, 2, 3).reshape(N * Ho * Wo, C * kh * kw)

    def rule(g):
        gc = g.reshape(N, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gp = np.zeros((N, C, H + 2 * p, W + 2 * p), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                gp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gc[:, :, i, j]
        return (gp[:, :, p:p + H, p:p + W] if p else gp,)

    return record("im2col", out, (x,), rule)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor],
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding over NCHW input."""
    if stride < 1:
        raise ConfigError(f"conv stride must be >= 1, got {stride}")
    N, C, H, W = x.data.shape
    F, Ck, kh, kw = kernel.data.shape
    if Ck != C:
        raise ShapeError(f"conv channel mismatch: input {x.data.shape}, kernel {kernel.data.shape}")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise ConfigError(
            f"kernel {kh}x{kw} larger than padded input {H + 2 * padding}x{W + 2 * padding}")
    Ho, Wo = _conv_out_hw(H, W, kh, kw, stride, padding)
    cols = im2col(x, kh, kw, stride, padding)
    kmat = transpose(reshape(kernel, (F, C * kh * kw)), (1, 0))
    out2d = matmul(cols, kmat)
    if bias is not None:
        out2d = add(out2d, bias)
    return transpose(reshape(out2d, (N, Ho, Wo, F)), (0, 3, 1, 2))


# -- batch normalization -------------------------------------------------------

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor,
              running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalize over all axes but the channel axis (axis 1 for 4D, 1D features on axis 1).

    Train mode uses batch statistics and updates the running estimates in
    place; eval mode is a fixed affine map of the stored statistics.
    """
    nd = x.data.ndim
    if nd == 2:
        axes, bshape = (0,), (1, -1)
    elif nd == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise ShapeError(f"batchnorm expects 2D or 4D input, got {x.data.shape}")
    C = x.data.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeError(f"batchnorm affine params must have shape ({C},)")
    gr = gamma.data.reshape(bshape)
    br = beta.data.reshape(bshape)

    if training:
        m = x.data.size // C
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        ivar = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(bshape)) * ivar.reshape(bshape)
        out = gr * xhat + br
        var_unbiased = var * m / (m - 1) if m > 1 else var
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * var_unbiased

        def rule(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * gr
            s1 = dxhat.sum(axis=axes).reshape(bshape)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
            dx = (ivar.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
            return (dx, dgamma, dbeta)

        return record("batchnorm", out, (x, gamma, beta), rule)

    ivar = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean.reshape(bshape)) * ivar.reshape(bshape)
    out = gr * xhat + br

    def rule_eval(g):
        return (g * gr * ivar.reshape(bshape),
                (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return record("batchnorm_eval", out, (x, gamma, beta), rule_eval)


def dropout(x: Tensor, p: float, rng: DetRng, training: bool) -> Tensor:
    """Inverted dropout; identity in eval mode and at p=0."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.uniform(x.data.shape) >= p).astype(np.float64) / (1.0 - p)
    return record("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class, max-stabilized."""
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2D, got {logits.data.shape}")
    N, C = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (N,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {N}")
    if labels.min() < 0 or labels.max() >= C:
        raise DataError(f"labels must lie in [0, {C}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = np.asarray((lse[:, 0] - z[np.arange(N), labels]).mean())

    def rule(g):
        p = np.exp(z - lse)
        p[np.arange(N), labels] -= 1.0
        return (float(g) * p / N,)

    return record("softmax_cross_entropy", loss, (logits,), rule)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain (non-recorded) softmax used by evaluation code."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
