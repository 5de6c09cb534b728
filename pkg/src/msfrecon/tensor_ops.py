"""Dense tensor primitives with hand-written reverse-mode gradients.

Tensors are numpy arrays laid out as ``(height, width, depth)``, optionally
with leading batch axes.  A pixel is addressed as ``(x, y, d)`` where ``x``
runs along the width (array axis -2) and ``y`` along the height (axis -3),
so ``T(x, y, d) == arr[..., y, x, d]``.

Convolutions are 3x3, zero same-padded, stride 1, with an optional dilation.
They are evaluated as a single GEMM over an im2col buffer, which keeps the
reduction order fixed and the results bitwise reproducible for a fixed BLAS
thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

KERNEL_SIZE = 3


def as_tensor3(a, dtype=np.float64) -> np.ndarray:
    """Validate and return ``a`` as an ``(H, W, D)`` (or batched) array."""
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim < 3 or min(arr.shape[-3:]) < 1:
        raise ContractViolation(f"expected (..., H, W, D) tensor, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvKernel:
    """3x3 convolution weights.

    ``weights[i, j, c, o]`` multiplies input ``(x + (i-1)*dilation,
    y + (j-1)*dilation, c)`` into output channel ``o``; ``i`` is the x tap.
    """

    weights: np.ndarray
    bias: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 4 or w.shape[:2] != (KERNEL_SIZE, KERNEL_SIZE):
            raise ContractViolation(f"kernel weights must be (3, 3, in, out), got {w.shape}")
        if b.shape != (w.shape[3],):
            raise ContractViolation(f"bias must have shape ({w.shape[3]},), got {b.shape}")
        if int(self.dilation) < 1:
            raise ContractViolation(f"dilation must be >= 1, got {self.dilation}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "dilation", int(self.dilation))

    @property
    def in_depth(self) -> int:
        return self.weights.shape[2]

    @property
    def out_depth(self) -> int:
        return self.weights.shape[3]

    @classmethod
    def zeros(cls, in_depth: int, out_depth: int, dilation: int = 1, dtype=np.float64):
        return cls(np.zeros((3, 3, in_depth, out_depth), dtype=dtype),
                   np.zeros(out_depth, dtype=dtype), dilation)


def _im2col(x: np.ndarray, dilation: int) -> np.ndarray:
    """Gather the 9 dilated taps of every pixel, channel-first.

    Returns ``cols`` of shape (3, 3, C, B, H, W) for ``x`` of shape
    (B, H, W, C); ``cols[i, j]`` is the input shifted by
    ``((i-1)*d, (j-1)*d)`` in (x, y).  Channel-first keeps the copies
    contiguous along W, which matters for the thin layers.
    """
    b, h, w, c = x.shape
    d = dilation
    xp = np.zeros((c, b, h + 2 * d, w + 2 * d), dtype=x.dtype)
    xp[:, :, d:d + h, d:d + w] = x.transpose(3, 0, 1, 2)
    cols = np.empty((KERNEL_SIZE, KERNEL_SIZE, c, b, h, w), dtype=x.dtype)
    for i in range(KERNEL_SIZE):
        for j in range(KERNEL_SIZE):
            cols[i, j] = xp[:, :, j * d:j * d + h, i * d:i * d + w]
    return cols


def _col2im(gcols: np.ndarray, dilation: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add tap gradients back to (B, H, W, C)."""
    _, _, c, b, h, w = gcols.shape
    d = dilation
    gp = np.zeros((c, b, h + 2 * d, w + 2 * d), dtype=gcols.dtype)
    for i in range(KERNEL_SIZE):
        for j in range(KERNEL_SIZE):
            gp[:, :, j * d:j * d + h, i * d:i * d + w] += gcols[i, j]
    return gp[:, :, d:d + h, d:d + w].transpose(1, 2, 3, 0)


def _check_depth(x: np.ndarray, kernel: ConvKernel):
    if x.shape[-1] != kernel.in_depth:
        raise ContractViolation(
            f"input depth {x.shape[-1]} does not match kernel in_depth {kernel.in_depth}")


def conv2d(x, kernel: ConvKernel) -> np.ndarray:
    """Dilated 3x3 convolution with zero same-padding."""
    x = as_tensor3(x, dtype=kernel.weights.dtype)
    _check_depth(x, kernel)
    lead = x.shape[:-3]
    xb = x.reshape((-1,) + x.shape[-3:])
    k = KERNEL_SIZE * KERNEL_SIZE * kernel.in_depth
    cols = _im2col(xb, kernel.dilation).reshape(k, -1)
    out = kernel.weights.reshape(k, kernel.out_depth).T @ cols
    out += kernel.bias[:, None]
    return out.T.reshape(lead + x.shape[-3:-1] + (kernel.out_depth,))


def conv2d_grad(x, kernel: ConvKernel, upstream):
    """Gradients of :func:`conv2d` for a given output cotangent.

    Returns ``(grad_input, grad_weights, grad_bias)``.  Leading batch axes of
    ``x`` are summed over for the parameter gradients.
    """
    x = as_tensor3(x, dtype=kernel.weights.dtype)
    _check_depth(x, kernel)
    up = np.asarray(upstream, dtype=x.dtype)
    if up.shape != x.shape[:-1] + (kernel.out_depth,):
        raise ContractViolation(
            f"upstream shape {up.shape} != conv output shape {x.shape[:-1] + (kernel.out_depth,)}")
    xb = x.reshape((-1,) + x.shape[-3:])
    k = KERNEL_SIZE * KERNEL_SIZE * kernel.in_depth
    cols = _im2col(xb, kernel.dilation).reshape(k, -1)
    up_cf = up.reshape(-1, kernel.out_depth).T
    grad_w = (cols @ up_cf.T).reshape(kernel.weights.shape)
    grad_b = up_cf.sum(axis=1)
    gcols = kernel.weights.reshape(k, kernel.out_depth) @ up_cf
    gcols = gcols.reshape((KERNEL_SIZE, KERNEL_SIZE, kernel.in_depth) + xb.shape[:-1])
    return _col2im(gcols, kernel.dilation).reshape(x.shape), grad_w, grad_b


def relu(x) -> np.ndarray:
    x = np.asarray(x)
    return np.maximum(x, 0.0)


def relu_grad(x, upstream) -> np.ndarray:
    x = np.asarray(x)
    up = np.asarray(upstream)
    if up.shape != x.shape:
        raise ContractViolation(f"upstream shape {up.shape} != input shape {x.shape}")
    return np.where(x > 0, up, 0.0).astype(up.dtype, copy=False)


def add(a, b) -> np.ndarray:
    """Element-wise sum; shapes must match exactly (no broadcasting)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractViolation(f"cannot add tensors of shapes {a.shape} and {b.shape}")
    return a + b
