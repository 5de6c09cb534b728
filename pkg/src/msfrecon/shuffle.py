"""Periodic shuffling between spatial resolution and channel depth.

``ps_up`` is the sub-pixel upscaling rearrangement
``(H, W, r*r*D) -> (r*H, r*W, D)`` and ``ps_down`` its exact inverse.
Output pixel ``(x, y)`` of ``ps_up`` reads channel block
``(y mod r) * r + (x mod r)`` of input pixel ``(x // r, y // r)``.

Both are pure permutations, so each one's gradient is the other.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .tensor_ops import as_tensor3


def _check_rate(r: int) -> int:
    if int(r) != r or r < 2:
        raise ContractViolation(f"shuffle rate must be an integer >= 2, got {r}")
    return int(r)


def ps_up(t, r: int = 2) -> np.ndarray:
    r = _check_rate(r)
    t = as_tensor3(t, dtype=np.asarray(t).dtype)
    h, w, c = t.shape[-3:]
    if c % (r * r):
        raise ContractViolation(f"depth {c} is not divisible by r^2 = {r * r}")
    d = c // (r * r)
    lead = t.shape[:-3]
    n = len(lead)
    # (..., H, W, ry, rx, D) -> (..., H, ry, W, rx, D)
    t5 = t.reshape(lead + (h, w, r, r, d))
    perm = tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4)
    return np.ascontiguousarray(t5.transpose(perm)).reshape(lead + (h * r, w * r, d))


def ps_down(t, r: int = 2) -> np.ndarray:
    r = _check_rate(r)
    t = as_tensor3(t, dtype=np.asarray(t).dtype)
    h, w, d = t.shape[-3:]
    if h % r or w % r:
        raise ContractViolation(f"spatial size {h}x{w} is not divisible by r = {r}")
    lead = t.shape[:-3]
    n = len(lead)
    # (..., H, ry, W, rx, D) -> (..., H, W, ry, rx, D)
    t5 = t.reshape(lead + (h // r, r, w // r, r, d))
    perm = tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4)
    return np.ascontiguousarray(t5.transpose(perm)).reshape(lead + (h // r, w // r, r * r * d))


def ps_up_grad(upstream, r: int = 2) -> np.ndarray:
    """Gradient of :func:`ps_up` given the cotangent of its output."""
    up = as_tensor3(upstream, dtype=np.asarray(upstream).dtype)
    return ps_down(up, r)


def ps_down_grad(upstream, r: int = 2) -> np.ndarray:
    up = as_tensor3(upstream, dtype=np.asarray(upstream).dtype)
    if up.shape[-1] % (_check_rate(r) ** 2):
        raise ContractViolation(f"upstream depth {up.shape[-1]} is not divisible by r^2")
    return ps_up(up, r)
