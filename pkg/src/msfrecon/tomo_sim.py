"""Parallel-beam tomography: Radon projection, Poisson counts, ramp-filtered back projection.

The projector is pixel driven: every pixel centre is projected onto the
detector at ``t = x cos(theta) + y sin(theta)`` and its value is shared
between the two nearest bins by linear interpolation.  Back projection reads
the same interpolation weights, so it is the exact transpose of ``radon``
scaled by ``pi / n_angles``, and every projection carries the full image mass.
Coordinates are in pixel units with the origin at the image centre, x to the
right and y up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, ContractViolation


@dataclass(frozen=True)
class Sinogram:
    """Projection data indexed ``data[angle, bin]``; ``angles`` in radians."""

    data: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        angles = np.asarray(self.angles, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != angles.shape[0]:
            raise ContractViolation(
                f"sinogram data {data.shape} does not match {angles.shape[0]} angles")
        if angles.size and (angles[0] < 0 or angles[-1] >= np.pi or np.any(np.diff(angles) <= 0)):
            raise ContractViolation("angles must be strictly increasing in [0, pi)")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "angles", angles)

    @property
    def n_angles(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    def with_data(self, data) -> "Sinogram":
        return Sinogram(data, self.angles)


def default_angles(n_angles: int) -> np.ndarray:
    return np.arange(n_angles) * (np.pi / n_angles)


def min_bins(size: int) -> int:
    """Smallest detector width covering the image diagonal."""
    return math.ceil(size * math.sqrt(2.0) - 1e-9)


def default_bins(size: int) -> int:
    n = min_bins(size)
    return n if n % 2 else n + 1


@lru_cache(maxsize=16)
def _projector(size: int, angles: tuple[float, ...], n_bins: int) -> sp.csr_matrix:
    if n_bins < min_bins(size):
        raise ConfigurationError(
            f"n_bins={n_bins} is smaller than the image diagonal ({min_bins(size)} bins for N={size})")
    th = np.asarray(angles)
    coord = np.arange(size) - (size - 1) / 2.0
    px = np.broadcast_to(coord[None, :], (size, size)).ravel()
    py = np.broadcast_to(-coord[:, None], (size, size)).ravel()
    u = (np.cos(th)[:, None] * px[None, :] + np.sin(th)[:, None] * py[None, :]
         + (n_bins - 1) / 2.0)
    lo = np.floor(u)
    w_hi = u - lo
    lo = lo.astype(np.int64)
    pix = np.broadcast_to(np.arange(size * size)[None, :], u.shape)
    row0 = np.arange(th.size)[:, None] * n_bins
    # the upper neighbour may fall off the detector only with zero weight
    hi = np.minimum(lo + 1, n_bins - 1)
    rows = np.concatenate([(row0 + lo).ravel(), (row0 + hi).ravel()])
    cols = np.concatenate([pix.ravel(), pix.ravel()])
    vals = np.concatenate([(1.0 - w_hi).ravel(), np.where(lo + 1 < n_bins, w_hi, 0.0).ravel()])
    keep = vals != 0.0
    a = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                      shape=(th.size * n_bins, size * size))
    a.sum_duplicates()
    return a


def projector(size: int, angles, n_bins: int) -> sp.csr_matrix:
    """Sparse system matrix mapping a flattened N*N image to a flattened sinogram."""
    return _projector(int(size), tuple(float(a) for a in angles), int(n_bins))


def _image_2d(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ContractViolation(f"expected a depth-1 image, got depth {img.shape[2]}")
        img = img[:, :, 0]
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ContractViolation(f"expected a square image, got shape {img.shape}")
    return img


def radon(image, n_angles: int, n_bins: int | None = None, angles=None) -> Sinogram:
    """Line integrals of ``image`` at angles ``k*pi/n_angles``."""
    img = _image_2d(image)
    n = img.shape[0]
    if angles is None:
        angles = default_angles(n_angles)
    if n_bins is None:
        n_bins = default_bins(n)
    a = projector(n, angles, n_bins)
    return Sinogram((a @ img.ravel()).reshape(len(angles), n_bins), angles)


def back_project(sino: Sinogram, size: int) -> np.ndarray:
    """Adjoint of :func:`radon`, scaled by ``pi / n_angles``; returns (N, N, 1)."""
    a = projector(size, sino.angles, sino.n_bins)
    img = (a.T @ sino.data.ravel()) * (np.pi / sino.n_angles)
    return img.reshape(size, size, 1)


def poisson_sample(sino: Sinogram, total_counts: float, seed: int) -> Sinogram:
    """Scale ``sino`` to ``total_counts`` expected events and draw Poisson counts."""
    if np.any(sino.data < 0):
        raise ContractViolation("Poisson sampling needs a nonnegative sinogram")
    if not total_counts > 0:
        raise ContractViolation(f"total_counts must be positive, got {total_counts}")
    total = sino.data.sum()
    if total == 0:
        return sino.with_data(np.zeros_like(sino.data))
    rng = np.random.default_rng(seed)
    counts = rng.poisson(sino.data * (total_counts / total))
    return sino.with_data(counts.astype(np.float64))


def padded_length(n_bins: int) -> int:
    return 2 * (1 << max(0, (n_bins - 1).bit_length()))


def ramp_response(n_pad: int, window: str | None = None) -> np.ndarray:
    """Real-FFT frequency response: |f| in cycles per bin, optionally windowed."""
    f = np.fft.rfftfreq(n_pad)
    h = np.abs(f)
    if window is None or window == "ramp":
        return h
    if window == "cosine":
        return h * np.cos(np.pi * f)
    raise ConfigurationError(f"unknown ramp window {window!r}")


def ramp_filter(sino: Sinogram, window: str | None = None) -> Sinogram:
    """Filter every projection with the ramp filter (zero-padded FFT)."""
    n_pad = padded_length(sino.n_bins)
    spec = np.fft.rfft(sino.data, n=n_pad, axis=1)
    out = np.fft.irfft(spec * ramp_response(n_pad, window), n=n_pad, axis=1)
    return sino.with_data(out[:, :sino.n_bins])


def support_mask(size: int) -> np.ndarray:
    """Inscribed-circle reconstruction support, (N, N) boolean."""
    coord = np.arange(size) - (size - 1) / 2.0
    return coord[None, :] ** 2 + coord[:, None] ** 2 <= (size / 2.0) ** 2


def fbp(sino: Sinogram, size: int, window: str | None = None) -> np.ndarray:
    """Filtered back projection restricted to the inscribed circle."""
    img = back_project(ramp_filter(sino, window), size)
    img[~support_mask(size)] = 0.0
    return img
