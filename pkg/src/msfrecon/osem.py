"""Ordered-subset expectation maximisation (OSEM) baseline reconstructor."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError, ContractViolation
from .tomo_sim import Sinogram, _image_2d, projector, support_mask

DIVISION_GUARD = 1e-10


@dataclass(frozen=True)
class OsemConfig:
    n_subsets: int = 8
    n_iterations: int = 10
    epsilon: float = DIVISION_GUARD
    post_sigma: float = 0.0  # Gaussian post-filter width in pixels; 0 disables

    def validate(self, n_angles: int) -> None:
        if self.n_subsets < 1 or self.n_iterations < 1:
            raise ConfigurationError("n_subsets and n_iterations must be positive")
        if n_angles % self.n_subsets:
            raise ConfigurationError(
                f"n_subsets={self.n_subsets} does not divide n_angles={n_angles}")
        if not 0 < self.epsilon <= 1e-3:
            raise ConfigurationError(f"epsilon must lie in (0, 1e-3], got {self.epsilon}")


def subset_angles(n_angles: int, n_subsets: int) -> list[np.ndarray]:
    """Angle-stride interleaving: subset j holds angles j, j+S, j+2S, ..."""
    return [np.arange(j, n_angles, n_subsets) for j in range(n_subsets)]


@lru_cache(maxsize=8)
def _subset_operators(size: int, angles: tuple[float, ...], n_bins: int, n_subsets: int):
    """Per-subset (angle indices, A_S, A_S^T, sensitivity A_S^T 1)."""
    a = projector(size, angles, n_bins)
    ops = []
    for idx in subset_angles(len(angles), n_subsets):
        rows = (idx[:, None] * n_bins + np.arange(n_bins)[None, :]).ravel()
        a_s = a[rows]
        sens = np.asarray(a_s.sum(axis=0)).ravel()
        ops.append((idx, a_s, a_s.T.tocsr(), sens))
    return ops


def poisson_loglik(sino: Sinogram, image, eps: float = DIVISION_GUARD) -> float:
    """Poisson log-likelihood (up to the log y! constant) of ``sino`` given ``image``."""
    img = _image_2d(image)
    if np.any(img < 0):
        raise ContractViolation("log-likelihood needs a nonnegative image")
    a = projector(img.shape[0], sino.angles, sino.n_bins)
    yhat = a @ img.ravel()
    y = sino.data.ravel()
    return float(np.sum(y * np.log(yhat + eps) - yhat))


def osem_reconstruct(sino: Sinogram, size: int, cfg: OsemConfig = OsemConfig(),
                     init=None, callback=None) -> np.ndarray:
    """Reconstruct an (N, N, 1) image from count data by OSEM.

    ``init`` defaults to a uniform image on the inscribed circle whose
    projected mass matches the data.  ``callback(iteration, image)`` is
    called after every full pass over the subsets.  With ``n_subsets=1``
    this is plain MLEM.
    """
    cfg.validate(sino.n_angles)
    if np.any(sino.data < 0):
        raise ContractViolation("OSEM needs nonnegative sinogram data")
    y = sino.data
    if not np.any(y):
        warnings.warn("all-zero sinogram; returning a zero image", RuntimeWarning, stacklevel=2)
        return np.zeros((size, size, 1))

    subsets = [(a_s, a_t, y[idx].ravel(), sens)
               for idx, a_s, a_t, sens in _subset_operators(
                   size, tuple(sino.angles.tolist()), sino.n_bins, cfg.n_subsets)]

    if init is None:
        mask = support_mask(size).ravel()
        x = np.where(mask, y.sum() / sino.n_angles / mask.sum(), 0.0)
    else:
        x = _image_2d(init).ravel().copy()
        if np.any(x < 0):
            raise ContractViolation("OSEM initial image must be nonnegative")

    for it in range(cfg.n_iterations):
        for a_s, a_t, y_s, sens in subsets:
            ratio = y_s / (a_s @ x + cfg.epsilon)
            back = a_t @ ratio
            upd = np.zeros_like(x)
            np.divide(back, sens, out=upd, where=sens > 0)
            x = x * upd
        if callback is not None:
            callback(it + 1, x.reshape(size, size, 1))

    img = x.reshape(size, size, 1)
    if cfg.post_sigma > 0:
        img = np.maximum(gaussian_filter(img, sigma=(cfg.post_sigma, cfg.post_sigma, 0)), 0.0)
    return img
