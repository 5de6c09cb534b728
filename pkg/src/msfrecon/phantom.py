"""Ground-truth phantoms with integer ROI label maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

PHANTOM_KINDS = ("shepp_logan", "ellipses", "hot_spots")
MIN_SIZE = 32

# Modified (high-contrast) Shepp-Logan: intensity, semi-axes a/b, centre, rotation (deg).
_SHEPP_LOGAN = (
    (1.0, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.8, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.1, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.1, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.1, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.1, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


@dataclass(frozen=True)
class Phantom:
    """Tracer density ``image`` (N, N, 1) and ROI ``labels`` (N, N).

    Label 0 is background; 1..K are ROIs, each non-empty.  For ``hot_spots``
    phantoms ``background_label`` names the surrounding body ROI and
    ``hot_labels`` the tumour-analogue discs.
    """

    image: np.ndarray
    labels: np.ndarray
    kind: str
    background_label: int | None = None
    hot_labels: tuple[int, ...] = field(default_factory=tuple)

    @property
    def size(self) -> int:
        return self.image.shape[0]

    @property
    def n_rois(self) -> int:
        return int(self.labels.max())


SUPERSAMPLE = 4


def pixel_grid(n: int, supersample: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Sample coordinates in [-1, 1]; X along columns, Y pointing up.

    With ``supersample > 1`` each pixel is split into ``supersample**2``
    sub-pixel centres (row-major blocks of the returned grid).
    """
    m = n * supersample
    c = (np.arange(m) - (m - 1) / 2.0) / (m / 2.0)
    return c[None, :], -c[:, None]


def _ellipse_mask(X, Y, a, b, x0, y0, phi_deg):
    phi = np.deg2rad(phi_deg)
    c, s = np.cos(phi), np.sin(phi)
    u = (X - x0) * c + (Y - y0) * s
    v = -(X - x0) * s + (Y - y0) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _disc_mask(X, Y, r, x0, y0):
    return (X - x0) ** 2 + (Y - y0) ** 2 <= r * r


def _render(shapes, n: int, additive: bool = False):
    """Rasterise ``(mask_fn, value)`` shapes drawn in order.

    The image is the pixel-area average of the continuous phantom (partial
    volume); the raw label map records, at each pixel centre, the 1-based
    index of the last shape covering it.
    """
    Xf, Yf = pixel_grid(n, SUPERSAMPLE)
    fine = np.zeros((n * SUPERSAMPLE, n * SUPERSAMPLE))
    Xc, Yc = pixel_grid(n)
    raw = np.zeros((n, n), dtype=np.int32)
    for k, (mask_fn, val) in enumerate(shapes, start=1):
        m = mask_fn(Xf, Yf)
        if additive:
            fine[m] += val
        else:
            fine[m] = val
        raw[mask_fn(Xc, Yc)] = k
    fine = np.clip(fine, 0.0, 1.0)
    img = fine.reshape(n, SUPERSAMPLE, n, SUPERSAMPLE).mean(axis=(1, 3))
    return img[:, :, None], raw


def _compact_labels(raw: np.ndarray) -> tuple[np.ndarray, dict[int, int]]:
    """Renumber present labels to 1..K in increasing order; 0 stays 0."""
    present = [v for v in np.unique(raw) if v != 0]
    mapping = {int(v): k + 1 for k, v in enumerate(present)}
    out = np.zeros(raw.shape, dtype=np.int32)
    for old, new in mapping.items():
        out[raw == old] = new
    return out, mapping


def _ellipse(a, b, x0, y0, phi):
    return lambda X, Y: _ellipse_mask(X, Y, a, b, x0, y0, phi)


def _disc(r, x0, y0):
    return lambda X, Y: _disc_mask(X, Y, r, x0, y0)


def shepp_logan(n: int) -> Phantom:
    shapes = [(_ellipse(a, b, x0, y0, phi), val) for val, a, b, x0, y0, phi in _SHEPP_LOGAN]
    img, raw = _render(shapes, n, additive=True)
    labels, _ = _compact_labels(raw)
    return Phantom(img, labels, "shepp_logan")


def random_ellipses(n: int, rng: np.random.Generator) -> Phantom:
    shapes = []
    for _ in range(int(rng.integers(3, 9))):
        a, b = rng.uniform(0.1, 0.45, size=2)
        reach = 0.9 - max(a, b)
        rad, ang = reach * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
        phi = rng.uniform(0, 180)
        val = rng.uniform(0.1, 1.0)
        shapes.append((_ellipse(a, b, rad * np.cos(ang), rad * np.sin(ang), phi), val))
    img, raw = _render(shapes, n)
    labels, _ = _compact_labels(raw)
    return Phantom(img, labels, "ellipses")


def hot_spots(n: int, rng: np.random.Generator) -> Phantom:
    """Warm elliptical body with 1-3 small hot discs inside it."""
    a, b = rng.uniform(0.6, 0.8, size=2)
    phi = rng.uniform(0, 180)
    shapes = [(_ellipse(a, b, 0.0, 0.0, phi), rng.uniform(0.15, 0.35))]

    count = int(rng.integers(1, 4))
    inner = min(a, b)
    placed: list[tuple[float, float, float]] = []
    for _ in range(1000):
        if len(placed) == count:
            break
        r = rng.uniform(0.08, 0.12)
        rad, ang = (inner - r - 0.05) * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
        cx, cy = rad * np.cos(ang), rad * np.sin(ang)
        if any(np.hypot(cx - px, cy - py) < r + pr + 0.05 for px, py, pr in placed):
            continue
        placed.append((cx, cy, r))
    shapes += [(_disc(r, cx, cy), rng.uniform(0.8, 1.0)) for cx, cy, r in placed]

    img, raw = _render(shapes, n)
    labels, mapping = _compact_labels(raw)
    hot = tuple(mapping[k] for k in range(2, len(shapes) + 1) if k in mapping)
    return Phantom(img, labels, "hot_spots", background_label=mapping.get(1), hot_labels=hot)


def make_phantom(kind: str, size: int, seed: int = 0) -> Phantom:
    """Build a phantom of the given kind; deterministic for a fixed seed."""
    if size < MIN_SIZE:
        raise ConfigurationError(f"phantom size must be >= {MIN_SIZE}, got {size}")
    if kind == "shepp_logan":
        return shepp_logan(size)
    rng = np.random.default_rng(seed)
    if kind == "ellipses":
        return random_ellipses(size, rng)
    if kind == "hot_spots":
        return hot_spots(size, rng)
    raise ConfigurationError(f"unknown phantom kind {kind!r}; expected one of {PHANTOM_KINDS}")
