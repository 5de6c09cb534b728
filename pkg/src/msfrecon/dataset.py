"""Simulated training records and their on-disk layout.

Each record is generated by the same pipeline used at inference time:
phantom -> Radon projection -> Poisson counts -> FBP.  The FBP image is
rescaled from counts back to phantom units (by ``sum(clean sinogram) /
total_counts``), so inputs and targets are directly comparable.

A dataset directory holds ``manifest.json`` plus, per record ``i``,
``record_{i:05d}_{input,target,labels,sino}.tsimg``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rawio
from .errors import ConfigurationError, DataError
from .phantom import PHANTOM_KINDS, Phantom, make_phantom
from .tomo_sim import Sinogram, default_angles, default_bins, fbp, poisson_sample, radon

DEFAULT_MIX = {"shepp_logan": 1.0, "ellipses": 1.0, "hot_spots": 1.0}
NOISE_SEED_OFFSET = 7_919


@dataclass
class TrainRecord:
    input: np.ndarray
    target: np.ndarray
    labels: np.ndarray | None = None
    kind: str = ""
    seed: int = 0
    sinogram: Sinogram | None = None
    count_scale: float = 1.0  # phantom units per count
    background_label: int | None = None
    hot_labels: tuple[int, ...] = field(default_factory=tuple)


def default_n_angles(size: int) -> int:
    return 3 * size // 2


def simulate(phantom: Phantom, counts: float, seed: int, n_angles: int | None = None,
             n_bins: int | None = None, window: str | None = None):
    """Noisy sinogram and its FBP (in phantom units) for one phantom.

    Returns ``(noisy_sinogram, fbp_image, count_scale)``.  A non-finite
    ``counts`` skips the Poisson step (noiseless data).
    """
    n = phantom.size
    n_angles = n_angles or default_n_angles(n)
    clean = radon(phantom.image, n_angles, n_bins or default_bins(n))
    if not np.isfinite(counts):
        return clean, fbp(clean, n, window), 1.0
    noisy = poisson_sample(clean, counts, seed)
    scale = clean.data.sum() / counts
    return noisy, fbp(noisy, n, window) * scale, scale


def _pick_kind(rng: np.random.Generator, mix: dict[str, float]) -> str:
    kinds = sorted(mix)
    w = np.array([mix[k] for k in kinds], dtype=np.float64)
    return kinds[int(rng.choice(len(kinds), p=w / w.sum()))]


def validate_mix(mix: dict[str, float]) -> dict[str, float]:
    bad = set(mix) - set(PHANTOM_KINDS)
    if bad:
        raise ConfigurationError(f"unknown phantom kinds in mix: {sorted(bad)}")
    if any(v < 0 for v in mix.values()) or sum(mix.values()) <= 0:
        raise ConfigurationError("mix ratios must be nonnegative with a positive sum")
    return dict(mix)


def make_record(index: int, size: int, counts: float, mix: dict[str, float], seed: int,
                n_angles: int | None = None, window: str | None = None) -> TrainRecord:
    rec_seed = seed + index
    kind = _pick_kind(np.random.default_rng(rec_seed), mix)
    ph = make_phantom(kind, size, rec_seed)
    sino, img, scale = simulate(ph, counts, rec_seed + NOISE_SEED_OFFSET, n_angles, window=window)
    return TrainRecord(img, ph.image, ph.labels, kind, rec_seed, sino, scale,
                       ph.background_label, ph.hot_labels)


def make_dataset(n_records: int, size: int, counts: float = 1e6,
                 mix: dict[str, float] | None = None, seed: int = 0,
                 n_angles: int | None = None, window: str | None = None) -> list[TrainRecord]:
    """Simulate ``n_records`` (input, target) pairs; record ``i`` uses seed ``seed + i``."""
    if n_records < 1:
        raise ConfigurationError("n_records must be >= 1")
    mix = validate_mix(mix or DEFAULT_MIX)
    return [make_record(i, size, counts, mix, seed, n_angles, window) for i in range(n_records)]


def dataset_hash(records: list[TrainRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(np.ascontiguousarray(rec.input, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(rec.target, dtype="<f8").tobytes())
    return h.hexdigest()


def _paths(directory: Path, i: int) -> dict[str, Path]:
    stem = f"record_{i:05d}"
    return {part: directory / f"{stem}_{part}.tsimg"
            for part in ("input", "target", "labels", "sino")}


def save_dataset(records: list[TrainRecord], directory, meta: dict) -> Path:
    """Write records and ``manifest.json``; ``meta`` carries size/counts/seed/mix."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, rec in enumerate(records):
        paths = _paths(directory, i)
        rawio.write_image(paths["input"], rec.input)
        rawio.write_image(paths["target"], rec.target)
        if rec.labels is not None:
            rawio.write_image(paths["labels"], rec.labels.astype(np.float64))
        entry = {"index": i, "kind": rec.kind, "seed": rec.seed,
                 "count_scale": rec.count_scale,
                 "background_label": rec.background_label,
                 "hot_labels": list(rec.hot_labels),
                 "files": {k: p.name for k, p in paths.items()
                           if k != "labels" or rec.labels is not None}}
        if rec.sinogram is not None:
            rawio.write_image(paths["sino"], rec.sinogram.data)
        else:
            entry["files"].pop("sino")
        entries.append(entry)
    manifest = dict(meta)
    manifest["n_records"] = len(records)
    manifest["records"] = entries
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise DataError(f"{directory}: no manifest.json (not a dataset directory)")
    try:
        return json.loads(path.read_text())
    except ValueError as exc:
        raise DataError(f"{path}: unreadable manifest ({exc})") from exc


def load_dataset(directory) -> tuple[list[TrainRecord], dict]:
    directory = Path(directory)
    manifest = load_manifest(directory)
    records = []
    for entry in manifest.get("records", []):
        files = entry["files"]
        labels = sino = None
        if "labels" in files:
            labels = rawio.read_image(directory / files["labels"])[:, :, 0].astype(np.int32)
        if "sino" in files:
            data = rawio.read_image(directory / files["sino"])[:, :, 0]
            sino = Sinogram(data, default_angles(data.shape[0]))
        records.append(TrainRecord(
            rawio.read_image(directory / files["input"]),
            rawio.read_image(directory / files["target"]),
            labels, entry.get("kind", ""), entry.get("seed", 0), sino,
            entry.get("count_scale", 1.0), entry.get("background_label"),
            tuple(entry.get("hot_labels", ()))))
    if not records:
        raise DataError(f"{directory}: dataset has no records")
    return records, manifest
