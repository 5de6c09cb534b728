"""Image-quality metrics, ROI-mean uptake correlation and reconstruction timing."""

from __future__ import annotations

import json
import statistics
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import msfcnn
from .errors import ConfigurationError, ContractViolation, DataError
from .osem import OsemConfig, osem_reconstruct
from .tomo_sim import Sinogram, fbp

BENCH_METHODS = ("msfcnn", "osem", "fbp")
WARMUP_RUNS = 2


class UndefinedCorrelation(DataError, ValueError):
    pass


def mse(recon, truth) -> float:
    recon = np.asarray(recon, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ContractViolation(f"shapes differ: {recon.shape} vs {truth.shape}")
    return float(np.mean((recon - truth) ** 2))


def psnr(recon, truth) -> float:
    """Peak signal-to-noise ratio in dB with the truth maximum as peak."""
    err = mse(recon, truth)
    peak = float(np.max(truth))
    if err == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / err)


def ncc(recon, truth) -> float:
    """Normalised cross-correlation (zero-mean, unit-norm inner product)."""
    a = np.asarray(recon, dtype=np.float64).ravel()
    b = np.asarray(truth, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else float("nan")


def roi_means(image, labels) -> dict[int, float]:
    """Mean of ``image`` over each label 1..max(labels); empty labels are skipped."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[:, :, 0]
    lab = np.asarray(labels)
    if lab.shape != img.shape:
        raise ContractViolation(f"label map {lab.shape} does not match image {img.shape}")
    k = int(lab.max()) if lab.size else 0
    flat = lab.ravel().astype(np.int64)
    sums = np.bincount(flat, weights=img.ravel(), minlength=k + 1)
    counts = np.bincount(flat, minlength=k + 1)
    out = {}
    for roi in range(1, k + 1):
        if counts[roi] == 0:
            warnings.warn(f"ROI {roi} is empty and was excluded", RuntimeWarning, stacklevel=2)
            continue
        out[roi] = float(sums[roi] / counts[roi])
    return out


def correlate(truth_means, recon_means) -> tuple[float, float, float]:
    """Pearson r and least-squares line ``recon = slope * truth + intercept``."""
    x = np.asarray(truth_means, dtype=np.float64)
    y = np.asarray(recon_means, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractViolation("correlate needs two equal-length vectors")
    if x.size < 3:
        raise ContractViolation(f"correlate needs at least 3 pairs, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelation("correlation is undefined for a constant vector")
    sxy = float(dx @ dy)
    r = sxy / np.sqrt(sxx * syy)
    slope = sxy / sxx
    return float(np.clip(r, -1.0, 1.0)), slope, float(y.mean() - slope * x.mean())


def contrast_recovery(recon, truth, labels, background_label: int,
                      hot_labels) -> dict[int, float]:
    """Fraction of the true ROI-over-background contrast present in ``recon``."""
    rm = roi_means(recon, labels)
    tm = roi_means(truth, labels)
    out = {}
    for roi in hot_labels:
        true_c = tm[roi] - tm[background_label]
        out[int(roi)] = (rm[roi] - rm[background_label]) / true_c
    return out


@dataclass
class EvalReport:
    method: str
    records: list[dict] = field(default_factory=list)  # index, kind, mse, psnr, ncc
    rois: list[dict] = field(default_factory=list)  # record, roi, truth_mean, recon_mean
    hot_spots: list[dict] = field(default_factory=list)  # record, roi, recovery
    r: float | None = None
    slope: float | None = None
    intercept: float | None = None
    timing: dict = field(default_factory=dict)
    threads: int | None = None

    def summary(self) -> dict:
        def mean_of(key):
            vals = [rec[key] for rec in self.records if np.isfinite(rec[key])]
            return float(np.mean(vals)) if vals else None
        return {"mean_mse": mean_of("mse"), "mean_psnr": mean_of("psnr"),
                "mean_ncc": mean_of("ncc"), "n_records": len(self.records),
                "n_rois": len(self.rois),
                "min_hot_spot_recovery": min((h["recovery"] for h in self.hot_spots),
                                             default=None)}

    def to_json(self) -> str:
        d = asdict(self)
        d["summary"] = self.summary()
        return json.dumps(_finite(d), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d.pop("summary", None)
        for rec in d.get("records", []):
            if rec.get("psnr") is None:
                rec["psnr"] = float("inf")
        return cls(**d)


def _finite(obj):
    """Replace inf/nan by None so the JSON stays standard."""
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def evaluate(method: str, recons, records) -> EvalReport:
    """Per-record metrics plus pooled ROI-mean correlation for ``recons`` vs ``records``."""
    if len(recons) != len(records):
        raise ContractViolation("one reconstruction per record is required")
    report = EvalReport(method)
    tx, ry = [], []
    for i, (img, rec) in enumerate(zip(recons, records)):
        report.records.append({"index": i, "kind": rec.kind, "mse": mse(img, rec.target),
                               "psnr": psnr(img, rec.target), "ncc": ncc(img, rec.target)})
        if rec.labels is None:
            continue
        t = roi_means(rec.target, rec.labels)
        m = roi_means(img, rec.labels)
        for roi in sorted(t):
            report.rois.append({"record": i, "roi": roi, "truth_mean": t[roi],
                                "recon_mean": m[roi]})
            tx.append(t[roi])
            ry.append(m[roi])
        if rec.hot_labels and rec.background_label is not None:
            for roi in rec.hot_labels:
                contrast = t[roi] - t[rec.background_label]
                report.hot_spots.append({"record": i, "roi": int(roi),
                                         "recovery": (m[roi] - m[rec.background_label]) / contrast})
    if len(tx) >= 3:
        report.r, report.slope, report.intercept = correlate(tx, ry)
    return report


def write_roi_table(report: EvalReport, path) -> None:
    lines = ["record\troi\ttruth_mean\trecon_mean"]
    lines += [f"{row['record']}\t{row['roi']}\t{row['truth_mean']!r}\t{row['recon_mean']!r}"
              for row in report.rois]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -- timing -----------------------------------------------------------------

def _reconstructor(method: str, params, size: int, osem_cfg: OsemConfig, dtype):
    if method == "fbp":
        return lambda sino, inp: fbp(sino, size)
    if method == "osem":
        return lambda sino, inp: osem_reconstruct(sino, size, osem_cfg)
    if method == "msfcnn":
        if params is None:
            raise ConfigurationError("msfcnn timing needs trained parameters (model file)")
        return lambda sino, inp: msfcnn.forward(params, inp, dtype=dtype)
    raise ConfigurationError(f"unknown method {method!r}; expected one of {BENCH_METHODS}")


def bench(methods, sinograms: list[Sinogram], size: int, params=None, repetitions: int = 10,
          osem_cfg: OsemConfig = OsemConfig(), dtype=np.float32, inputs=None,
          threads: int | None = None) -> dict[str, dict]:
    """Wall-clock milliseconds per slice for each method.

    Each method runs twice as warm-up, then ``repetitions`` timed runs cycling
    through the test slices, one slice per run.  The ``msfcnn`` row times the
    network forward pass only; its FBP input is computed outside the timed
    region (the ``fbp`` row reports that cost).
    """
    if repetitions < 1:
        raise ConfigurationError("repetitions must be >= 1")
    if not sinograms:
        raise ConfigurationError("bench needs at least one test sinogram")
    if inputs is None:
        inputs = [fbp(s, size) for s in sinograms]
    table = {}
    for method in methods:
        run = _reconstructor(method, params, size, osem_cfg, dtype)
        for k in range(WARMUP_RUNS):
            run(sinograms[k % len(sinograms)], inputs[k % len(inputs)])
        times = []
        for k in range(repetitions):
            sino, inp = sinograms[k % len(sinograms)], inputs[k % len(inputs)]
            t0 = time.perf_counter()
            run(sino, inp)
            times.append((time.perf_counter() - t0) * 1e3)
        table[method] = {"median_ms": statistics.median(times),
                         "mean_ms": statistics.fmean(times), "min_ms": min(times),
                         "repetitions": repetitions, "threads": threads}
    return table


def write_timing_table(table: dict[str, dict], path) -> None:
    lines = ["method\tmedian_ms\tmean_ms\tmin_ms\trepetitions\tthreads"]
    for method, row in table.items():
        lines.append(f"{method}\t{row['median_ms']:.4f}\t{row['mean_ms']:.4f}\t"
                     f"{row['min_ms']:.4f}\t{row['repetitions']}\t{row['threads']}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
