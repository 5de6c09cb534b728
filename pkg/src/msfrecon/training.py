"""Supervised training: MSE loss, Adam, mini-batch loop, gradient checking."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import msfcnn
from .dataset import TrainRecord
from .errors import ConfigurationError, ContractViolation, NumericFailure
from .msfcnn import NetworkSpec, Parameters

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.0
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    validation_fraction: float = 0.1
    shuffle: bool = True
    clip_norm: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be positive")
        if not 0 < self.validation_fraction < 0.5:
            raise ConfigurationError("validation_fraction must lie in (0, 0.5)")
        if self.learning_rate < 0 or self.decay < 0:
            raise ConfigurationError("learning_rate and decay must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractViolation(f"prediction {pred.shape} and target {target.shape} differ in shape")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              t: int, cfg: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction; returns new arrays, never mutates ``params``.

    ``decay`` is inverse-time learning-rate decay, ``lr / (1 + decay * (t - 1))``.
    """
    if t < 1:
        raise ContractViolation(f"Adam step index must be >= 1, got {t}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient in {name} at step {t}")
    lr = cfg.learning_rate / (1.0 + cfg.decay * (t - 1))
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    new = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = cfg.beta1 * (np.zeros_like(p) if m is None else m) + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * (np.zeros_like(p) if v is None else v) + (1.0 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        new[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    state.t = t
    return new, state


def loss_and_grads(params: Parameters, x: np.ndarray, y: np.ndarray):
    """MSE of the raw network on a batch and its parameter gradients."""
    tape: list = []
    out = msfcnn.run(params, x, tape)
    loss, g = mse_loss(out, y)
    grads, _ = msfcnn.backward(params, tape, g)
    return loss, grads


class TrainingDiverged(NumericFailure):
    def __init__(self, message: str, params: Parameters | None, history: list[dict]):
        super().__init__(message)
        self.params = params
        self.history = history


def split_records(records: list[TrainRecord], fraction: float):
    """Deterministic split: the last ``round(n * fraction)`` records validate."""
    n = len(records)
    n_val = int(round(n * fraction)) if n > 1 else 0
    n_val = min(max(n_val, 1 if n > 1 else 0), n - 1)
    return records[:n - n_val], records[n - n_val:]


def input_scale(records: list[TrainRecord]) -> float:
    s = float(np.mean([np.mean(np.abs(r.input)) for r in records]))
    return s if s > 0 else 1.0


def _stack(records: list[TrainRecord], scale: float):
    x = np.stack([r.input for r in records]) / scale
    y = np.stack([r.target for r in records]) / scale
    return x, y


def evaluate_loss(params: Parameters, records: list[TrainRecord], batch_size: int = 16) -> float:
    """Mean MSE (phantom units) of the normalised network over ``records``."""
    if not records:
        return float("nan")
    total = 0.0
    for i in range(0, len(records), batch_size):
        chunk = records[i:i + batch_size]
        x = np.stack([r.input for r in chunk])
        y = np.stack([r.target for r in chunk])
        pred = msfcnn.forward(params, x)
        total += float(np.sum(np.mean((pred - y) ** 2, axis=(1, 2, 3))))
    return total / len(records)


def _clip(grads: dict[str, np.ndarray], max_norm: float | None):
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    return {k: g * (max_norm / norm) for k, g in grads.items()}


def train(spec: NetworkSpec, records: list[TrainRecord], cfg: TrainConfig = TrainConfig(),
          init: Parameters | None = None, checkpoint_path=None,
          progress=None) -> tuple[Parameters, list[dict]]:
    """Fit the network to ``records`` by Adam on the MSE.

    Returns the final parameters and a history with one row per step
    (``step``, ``epoch``, ``train_loss``, ``val_loss``); ``val_loss`` is filled
    on the last step of each epoch.  Losses are in phantom units.  A
    checkpoint is written to ``checkpoint_path`` after every epoch.
    """
    if not records:
        raise ConfigurationError("cannot train on an empty dataset")
    train_set, val_set = split_records(records, cfg.validation_fraction)
    for r in records:
        if r.input.shape != r.target.shape:
            raise ContractViolation("record input and target shapes differ")
        msfcnn._check_input(spec, r.input)

    params = init.copy() if init is not None else msfcnn.init_he(spec, cfg.seed)
    params.input_scale = input_scale(train_set)
    scale = params.input_scale
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    last_good = params.copy()
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set)) if cfg.shuffle else np.arange(len(train_set))
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            x, y = _stack(batch, scale)
            loss, grads = loss_and_grads(params, x, y)
            loss *= scale * scale
            step += 1
            if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                raise TrainingDiverged(f"training diverged at step {step} (loss {loss})",
                                       last_good, history)
            try:
                arrays, state = adam_step(params.arrays(), _clip(grads, cfg.clip_norm),
                                          state, step, cfg)
            except NumericFailure as exc:
                raise TrainingDiverged(str(exc), last_good, history) from exc
            params = Parameters.from_arrays(spec, arrays, scale)
            history.append({"step": step, "epoch": epoch, "train_loss": loss, "val_loss": None})
        val = evaluate_loss(params, val_set)
        history[-1]["val_loss"] = val
        last_good = params.copy()
        if checkpoint_path is not None:
            msfcnn.save_parameters(params, checkpoint_path, extra={"epoch": epoch})
        log.info("epoch %d: train %.6g val %.6g", epoch, history[-1]["train_loss"], val)
        if progress is not None:
            progress(epoch, history)
    return params, history


def write_history(history: list[dict], path) -> None:
    """Tab-separated loss table: step, epoch, train_loss, val_loss (blank when absent)."""
    lines = ["step\tepoch\ttrain_loss\tval_loss"]
    for row in history:
        val = "" if row["val_loss"] is None else repr(float(row["val_loss"]))
        lines.append(f"{row['step']}\t{row['epoch']}\t{float(row['train_loss'])!r}\t{val}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_history(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        step, epoch, tr, val = line.split("\t")
        rows.append({"step": int(step), "epoch": int(epoch), "train_loss": float(tr),
                     "val_loss": float(val) if val else None})
    return rows


# -- gradient verification --------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def relative_error(a, b, guard: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), guard)


def grad_check(spec: NetworkSpec = NetworkSpec(base_channels=2, n_scales=2, blocks_per_scale=1),
               tolerance: float = 1e-5, size: int = 16, seed: int = 0,
               params: Parameters | None = None, x=None, target=None,
               samples_per_array: int = 12, step: float = 1e-5,
               gradient_fn=None) -> GradCheckReport:
    """Compare analytic MSE gradients against central finite differences.

    Checks a random sample of entries of every parameter array plus the
    input.  ``gradient_fn(params, x, target) -> (grads, grad_input)`` can
    replace the analytic path (used to inject faults in tests).
    """
    rng = np.random.default_rng(seed)
    if params is None:
        params = msfcnn.init_he(spec, seed)
        params = Parameters.from_arrays(
            spec, {k: v + (0.1 * rng.standard_normal(v.shape) if k.endswith(".bias") else 0.0)
                   for k, v in params.arrays().items()})
    spec = params.spec
    if x is None:
        x = rng.standard_normal((size, size, 1))
    if target is None:
        target = rng.standard_normal(np.shape(x))
    x = np.asarray(x, dtype=np.float64)

    def loss_of(p: Parameters, inp) -> float:
        return mse_loss(msfcnn.run(p, inp), target)[0]

    if gradient_fn is None:
        tape: list = []
        _, g = mse_loss(msfcnn.run(params, x, tape), target)
        grads, grad_x = msfcnn.backward(params, tape, g)
    else:
        grads, grad_x = gradient_fn(params, x, target)

    arrays = params.arrays()
    report: dict[str, float] = {}
    for name, arr in list(arrays.items()) + [("input", x)]:
        analytic = grad_x if name == "input" else grads[name]
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples_per_array, flat.size), replace=False)
        errs = []
        for idx in picks:
            numeric = 0.0
            for sign in (1.0, -1.0):
                pert = flat.copy()
                pert[idx] += sign * step
                if name == "input":
                    val = loss_of(params, pert.reshape(x.shape))
                else:
                    mod = dict(arrays)
                    mod[name] = pert.reshape(arr.shape)
                    val = loss_of(Parameters.from_arrays(spec, mod), x)
                numeric += sign * val
            numeric /= 2.0 * step
            errs.append(float(relative_error(analytic.reshape(-1)[idx], numeric)))
        report[name] = max(errs)
    return GradCheckReport(report, tolerance)
