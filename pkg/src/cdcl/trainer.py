"""Mini-batch Adam training with a chronological validation split and early stopping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .data import WindowBatch
from .model import Detector

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or unusable sample set)."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 50
    patience: int = 10
    batch_size: int = 64
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate: must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs: must be >= 1, got {self.max_epochs}")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError(f"patience: must be in [1, max_epochs], got {self.patience}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size: must be >= 2, got {self.batch_size}")
        if not 0 < self.val_fraction < 1:
            raise ValueError(f"val_fraction: must be in (0, 1), got {self.val_fraction}")


class Adam:
    """Adam with bias-corrected moments, keyed by parameter name."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    final_train_loss: float = math.nan
    wall_time: float = field(default=0.0, compare=False)

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def split_train_val(samples: WindowBatch, val_fraction: float) -> tuple[WindowBatch, WindowBatch]:
    """Chronological split: the last ``ceil(fraction * n)`` samples validate."""
    n = len(samples)
    n_val = math.ceil(val_fraction * n)
    if n_val < 1 or n - n_val < 1:
        raise TrainingError(f"cannot split {n} samples with val_fraction={val_fraction}")
    return samples[: n - n_val], samples[n - n_val :]


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    # a trailing single sample is folded into the previous batch (batch norm and var_reg need two)
    chunks = [order[i : i + size] for i in range(0, len(order), size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def evaluate_loss(detector: Detector, samples: WindowBatch, batch_size: int) -> float:
    """Size-weighted mean of the eval-mode objective over sequential batches."""
    total, count = 0.0, 0
    with nx.no_grad():
        for idx in _batches(np.arange(len(samples)), batch_size):
            loss = detector.objective(samples.suspect[idx], samples.context[idx], "eval", False)
            total += loss.item() * len(idx)
            count += len(idx)
    return total / count


def train(detector: Detector, samples: WindowBatch, config: TrainConfig, on_step=None) -> tuple[Detector, TrainReport]:
    """Fit ``detector`` in place and restore its best-validation snapshot.

    ``on_step(epoch, batch_index, loss)`` is called after every optimizer step.
    """
    if len(samples) < 2:
        raise TrainingError("need at least 2 samples")
    if detector.loss.uses_bank and detector.bank is None:
        raise TrainingError(f"mode {detector.mode} needs a transformation bank")
    start = time.perf_counter()
    train_part, val_part = split_train_val(samples, config.val_fraction)
    if detector.mode == "OCC" and detector.loss.center is None:
        detector.init_center(train_part.suspect)

    rng = np.random.default_rng(config.seed)
    params = detector.parameters()
    optimizer = Adam(config.learning_rate)
    report = TrainReport()
    best_val, best_state, stale = math.inf, None, 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_part))
        epoch_total, epoch_count = 0.0, 0
        for b, idx in enumerate(_batches(order, config.batch_size)):
            for p in params.values():
                p.zero_grad()
            loss = detector.objective(train_part.suspect[idx], train_part.context[idx], "train")
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            nx.backward(loss, params.values())
            optimizer.step({k: p.data for k, p in params.items()}, {k: p.grad for k, p in params.items()})
            epoch_total += value * len(idx)
            epoch_count += len(idx)
            if on_step is not None:
                on_step(epoch, b, value)
        report.train_loss.append(epoch_total / epoch_count)
        val = evaluate_loss(detector, val_part, config.batch_size)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        report.val_loss.append(val)
        log.info("epoch %d train %.6f val %.6f", epoch, report.train_loss[-1], val)
        if val < best_val:
            best_val, stale = val, 0
            report.best_epoch = epoch
            best_state = {k: v.copy() for k, v in detector.state_arrays().items()}
        else:
            stale += 1
            if stale >= config.patience:
                report.stopped_early = epoch < config.max_epochs - 1
                break

    detector.load_arrays(best_state)
    for p in params.values():
        p.zero_grad()
    report.final_train_loss = evaluate_loss(detector, train_part, config.batch_size)
    report.wall_time = time.perf_counter() - start
    return detector, report


@dataclass
class CollapseReport:
    start_variance: float
    end_variance: float
    step_losses: list[float]
    report: TrainReport


def suspect_variance(detector: Detector, samples: WindowBatch) -> float:
    """Mean per-dimension variance of eval-mode suspect latents."""
    with nx.no_grad():
        z = detector.encoder.encode_batch(samples.suspect, "eval", False).data
    return float(z.var(axis=0).mean())


def collapse_demo(detector: Detector, samples: WindowBatch, config: TrainConfig) -> CollapseReport:
    """Train under pure CCL and record how the spread of suspect latents evolves."""
    if detector.mode != "CCL":
        raise ValueError(f"collapse_demo runs in CCL mode only, got {detector.mode}")
    losses: list[float] = []
    before = suspect_variance(detector, samples)
    detector, report = train(detector, samples, config, on_step=lambda e, b, v: losses.append(v))
    return CollapseReport(before, suspect_variance(detector, samples), losses, report)
