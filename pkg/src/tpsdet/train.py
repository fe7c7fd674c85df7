"""Weighted reconstruction loss and the training loop."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .diffcore import Trace, adam_step
from .errors import ConfigError, NumericalError, StructuralError
from .rng import derive_rng
from .signal_io import center_windows
from .tps_synthesis import TrainingSet
from .tsrnet import TSRNet, save_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0  # weight of the target (masked MSE) term
    beta: float = 1.0  # weight of the background hinge term
    delta: float = 0.07  # background responses above this are penalised

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigError(f"need alpha, beta >= 0 with alpha + beta > 0, got {self.alpha}, {self.beta}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 1000
    epochs: int = 200
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    checkpoint_every: int = 0  # epochs between checkpoints, 0 = final weights only
    # Optional early stop: quit once the epoch loss has not improved by a
    # relative ``plateau_min_delta`` for ``plateau_patience`` epochs (0 = off).
    plateau_patience: int = 0
    plateau_min_delta: float = 1e-3

    def validate(self) -> None:
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("lr, batch_size and epochs must be positive")
        if self.checkpoint_every < 0 or self.plateau_patience < 0:
            raise ConfigError("checkpoint_every and plateau_patience must be >= 0")
        self.loss.validate()


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    loss_target: float
    loss_background: float
    wall_ms: float


# ------------------------------------------------------------------ loss

def loss_terms(pred, label, cfg: LossConfig = LossConfig()):
    """Return ``(target_term, background_term)`` as Python floats.

    The target term is the mean squared error over steps where the label is
    positive; the background term is the mean of ``max(0, pred - delta)**2``
    over the remaining steps.  An empty set contributes 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise StructuralError(f"prediction shape {pred.shape} != label shape {label.shape}")
    mask = label > 0
    n_t = int(mask.sum())
    n_b = mask.size - n_t
    lt = float(np.sum(((pred - label) ** 2)[mask]) / n_t) if n_t else 0.0
    excess = np.maximum(pred - cfg.delta, 0.0)
    lb = float(np.sum((excess**2)[~mask]) / n_b) if n_b else 0.0
    return lt, lb


def weighted_loss(pred, label, cfg: LossConfig = LossConfig()):
    """``alpha * target_term + beta * background_term`` and its gradient w.r.t. ``pred``.

    The gradient has the dtype of ``pred``.
    """
    cfg.validate()
    p64 = np.asarray(pred, dtype=np.float64)
    l64 = np.asarray(label, dtype=np.float64)
    lt, lb = loss_terms(p64, l64, cfg)
    mask = l64 > 0
    n_t = int(mask.sum())
    n_b = mask.size - n_t
    grad = np.zeros_like(p64)
    if n_t:
        grad[mask] = cfg.alpha * 2.0 * (p64[mask] - l64[mask]) / n_t
    if n_b:
        excess = np.maximum(p64[~mask] - cfg.delta, 0.0)
        grad[~mask] = cfg.beta * 2.0 * excess / n_b
    total = cfg.alpha * lt + cfg.beta * lb
    return total, grad.astype(np.asarray(pred).dtype, copy=False)


# ----------------------------------------------------------------- train

def _train_step(model: TSRNet, x, y, cfg: TrainConfig, dropout_rng):
    trace = Trace()
    out = model.forward(x[:, None, :], mode="train", rng=dropout_rng, trace=trace)
    pred = out[:, 0, :]
    total, grad = weighted_loss(pred, y, cfg.loss)
    lt, lb = loss_terms(pred, y, cfg.loss)
    if not np.isfinite(total):
        return total, lt, lb
    model.backward(trace, out, grad[:, None, :])
    return total, lt, lb


def train(
    model: TSRNet,
    dataset: TrainingSet,
    cfg: TrainConfig = TrainConfig(),
    out_dir=None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
):
    """Fit ``model`` in place with Adam; returns ``(store, history)``.

    Every epoch visits the samples in a seeded random order.  Inputs are
    median-centred per window before entering the network (the same
    preprocessing :mod:`tpsdet.detect` applies).  With ``out_dir`` the
    per-epoch history goes to ``logs/history.jsonl`` (it carries wall-clock
    times), a timing-free ``train_summary.json`` and the final
    ``weights.tpsw`` are written, and checkpoints land in ``checkpoints/``.
    ``on_epoch`` sees every :class:`EpochRecord`; returning a true value ends
    training after that epoch.
    """
    cfg.validate()
    n = len(dataset)
    if n == 0:
        raise ConfigError("training set is empty")
    if dataset.window != model.window:
        raise StructuralError(f"dataset window {dataset.window} != model window {model.window}")
    out = Path(out_dir) if out_dir is not None else None
    hist_fh = None
    if out is not None:
        (out / "logs").mkdir(parents=True, exist_ok=True)
        hist_fh = open(out / "logs" / "history.jsonl", "w")
    order_rng = derive_rng(cfg.seed, "train", "order")
    dropout_rng = derive_rng(cfg.seed, "train", "dropout")
    inputs = center_windows(dataset.inputs)
    labels = dataset.labels
    history: list[EpochRecord] = []
    best = np.inf
    stale = 0
    stopped_early = False
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            perm = order_rng.permutation(n)
            sums = np.zeros(3)
            for step, s in enumerate(range(0, n, cfg.batch_size)):
                idx = perm[s : s + cfg.batch_size]
                try:
                    total, lt, lb = _train_step(model, inputs[idx], labels[idx], cfg, dropout_rng)
                except NumericalError as exc:
                    raise NumericalError(f"epoch {epoch}, step {step}: {exc}") from exc
                if not np.isfinite(total):
                    raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
                adam_step(model.store, lr=cfg.lr)
                sums += len(idx) * np.array([total, lt, lb])
            mean = sums / n
            rec = EpochRecord(epoch, float(mean[0]), float(mean[1]), float(mean[2]),
                              round((time.perf_counter() - t0) * 1e3, 3))
            history.append(rec)
            if hist_fh is not None:
                hist_fh.write(json.dumps(asdict(rec)) + "\n")
                hist_fh.flush()
            log.info("epoch %d loss %.6f (target %.6f, background %.6f)", epoch, rec.loss, rec.loss_target,
                     rec.loss_background)
            if out is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                (out / "checkpoints").mkdir(exist_ok=True)
                save_weights(model.store, out / "checkpoints" / f"epoch_{epoch:04d}.tpsw")
            if on_epoch is not None and on_epoch(rec):
                stopped_early = True
                log.info("stop requested after epoch %d", epoch)
                break
            if cfg.plateau_patience:
                if rec.loss < best * (1.0 - cfg.plateau_min_delta):
                    best = rec.loss
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.plateau_patience:
                        log.info("loss plateaued for %d epochs; stopping at epoch %d", stale, epoch)
                        stopped_early = True
                        break
    finally:
        if hist_fh is not None:
            hist_fh.close()
    if out is not None:
        save_weights(model.store, out / "weights.tpsw")
        summary = {
            "epochs_run": len(history),
            "stopped_early": stopped_early,
            "final": {k: v for k, v in asdict(history[-1]).items() if k != "wall_ms"},
            "losses": [r.loss for r in history],
        }
        (out / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return model.store, history
