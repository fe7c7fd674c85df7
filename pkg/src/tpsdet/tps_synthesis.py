"""Temporal point supervision: Gaussian pulses injected into real background signals.

The label for a pulse is the same Gaussian with unit amplitude, so every
training pair is produced without any human annotation.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, MissingInputError
from .rng import derive_rng
from .signal_io import TemporalSignal

DATASET_MAGIC = b"TPSD"
DATASET_VERSION = 1


@dataclass(frozen=True)
class GaussianPulseParams:
    amplitude: float
    center: float
    sigma: float

    @property
    def width(self) -> float:
        """Effective temporal width, about six standard deviations."""
        return 6.0 * self.sigma


@dataclass(frozen=True)
class SamplingRanges:
    a_min: float = 10.0
    a_max: float = 30.0
    s_min: float = 5.0
    s_max: float = 15.0
    pulses_min: int = 1
    pulses_max: int = 1

    def validate(self, allow_degenerate: bool = True) -> None:
        lt = (lambda a, b: a <= b) if allow_degenerate else (lambda a, b: a < b)
        if not (self.a_min > 0 and self.s_min > 0):
            raise ConfigError("amplitude and width ranges must be positive")
        if not (lt(self.a_min, self.a_max) and lt(self.s_min, self.s_max)):
            raise ConfigError(f"invalid ranges A=({self.a_min},{self.a_max}) S=({self.s_min},{self.s_max})")
        if not (1 <= self.pulses_min <= self.pulses_max):
            raise ConfigError("pulses per signal must satisfy 1 <= min <= max")


@dataclass(frozen=True)
class TrainingSample:
    input: TemporalSignal
    label: TemporalSignal


def gaussian_pulse(p: GaussianPulseParams, length: int) -> TemporalSignal:
    if p.sigma <= 0:
        raise ConfigError(f"pulse sigma must be positive, got {p.sigma}")
    if length < 1:
        raise ConfigError("pulse length must be >= 1")
    k = np.arange(length, dtype=np.float64)
    vals = p.amplitude * np.exp(-((k - p.center) ** 2) / (2.0 * p.sigma**2))
    return TemporalSignal(vals.astype(np.float32))


def sample_params(ranges: SamplingRanges, rng: np.random.Generator, length: int) -> GaussianPulseParams:
    ranges.validate()
    a = rng.uniform(ranges.a_min, ranges.a_max)
    s = rng.uniform(ranges.s_min, ranges.s_max)
    t = rng.uniform(0.0, length - 1)
    return GaussianPulseParams(float(a), float(t), float(s / 6.0))


def synthesize_sample(background: TemporalSignal, pulses: Sequence[GaussianPulseParams]) -> TrainingSample:
    n = len(background)
    x = background.values.astype(np.float32).copy()
    label = np.zeros(n, dtype=np.float32)
    for p in pulses:
        x += gaussian_pulse(p, n).values
        unit = GaussianPulseParams(1.0, p.center, p.sigma)
        np.maximum(label, gaussian_pulse(unit, n).values, out=label)
    return TrainingSample(TemporalSignal(x, background.origin), TemporalSignal(label, background.origin))


def _fit_window(values: np.ndarray, window: int) -> np.ndarray:
    if values.shape[0] >= window:
        return values
    extra = window - values.shape[0]
    mode = "reflect" if values.shape[0] > 1 else "edge"
    return np.pad(values, (0, extra), mode=mode)


@dataclass
class TrainingSet:
    """Array-backed collection of training pairs; indexing yields :class:`TrainingSample`."""

    inputs: np.ndarray  # (N, L) float32
    labels: np.ndarray  # (N, L) float32

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, i: int) -> TrainingSample:
        return TrainingSample(TemporalSignal(self.inputs[i]), TemporalSignal(self.labels[i]))

    @property
    def window(self) -> int:
        return self.inputs.shape[1]


def build_dataset(
    pool: Sequence[TemporalSignal],
    ranges: SamplingRanges,
    n_samples: int,
    window: int = 256,
    seed: int = 0,
    p_pos: float = 0.5,
) -> TrainingSet:
    """Draw ``n_samples`` windows from ``pool`` and inject pulses with probability ``p_pos``.

    Sample ``i`` uses its own generator derived from ``(seed, i)``, so the
    result does not depend on evaluation order.
    """
    if not pool:
        raise ConfigError("background pool is empty")
    if n_samples < 1 or window < 1:
        raise ConfigError("n_samples and window must be positive")
    if not 0.0 <= p_pos <= 1.0:
        raise ConfigError(f"p_pos must lie in [0, 1], got {p_pos}")
    ranges.validate()
    padded = [_fit_window(s.values, window) for s in pool]
    inputs = np.empty((n_samples, window), dtype=np.float32)
    labels = np.empty((n_samples, window), dtype=np.float32)
    for i in range(n_samples):
        rng = derive_rng(seed, "tps-sample", i)
        src = padded[int(rng.integers(len(padded)))]
        start = int(rng.integers(src.shape[0] - window + 1))
        bg = TemporalSignal(src[start:start + window])
        pulses = []
        if rng.random() < p_pos:
            n_pulses = int(rng.integers(ranges.pulses_min, ranges.pulses_max + 1))
            pulses = [sample_params(ranges, rng, window) for _ in range(n_pulses)]
        sample = synthesize_sample(bg, pulses)
        inputs[i] = sample.input.values
        labels[i] = sample.label.values
    return TrainingSet(inputs, labels)


def save_dataset(ds: TrainingSet, path) -> None:
    n, L = ds.inputs.shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", DATASET_VERSION, n, L))
        inter = np.empty((n, 2, L), dtype="<f4")
        inter[:, 0] = ds.inputs
        inter[:, 1] = ds.labels
        fh.write(inter.tobytes())


def load_dataset(path) -> TrainingSet:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a TPSD dataset")
    version, n, L = struct.unpack("<III", raw[4:16])
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    if len(raw) != 16 + 8 * n * L:
        raise FormatError(f"{path}: truncated dataset")
    inter = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, 2, L)
    return TrainingSet(inter[:, 0].astype(np.float32), inter[:, 1].astype(np.float32))
