"""Run the reconstruction network over whole sequences and pick detection points."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError, MissingInputError, StructuralError
from .signal_io import FrameSequence, center_windows


@dataclass
class ReconstructedCube:
    values: np.ndarray  # (H, W, K) float32 in (0, 1)
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, order=True)
class DetectionPoint:
    # field order gives the (t, y, x) sort order used for output files
    t: int
    y: int
    x: int
    score: float = field(compare=False)


def window_starts(K: int, window: int, overlap: float) -> list[int]:
    """Window offsets covering ``[0, K)``; the last window is aligned to the end."""
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must lie in [0, 1), got {overlap}")
    if K <= window:
        return [0]
    hop = max(1, int(round(window * (1.0 - overlap))))
    starts = list(range(0, K - window + 1, hop))
    if starts[-1] != K - window:
        starts.append(K - window)
    return starts


def _pad_to(signals: np.ndarray, window: int) -> np.ndarray:
    K = signals.shape[1]
    if K >= window:
        return signals
    mode = "reflect" if K > 1 else "edge"
    return np.pad(signals, ((0, 0), (0, window - K)), mode=mode)


def _predict(model, windows, batch_size: int, workers: int) -> np.ndarray:
    if workers <= 1 or windows.shape[0] <= batch_size:
        return model.predict(windows, batch_size=batch_size)
    from concurrent.futures import ThreadPoolExecutor

    # the batch partition is the same for any worker count, so results are too
    chunks = [windows[s : s + batch_size] for s in range(0, windows.shape[0], batch_size)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: model.predict(c, batch_size=batch_size), chunks))
    return np.concatenate(parts, axis=0)


def reconstruct_signals(model, signals: np.ndarray, overlap: float = 0.5, batch_size: int = 256,
                        workers: int = 1) -> np.ndarray:
    """Reconstruct ``(N, K)`` pixel signals; returns ``(N, K)`` float32.

    ``model`` needs a ``window`` attribute and ``predict(windows, batch_size)``
    mapping ``(n, window)`` centred windows to outputs of the same shape.
    Overlapping windows are averaged with equal weight.
    """
    if batch_size < 1 or workers < 1:
        raise ConfigError("batch_size and workers must be >= 1")
    signals = np.asarray(signals, dtype=np.float32)
    if signals.ndim != 2:
        raise StructuralError(f"signals must be (N, K), got {signals.shape}")
    N, K = signals.shape
    L = model.window
    padded = _pad_to(signals, L)
    starts = window_starts(padded.shape[1], L, overlap)
    windows = np.concatenate([padded[:, s : s + L] for s in starts], axis=0)
    preds = _predict(model, center_windows(windows), batch_size, workers)
    acc = np.zeros(padded.shape, dtype=np.float64)
    cnt = np.zeros(padded.shape[1], dtype=np.float64)
    for i, s in enumerate(starts):
        acc[:, s : s + L] += preds[i * N : (i + 1) * N]
        cnt[s : s + L] += 1
    return (acc / cnt)[:, :K].astype(np.float32)


def reconstruct_sequence(model, seq: FrameSequence, overlap: float = 0.5, batch_size: int = 256,
                         workers: int = 1, model_id: str = "") -> ReconstructedCube:
    """Reconstruct every pixel's temporal signal of ``seq`` into an ``(H, W, K)`` cube."""
    cube = seq.signal_cube()
    H, W, K = cube.shape
    out = reconstruct_signals(model, cube.reshape(H * W, K), overlap=overlap, batch_size=batch_size,
                              workers=workers)
    prov = {"model": model_id, "window": int(model.window), "overlap": float(overlap),
            "starts": window_starts(max(K, model.window), model.window, overlap)}
    return ReconstructedCube(out.reshape(H, W, K), prov)


def extract_points(cube, tau: float) -> list[DetectionPoint]:
    """Temporal peaks with value ``>= tau``, ordered by ``(t, y, x)``.

    A point is emitted at the first frame of a run of equal values that is
    strictly above both neighbouring frames (a sequence end counts as
    lower); a run spanning the whole series is never a peak.
    """
    values = cube.values if isinstance(cube, ReconstructedCube) else np.asarray(cube)
    if values.ndim != 3:
        raise StructuralError(f"cube must be (H, W, K), got {values.shape}")
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    xs, ys, ts = kernels.local_maxima(values, tau)
    order = np.lexsort((xs, ys, ts))
    return [DetectionPoint(int(ts[i]), int(ys[i]), int(xs[i]), float(values[ys[i], xs[i], ts[i]])) for i in order]


def points_to_arrays(points: Sequence[DetectionPoint]):
    """``(x, y, t, score)`` arrays of a point list."""
    n = len(points)
    x = np.fromiter((p.x for p in points), dtype=np.int64, count=n)
    y = np.fromiter((p.y for p in points), dtype=np.int64, count=n)
    t = np.fromiter((p.t for p in points), dtype=np.int64, count=n)
    s = np.fromiter((p.score for p in points), dtype=np.float64, count=n)
    return x, y, t, s


def write_points(points: Iterable[DetectionPoint], path) -> None:
    pts = sorted(points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "t", "score"])
        for p in pts:
            w.writerow([p.x, p.y, p.t, f"{p.score:.9g}"])


def read_points(path) -> list[DetectionPoint]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"points file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x", "y", "t", "score"]:
        raise FormatError(f"{path}: expected header x,y,t,score")
    try:
        return [DetectionPoint(int(r[2]), int(r[1]), int(r[0]), float(r[3])) for r in rows[1:]]
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from exc
