"""Frame sequences, pixel temporal signals and the per-target SNR measure.

A sequence is held as one ``(K, H, W)`` float32 array; the temporal signal of
pixel ``(x, y)`` is simply ``frames[:, y, x]``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import (
    ConfigError,
    DegenerateBackgroundError,
    FormatError,
    MissingInputError,
    RangeError,
    StructuralError,
)

FRAME_SUFFIXES = (".pgm", ".png")
CUBE_MAGIC = b"TPSC"
CUBE_VERSION = 1


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray  # (K, H, W) float32
    frame_period: Optional[float] = None

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise StructuralError(f"frames must be (K>=1, H, W), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise StructuralError("frames contain non-finite intensities")
        if arr.size and arr.min() < 0:
            raise StructuralError("frames contain negative intensities")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def K(self) -> int:
        return self.frames.shape[0]

    @property
    def H(self) -> int:
        return self.frames.shape[1]

    @property
    def W(self) -> int:
        return self.frames.shape[2]

    def signal_cube(self) -> np.ndarray:
        """All pixel signals as an ``(H, W, K)`` array (copy)."""
        return np.ascontiguousarray(self.frames.transpose(1, 2, 0))


@dataclass(frozen=True)
class TemporalSignal:
    values: np.ndarray
    origin: Optional[tuple[int, int]] = None  # (x, y); None for synthetic signals

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 1:
            raise StructuralError(f"temporal signal must be 1-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise StructuralError("temporal signal contains non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SnrStats:
    mu_target: float
    mu_background: float
    sigma_background: float
    snr: float = field(init=False)

    def __post_init__(self):
        if self.sigma_background <= 0:
            raise DegenerateBackgroundError("background standard deviation is zero")
        object.__setattr__(self, "snr", abs(self.mu_target - self.mu_background) / self.sigma_background)


# ---------------------------------------------------------------- frame files

def _frame_files(dir_path: Path) -> list[Path]:
    if not dir_path.is_dir():
        raise MissingInputError(f"frame directory not found: {dir_path}")
    files = sorted(p for p in dir_path.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if not files:
        raise MissingInputError(f"no .pgm/.png frames in {dir_path}")
    return files


def read_frame(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "I", "I;16", "I;16B", "I;16L"):
                raise FormatError(f"{path}: expected a single-channel image, got mode {im.mode}")
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"cannot read frame {path}: {exc}") from exc
    return arr.astype(np.float32)


def load_sequence(dir_path, bit_depth: Optional[int] = None, frame_period: Optional[float] = None) -> FrameSequence:
    """Read every PGM/PNG in ``dir_path`` (lexicographic order) without rescaling."""
    if bit_depth not in (None, 8, 16):
        raise ConfigError(f"bit_depth must be 8 or 16, got {bit_depth}")
    files = _frame_files(Path(dir_path))
    frames = []
    for path in files:
        arr = read_frame(path)
        if frames and arr.shape != frames[0].shape:
            raise StructuralError(
                f"frame {path.name} has shape {arr.shape}, expected {frames[0].shape} (from {files[0].name})"
            )
        if bit_depth is not None and arr.size and arr.max() > (1 << bit_depth) - 1:
            raise FormatError(f"{path.name}: values exceed {bit_depth}-bit range")
        frames.append(arr)
    return FrameSequence(np.stack(frames), frame_period=frame_period)


def save_sequence(seq: FrameSequence, dir_path, bit_depth: int = 16, fmt: str = "pgm") -> list[Path]:
    """Write frames as ``frame_00000.<fmt>``; values are rounded and clipped to the bit depth."""
    if bit_depth not in (8, 16):
        raise ConfigError(f"bit_depth must be 8 or 16, got {bit_depth}")
    if fmt not in ("pgm", "png"):
        raise ConfigError(f"unsupported frame format {fmt!r}")
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    top = (1 << bit_depth) - 1
    width = max(5, len(str(seq.K - 1)))
    paths = []
    for k in range(seq.K):
        q = np.clip(np.rint(seq.frames[k]), 0, top).astype(dtype)
        path = out / f"frame_{k:0{width}d}.{fmt}"
        Image.fromarray(q).save(path)
        paths.append(path)
    return paths


# ------------------------------------------------------------ signal extraction

def extract_signal(seq: FrameSequence, x: int, y: int) -> TemporalSignal:
    if not (0 <= x < seq.W and 0 <= y < seq.H):
        raise RangeError(f"pixel ({x}, {y}) outside {seq.W}x{seq.H} frame")
    return TemporalSignal(seq.frames[:, y, x].copy(), origin=(int(x), int(y)))


def extract_training_pool(seq: FrameSequence, stride: int) -> list[TemporalSignal]:
    """Signals on the ``stride`` lattice, row-major."""
    if int(stride) != stride or stride < 1:
        raise ConfigError(f"stride must be a positive integer, got {stride}")
    stride = int(stride)
    pool = []
    for y in range(0, seq.H, stride):
        for x in range(0, seq.W, stride):
            pool.append(TemporalSignal(seq.frames[:, y, x].copy(), origin=(x, y)))
    return pool


def frames_from_signals(cube: np.ndarray) -> np.ndarray:
    """Inverse of :meth:`FrameSequence.signal_cube`: ``(H, W, K)`` -> ``(K, H, W)``."""
    return np.ascontiguousarray(np.asarray(cube).transpose(2, 0, 1))


def center_windows(windows: np.ndarray) -> np.ndarray:
    """Subtract each window's median so the network sees the deviation from background."""
    w = np.asarray(windows, dtype=np.float32)
    return w - np.median(w, axis=-1, keepdims=True).astype(np.float32)


# -------------------------------------------------------------------- SNR

def compute_snr(seq: FrameSequence, target_pixels: Iterable[tuple[int, int, int]], half_width: int = 2) -> SnrStats:
    """SNR = |mu_T - mu_B| / sigma_B against the (2*half_width+1)^2 local window.

    The window is centred on the rounded per-frame centroid of the target
    pixels; target pixels themselves are excluded from the background.
    """
    pts = sorted(set((int(x), int(y), int(t)) for x, y, t in target_pixels))
    if not pts:
        raise ConfigError("target pixel set is empty")
    by_frame: dict[int, list[tuple[int, int]]] = {}
    for x, y, t in pts:
        if not (0 <= t < seq.K and 0 <= x < seq.W and 0 <= y < seq.H):
            raise RangeError(f"target pixel ({x}, {y}, {t}) outside the sequence")
        by_frame.setdefault(t, []).append((x, y))

    target_vals = []
    bg_vals = []
    for t, xy in by_frame.items():
        frame = seq.frames[t]
        xs = np.array([p[0] for p in xy])
        ys = np.array([p[1] for p in xy])
        target_vals.append(frame[ys, xs])
        cx = int(np.floor(xs.mean() + 0.5))
        cy = int(np.floor(ys.mean() + 0.5))
        x0, x1 = cx - half_width, cx + half_width + 1
        y0, y1 = cy - half_width, cy + half_width + 1
        if x0 < 0 or y0 < 0 or x1 > seq.W or y1 > seq.H:
            raise RangeError(f"background window around ({cx}, {cy}) at frame {t} leaves the frame")
        keep = np.ones((y1 - y0, x1 - x0), dtype=bool)
        for x, y in xy:
            if x0 <= x < x1 and y0 <= y < y1:
                keep[y - y0, x - x0] = False
        bg_vals.append(frame[y0:y1, x0:x1][keep])

    tv = np.concatenate(target_vals).astype(np.float64)
    bv = np.concatenate(bg_vals).astype(np.float64)
    return SnrStats(float(tv.mean()), float(bv.mean()), float(bv.std()))


# ------------------------------------------------------------- cube files

def save_cube(cube: np.ndarray, path) -> None:
    """Write an ``(H, W, K)`` cube in the ``TPSC`` little-endian layout."""
    arr = np.asarray(cube, dtype="<f4")
    if arr.ndim != 3:
        raise StructuralError(f"cube must be (H, W, K), got {arr.shape}")
    H, W, K = arr.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<IIII", CUBE_VERSION, H, W, K))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_cube(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"cube file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:4] != CUBE_MAGIC:
        raise FormatError(f"{path}: not a TPSC cube")
    version, H, W, K = struct.unpack("<IIII", raw[4:20])
    if version != CUBE_VERSION:
        raise FormatError(f"{path}: unsupported cube version {version}")
    n = H * W * K
    if len(raw) != 20 + 4 * n:
        raise FormatError(f"{path}: expected {n} floats, file holds {(len(raw) - 20) // 4}")
    return np.frombuffer(raw, dtype="<f4", offset=20).reshape(H, W, K).astype(np.float32)


def signals_to_cube(signals: Sequence[TemporalSignal], H: int, W: int) -> np.ndarray:
    """Re-assemble a full ``(H, W, K)`` cube from row-major per-pixel signals."""
    if len(signals) != H * W:
        raise StructuralError(f"need {H * W} signals, got {len(signals)}")
    return np.stack([s.values for s in signals]).reshape(H, W, -1)
