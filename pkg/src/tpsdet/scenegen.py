"""Synthetic sequences: Gaussian point targets moving over a background with sensor noise.

Every frame is ``background + sum of target PSFs + noise``; the ground truth
(sub-pixel centroid per frame) is known exactly.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateBackgroundError, MissingInputError
from .rng import derive_rng
from .roceval import GroundTruth, round_half_up
from .signal_io import FrameSequence, SnrStats, compute_snr

SNR_HALF_WIDTH = 2  # the 5x5 local window of the SNR measure
BACKGROUNDS = ("flat", "gradient", "drift")


@dataclass(frozen=True)
class PsfParams:
    A: float
    sigma_x: float = 1.0
    sigma_y: float = 1.0

    def validate(self) -> None:
        if not (self.A > 0 and self.sigma_x > 0 and self.sigma_y > 0):
            raise ConfigError(f"PSF needs A, sigma_x, sigma_y > 0, got {self}")


@dataclass(frozen=True)
class TargetSpec:
    x0: float  # position at frame ``start``
    y0: float
    vx: float  # pixels per frame
    vy: float
    psf: PsfParams
    start: int = 0
    stop: Optional[int] = None  # exclusive; None = to the end of the sequence

    def frames(self, K: int) -> range:
        return range(self.start, K if self.stop is None else min(self.stop, K))

    def position(self, k: int):
        return self.x0 + self.vx * (k - self.start), self.y0 + self.vy * (k - self.start)


@dataclass(frozen=True)
class SceneConfig:
    H: int = 64
    W: int = 64
    K: int = 300
    background: str = "flat"
    level: float = 100.0
    # gradient: level + gx * x + gy * y; drift: level + amp * sin(...) moving over time
    gradient: tuple = (0.2, 0.1)
    drift_amplitude: float = 5.0
    drift_period: float = 200.0  # frames per cycle
    drift_wavelength: float = 48.0  # pixels
    noise_sigma: float = 5.0
    targets: tuple = ()
    seed: int = 0

    def validate(self) -> None:
        if min(self.H, self.W, self.K) < 1:
            raise ConfigError(f"scene dimensions must be positive, got {self.H}x{self.W}x{self.K}")
        if self.background not in BACKGROUNDS:
            raise ConfigError(f"background must be one of {BACKGROUNDS}, got {self.background!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.drift_period <= 0 or self.drift_wavelength <= 0:
            raise ConfigError("drift period and wavelength must be positive")
        for i, tg in enumerate(self.targets):
            tg.psf.validate()
            fr = tg.frames(self.K)
            if tg.start < 0 or len(fr) < 1:
                raise ConfigError(f"target {i} has an empty lifetime")
            for k in (fr[0], fr[-1]):  # straight paths: checking the ends suffices
                x, y = tg.position(k)
                if not (0 <= x <= self.W - 1 and 0 <= y <= self.H - 1):
                    raise ConfigError(f"target {i} leaves the frame at frame {k} ({x:.2f}, {y:.2f})")


@dataclass
class Scene:
    sequence: FrameSequence
    ground_truth: GroundTruth
    snr: list  # SnrStats or None per target


# ------------------------------------------------------------------ render

def render_psf(p: PsfParams, center, grid) -> np.ndarray:
    """``A * exp(-(dx^2 / 2 sx^2 + dy^2 / 2 sy^2))`` on ``grid = (xx, yy)``."""
    xx, yy = grid
    dx = np.asarray(xx, dtype=np.float64) - center[0]
    dy = np.asarray(yy, dtype=np.float64) - center[1]
    return p.A * np.exp(-(dx**2 / (2 * p.sigma_x**2) + dy**2 / (2 * p.sigma_y**2)))


def _grid(cfg: SceneConfig):
    return np.meshgrid(np.arange(cfg.W, dtype=np.float64), np.arange(cfg.H, dtype=np.float64))


def background_frame(cfg: SceneConfig, k: int) -> np.ndarray:
    xx, yy = _grid(cfg)
    if cfg.background == "flat":
        return np.full((cfg.H, cfg.W), cfg.level)
    if cfg.background == "gradient":
        return cfg.level + cfg.gradient[0] * xx + cfg.gradient[1] * yy
    phase = 2 * np.pi * ((xx + 0.5 * yy) / cfg.drift_wavelength + k / cfg.drift_period)
    return cfg.level + cfg.drift_amplitude * np.sin(phase)


def target_frame(cfg: SceneConfig, k: int) -> np.ndarray:
    grid = _grid(cfg)
    out = np.zeros((cfg.H, cfg.W))
    for tg in cfg.targets:
        if k in tg.frames(cfg.K):
            out += render_psf(tg.psf, tg.position(k), grid)
    return out


def noise_frame(cfg: SceneConfig, k: int) -> np.ndarray:
    if cfg.noise_sigma == 0:
        return np.zeros((cfg.H, cfg.W))
    return derive_rng(cfg.seed, "scene", "noise", k).normal(0.0, cfg.noise_sigma, (cfg.H, cfg.W))


def ground_truth(cfg: SceneConfig) -> GroundTruth:
    t, x, y, a, g = [], [], [], [], []
    for i, tg in enumerate(cfg.targets):
        for k in tg.frames(cfg.K):
            px, py = tg.position(k)
            t.append(k)
            x.append(px)
            y.append(py)
            a.append(tg.psf.A)
            g.append(i)
    return GroundTruth(t, x, y, (cfg.H, cfg.W, cfg.K), np.asarray(a, dtype=np.float64), g)


def target_pixels(cfg: SceneConfig, i: int):
    """Rounded ``(x, y, t)`` centroid pixel of target ``i`` in each frame it is present."""
    tg = cfg.targets[i]
    out = []
    for k in tg.frames(cfg.K):
        px, py = tg.position(k)
        out.append((int(round_half_up(px)), int(round_half_up(py)), k))
    return out


def measurement_frames(cfg: SceneConfig, i: int, noisy_background: np.ndarray) -> FrameSequence:
    """Frames on which the SNR of target ``i`` is measured.

    Target ``i``'s centroid pixels carry the noiseless ``background +
    target`` value; every other pixel carries the noisy background without
    any target.  The local window therefore sees sensor noise only, not the
    target's own PSF tails.
    """
    frames = noisy_background.copy()
    tg = cfg.targets[i]
    grid = _grid(cfg)
    for x, y, k in target_pixels(cfg, i):
        clean = background_frame(cfg, k)[y, x] + render_psf(tg.psf, tg.position(k), (grid[0][y, x], grid[1][y, x]))
        frames[k, y, x] = clean
    return FrameSequence(frames)


def generate_sequence(cfg: SceneConfig) -> Scene:
    """Render the scene and measure each target's SNR (see :func:`measurement_frames`)."""
    cfg.validate()
    frames = np.empty((cfg.K, cfg.H, cfg.W), dtype=np.float32)
    noisy_bg = np.empty((cfg.K, cfg.H, cfg.W), dtype=np.float32)
    for k in range(cfg.K):
        bg = background_frame(cfg, k) + noise_frame(cfg, k)
        # intensities are physical, so negatives are clipped (never reached at the default level)
        noisy_bg[k] = np.maximum(bg, 0.0)
        frames[k] = np.maximum(bg + target_frame(cfg, k), 0.0)
    seq = FrameSequence(frames)
    snr = []
    for i in range(len(cfg.targets)):
        try:
            snr.append(compute_snr(measurement_frames(cfg, i, noisy_bg), target_pixels(cfg, i), SNR_HALF_WIDTH))
        except DegenerateBackgroundError:
            snr.append(None)
    return Scene(seq, ground_truth(cfg), snr)


# ------------------------------------------------------------- back-solve

def solve_amplitude(target: TargetSpec, cfg: SceneConfig, snr: float) -> float:
    """Amplitude whose expected measured SNR is ``snr``.

    The target contrast at its centroid pixel is ``A * c`` with ``c`` the
    mean unit-PSF value there (below 1 for sub-pixel positions), against a
    background spread of ``noise_sigma``, so ``A = snr * sigma / c``.
    """
    if snr <= 0:
        raise ConfigError("snr must be positive")
    if cfg.noise_sigma <= 0:
        raise ConfigError("an SNR target needs noise_sigma > 0")
    unit = replace(target.psf, A=1.0)
    c = []
    for k in target.frames(cfg.K):
        px, py = target.position(k)
        c.append(float(render_psf(unit, (px, py), (round_half_up(px), round_half_up(py)))))
    return snr * cfg.noise_sigma / float(np.mean(c))


def random_targets(cfg: SceneConfig, n: int, rng: np.random.Generator, speed=(0.5, 1.0), psf_sigma: float = 1.0,
                   lifetime=(80, 140), margin: int = 4) -> tuple:
    """``n`` straight-line targets with staggered starts that stay ``margin`` px inside the frame."""
    out = []
    lo_x, hi_x = margin, cfg.W - 1 - margin
    lo_y, hi_y = margin, cfg.H - 1 - margin
    for i in range(n):
        for _ in range(1000):
            life = int(rng.integers(lifetime[0], lifetime[1] + 1))
            life = min(life, cfg.K)
            start = int(rng.integers(0, cfg.K - life + 1))
            sp = rng.uniform(*speed)
            ang = rng.uniform(0, 2 * np.pi)
            vx, vy = sp * np.cos(ang), sp * np.sin(ang)
            x0, y0 = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
            x1, y1 = x0 + vx * (life - 1), y0 + vy * (life - 1)
            if lo_x <= x1 <= hi_x and lo_y <= y1 <= hi_y:
                out.append(TargetSpec(float(x0), float(y0), float(vx), float(vy),
                                      PsfParams(1.0, psf_sigma, psf_sigma), start, start + life))
                break
        else:
            raise ConfigError("could not place a target path inside the frame; shorten lifetimes or slow targets")
    return tuple(out)


def default_scene(snr: float = 3.0, n_targets: int = 3, seed: int = 0, **overrides) -> SceneConfig:
    """64x64x300 flat-background scene with targets scaled to the requested SNR."""
    cfg = SceneConfig(seed=seed, **overrides)
    rng = derive_rng(seed, "scene", "targets")
    # lifetimes of 4/15 to 7/15 of the sequence: 80-140 frames at the default K = 300
    lifetime = (max(2, cfg.K * 4 // 15), max(2, cfg.K * 7 // 15))
    targets = random_targets(cfg, n_targets, rng, lifetime=lifetime)
    targets = tuple(replace(t, psf=replace(t.psf, A=solve_amplitude(t, cfg, snr))) for t in targets)
    return replace(cfg, targets=targets)


def background_only(cfg: SceneConfig, seed: Optional[int] = None) -> SceneConfig:
    """Same background and noise model without targets (a fresh noise stream if ``seed`` is given)."""
    return replace(cfg, targets=(), seed=cfg.seed if seed is None else seed)


# --------------------------------------------------------------- file I/O

_SCENE_KEYS = ("H", "W", "K", "background", "level", "gradient", "drift_amplitude", "drift_period",
               "drift_wavelength", "noise_sigma", "seed")
_TARGET_KEYS = ("x0", "y0", "vx", "vy", "A", "sigma_x", "sigma_y", "start", "stop")


def write_scene_config(cfg: SceneConfig, path) -> None:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["scene"] = {}
    for key in _SCENE_KEYS:
        v = getattr(cfg, key)
        cp["scene"][key] = ", ".join(repr(float(u)) for u in v) if key == "gradient" else (
            repr(v) if isinstance(v, float) else str(v))
    for i, tg in enumerate(cfg.targets):
        cp[f"target.{i}"] = {
            "x0": repr(tg.x0), "y0": repr(tg.y0), "vx": repr(tg.vx), "vy": repr(tg.vy),
            "A": repr(tg.psf.A), "sigma_x": repr(tg.psf.sigma_x), "sigma_y": repr(tg.psf.sigma_y),
            "start": str(tg.start), "stop": "" if tg.stop is None else str(tg.stop),
        }
    with open(path, "w") as fh:
        cp.write(fh)


def read_scene_config(path) -> SceneConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"scene file not found: {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep "A", "H", "W", "K" as written
    try:
        cp.read(path)
        sec = cp["scene"]
        unknown = set(sec) - set(_SCENE_KEYS)
        if unknown:
            raise ConfigError(f"{path}: unknown scene keys {sorted(unknown)}")
        kw = {}
        for key in _SCENE_KEYS:
            if key not in sec:
                continue
            raw = sec[key]
            default = getattr(SceneConfig, key) if key != "gradient" else None
            if key == "gradient":
                kw[key] = tuple(float(u) for u in raw.split(","))
            elif isinstance(default, bool) or key == "background":
                kw[key] = raw.strip()
            elif isinstance(default, int):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        targets = []
        for name in sorted((s for s in cp.sections() if s.startswith("target.")), key=lambda s: int(s.split(".")[1])):
            t = cp[name]
            unknown = set(t) - set(_TARGET_KEYS)
            if unknown:
                raise ConfigError(f"{path}: unknown keys {sorted(unknown)} in [{name}]")
            stop = t.get("stop", "").strip()
            targets.append(TargetSpec(
                float(t["x0"]), float(t["y0"]), float(t.get("vx", "0")), float(t.get("vy", "0")),
                PsfParams(float(t["A"]), float(t.get("sigma_x", "1")), float(t.get("sigma_y", "1"))),
                int(t.get("start", "0")), int(stop) if stop else None))
    except (configparser.Error, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = SceneConfig(targets=tuple(targets), **kw)
    cfg.validate()
    return cfg
