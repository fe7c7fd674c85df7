"""Trajectory mining over detection points with Monte Carlo parameter search.

Points become graph nodes; an edge joins two points that are spatially
close (Euclidean over x, y) and separated by a short, non-zero gap in time.
Connected components that are long enough are kept as trajectories, and a
random search over the three thresholds keeps the setting whose
trajectories score best.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .detect import DetectionPoint
from .errors import ConfigError, FormatError, MissingInputError
from .rng import derive_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MiningParams:
    d: float  # spatial distance threshold, pixels
    dt: int  # largest allowed frame gap
    l: int  # minimum trajectory length in points

    def validate(self) -> None:
        if not self.d > 0:
            raise ConfigError(f"d must be > 0, got {self.d}")
        if int(self.dt) != self.dt or self.dt < 1:
            raise ConfigError(f"dt must be an integer >= 1, got {self.dt}")
        if int(self.l) != self.l or self.l < 2:
            raise ConfigError(f"l must be an integer >= 2, got {self.l}")

    def as_dict(self) -> dict:
        return {"d": float(self.d), "dt": int(self.dt), "l": int(self.l)}


@dataclass(frozen=True)
class MiningBounds:
    d: tuple = (1.0, 10.0)
    dt: tuple = (1, 5)
    l: Optional[tuple] = None  # None -> (5, max(6, T/4)) once T is known
    n_trials: int = 100
    seed: int = 0

    def resolve(self, n_frames: int) -> "MiningBounds":
        if self.l is not None:
            return self
        return MiningBounds(self.d, self.dt, (5, max(6, n_frames // 4)), self.n_trials, self.seed)

    def validate(self) -> None:
        if self.n_trials < 1:
            raise ConfigError(f"need at least one trial, got {self.n_trials}")
        for name, (lo, hi) in (("d", self.d), ("dt", self.dt), ("l", self.l or (2, 2))):
            if lo > hi:
                raise ConfigError(f"{name} bounds reversed: ({lo}, {hi})")
        if self.d[0] <= 0:
            raise ConfigError("d bounds must be positive")
        if self.dt[0] < 1:
            raise ConfigError("dt bounds must be >= 1")
        if self.l is not None and self.l[0] < 2:
            raise ConfigError("l bounds must be >= 2")


@dataclass
class Trajectory:
    points: list  # DetectionPoint, sorted by (t, y, x)

    @property
    def length(self) -> int:
        return len(self.points)

    @property
    def span(self) -> tuple:
        return self.points[0].t, self.points[-1].t


@dataclass
class MiningResult:
    trajectories: list
    params: MiningParams
    score: float
    avg_length: float
    coverage: float
    n_trials: int = 1
    best_trial: int = 0
    trial_scores: list = field(default_factory=list)


# ------------------------------------------------------------------ graph

class _SortedPoints:
    """Points reordered by (t, x) with per-frame offsets, reused across trials."""

    def __init__(self, points: Sequence[DetectionPoint]):
        n = len(points)
        xs = np.fromiter((p.x for p in points), dtype=np.float64, count=n)
        ys = np.fromiter((p.y for p in points), dtype=np.float64, count=n)
        ts = np.fromiter((p.t for p in points), dtype=np.int64, count=n)
        self.n = n
        self.order = np.lexsort((ys, xs, ts))
        self.xs, self.ys, self.ts = xs[self.order], ys[self.order], ts[self.order]
        if n:
            self.tmin = int(self.ts[0])
            nf = int(self.ts[-1]) - self.tmin + 1
            self.frame_start = np.searchsorted(self.ts, self.tmin + np.arange(nf + 1)).astype(np.int64)
        else:
            self.tmin = 0
            self.frame_start = np.zeros(1, dtype=np.int64)

    def edges(self, d: float, dt: int) -> np.ndarray:
        if self.n == 0:
            return np.empty((0, 2), dtype=np.int64)
        ei, ej = kernels.radius_edges(self.xs, self.ys, self.ts, self.frame_start, self.tmin, d, dt)
        a, b = self.order[ei], self.order[ej]
        e = np.column_stack([np.minimum(a, b), np.maximum(a, b)])
        return e[np.lexsort((e[:, 1], e[:, 0]))]


def build_graph(points: Sequence[DetectionPoint], d: float, dt: int) -> np.ndarray:
    """Undirected edges as an ``(E, 2)`` array of input indices ``i < j``, sorted.

    ``(i, j)`` is an edge iff the (x, y) distance is at most ``d`` and
    ``0 < |t_i - t_j| <= dt``.
    """
    MiningParams(d, dt, 2).validate()
    return _SortedPoints(points).edges(d, dt)


def extract_trajectories(points: Sequence[DetectionPoint], edges: np.ndarray, l: int) -> list[Trajectory]:
    """Connected components with at least ``l`` points, each sorted by (t, y, x).

    Trajectories are ordered by their first point.
    """
    if l < 2:
        raise ConfigError(f"l must be >= 2, got {l}")
    n = len(points)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    labels = kernels.connected_components(n, edges[:, 0], edges[:, 1])
    if n == 0:
        return []
    sizes = np.bincount(labels, minlength=n)
    trajs = []
    for root in np.flatnonzero(sizes >= l):
        members = [points[i] for i in np.flatnonzero(labels == root)]
        trajs.append(Trajectory(sorted(members)))
    trajs.sort(key=lambda tr: tr.points[0])
    return trajs


def score_trajectories(trajs: Sequence[Trajectory], n_frames: int):
    """``(S, mean length, coverage)`` with ``S = count * mean length * coverage``.

    Coverage is the number of distinct frames touched by any trajectory
    divided by ``n_frames``.
    """
    if n_frames < 1:
        raise ConfigError(f"frame count must be >= 1, got {n_frames}")
    if not trajs:
        return 0.0, 0.0, 0.0
    avg = float(np.mean([tr.length for tr in trajs]))
    frames = {p.t for tr in trajs for p in tr.points}
    cov = len(frames) / n_frames
    return len(trajs) * avg * cov, avg, cov


def mine_once(points: Sequence[DetectionPoint], params: MiningParams, n_frames: int) -> MiningResult:
    """One extraction run with fixed thresholds."""
    params.validate()
    trajs = extract_trajectories(points, build_graph(points, params.d, params.dt), params.l)
    s, avg, cov = score_trajectories(trajs, n_frames)
    return MiningResult(trajs, params, s, avg, cov, 1, 0, [s])


# ------------------------------------------------------------ monte carlo

def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def sample_trial(bounds: MiningBounds, trial: int) -> MiningParams:
    """Thresholds of trial ``trial``; depends only on ``(seed, trial)``."""
    rng = derive_rng(bounds.seed, "gtm", trial)
    d = float(rng.uniform(*bounds.d))
    dt = _round_half_up(rng.uniform(*bounds.dt))
    l = _round_half_up(rng.uniform(*bounds.l))
    return MiningParams(d, dt, l)


def monte_carlo_mine(points: Sequence[DetectionPoint], bounds: MiningBounds, n_frames: int) -> MiningResult:
    """Random search over (d, dt, l) keeping the highest score.

    A later trial replaces the incumbent only with a strictly higher score.
    """
    bounds = bounds.resolve(n_frames)
    bounds.validate()
    sp = _SortedPoints(points)
    best = None
    scores = []
    for trial in range(bounds.n_trials):
        params = sample_trial(bounds, trial)
        trajs = extract_trajectories(points, sp.edges(params.d, params.dt), params.l)
        s, avg, cov = score_trajectories(trajs, n_frames)
        scores.append(s)
        if best is None or s > best.score:
            best = MiningResult(trajs, params, s, avg, cov, bounds.n_trials, trial)
    best.trial_scores = scores
    log.info("best trial %d of %d: %s, S=%.4g, %d trajectories", best.best_trial, bounds.n_trials,
             best.params.as_dict(), best.score, len(best.trajectories))
    return best


# -------------------------------------------------------------------- I/O

def write_trajectories(result: MiningResult, path) -> None:
    with open(path, "w") as fh:
        for i, tr in enumerate(result.trajectories):
            rec = {
                "id": i,
                "params": result.params.as_dict(),
                "points": [{"x": p.x, "y": p.y, "t": p.t, "score": float(p.score)} for p in tr.points],
            }
            fh.write(json.dumps(rec) + "\n")


def read_trajectories(path) -> list[Trajectory]:
    if not Path(path).is_file():
        raise MissingInputError(f"trajectory file not found: {path}")
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pts = [DetectionPoint(int(p["t"]), int(p["y"]), int(p["x"]), float(p["score"])) for p in rec["points"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{n}: bad trajectory record ({exc})") from exc
            out.append(Trajectory(sorted(pts)))
    return out


def mining_report(result: MiningResult) -> dict:
    return {
        "best_params": result.params.as_dict(),
        "S": result.score,
        "L_bar": result.avg_length,
        "C": result.coverage,
        "n_trajectories": len(result.trajectories),
        "n_trials": result.n_trials,
        "best_trial": result.best_trial,
    }


def write_report(result: MiningResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(mining_report(result), fh, indent=2)
        fh.write("\n")
