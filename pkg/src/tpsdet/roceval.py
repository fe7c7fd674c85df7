"""Threshold-swept detection / false-alarm evaluation and the AUC family.

For each threshold tau the detection probability is the fraction of ground
truth targets with an above-threshold pixel within a Chebyshev radius in the
same frame (one-to-one, greedy in order of descending score), and the false
alarm rate is the number of above-threshold pixels outside every target's
radius divided by the background pixel count.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, FormatError, MissingInputError, RangeError, StructuralError

AUC_KEYS = ("DF", "Dtau", "Ftau", "TD", "BS", "TD_BS", "ODP", "SNPR")


def round_half_up(v):
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass
class GroundTruth:
    """Per-frame target centroids (sub-pixel) for a sequence of shape ``(H, W, K)``."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    shape: tuple  # (H, W, K)
    amplitude: Optional[np.ndarray] = None
    target_id: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if not (self.t.shape == self.x.shape == self.y.shape):
            raise StructuralError("ground truth t, x, y must have equal length")
        if self.target_id is None:
            self.target_id = np.zeros(self.t.shape, dtype=np.int64)
        self.target_id = np.asarray(self.target_id, dtype=np.int64).reshape(-1)
        H, W, K = self.shape
        xi, yi = self.pixel_xy()
        if len(self.t) and (self.t.min() < 0 or self.t.max() >= K or xi.min() < 0 or xi.max() >= W
                            or yi.min() < 0 or yi.max() >= H):
            raise RangeError(f"ground truth lies outside the {H}x{W}x{K} cube")

    @property
    def n_targets(self) -> int:
        """Number of target instances (one per record)."""
        return int(self.t.shape[0])

    def pixel_xy(self):
        """Centroids rounded to the nearest pixel, halves upward."""
        return round_half_up(self.x), round_half_up(self.y)

    def background_pixels(self) -> int:
        """``sum over frames of H*W - (distinct target pixels in that frame)``."""
        H, W, K = self.shape
        xi, yi = self.pixel_xy()
        n_target_px = len({(int(t), int(x), int(y)) for t, x, y in zip(self.t, xi, yi)})
        return H * W * K - n_target_px

    def lifetimes(self) -> dict:
        """``{target_id: sorted frame array}``."""
        return {int(g): np.sort(self.t[self.target_id == g]) for g in np.unique(self.target_id)}


def write_ground_truth(gt: GroundTruth, path) -> None:
    amp = gt.amplitude if gt.amplitude is not None else np.zeros(gt.n_targets)
    order = np.lexsort((gt.target_id, gt.t))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "A", "id"])
        for i in order:
            w.writerow([int(gt.t[i]), repr(float(gt.x[i])), repr(float(gt.y[i])), repr(float(amp[i])),
                        int(gt.target_id[i])])


def read_ground_truth(path, shape) -> GroundTruth:
    """Read a ``t,x,y,A[,id]`` CSV; ``shape`` is the cube's ``(H, W, K)``."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"ground truth file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != ["t", "x", "y", "A"]:
        raise FormatError(f"{path}: expected header t,x,y,A[,id]")
    has_id = len(rows[0]) > 4 and rows[0][4] == "id"
    try:
        body = rows[1:]
        t = [int(r[0]) for r in body]
        x = [float(r[1]) for r in body]
        y = [float(r[2]) for r in body]
        a = [float(r[3]) for r in body]
        g = [int(r[4]) for r in body] if has_id else None
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from exc
    return GroundTruth(t, x, y, tuple(shape), np.asarray(a), g)


# ----------------------------------------------------------- matching core

def _values(cube) -> np.ndarray:
    values = getattr(cube, "values", cube)
    values = np.asarray(values)
    if values.ndim != 3:
        raise StructuralError(f"cube must be (H, W, K), got {values.shape}")
    return values


def _near_mask(gt: GroundTruth, radius: int) -> np.ndarray:
    """Boolean ``(H, W, K)``: within Chebyshev ``radius`` of a target of the same frame."""
    H, W, K = gt.shape
    mask = np.zeros((H, W, K), dtype=bool)
    xi, yi = gt.pixel_xy()
    for t, x, y in zip(gt.t, xi, yi):
        mask[max(0, y - radius) : y + radius + 1, max(0, x - radius) : x + radius + 1, t] = True
    return mask


def detection_scores(cube, gt: GroundTruth, radius: int = 3) -> np.ndarray:
    """Score at which each target becomes detected (``-inf`` if never).

    Within a frame, candidate pixels are visited by descending value (ties by
    row, then column) and each takes the nearest unmatched target in reach
    (Chebyshev distance, then Euclidean, then record order).  Because the
    visit order does not depend on tau, the matches at any tau are exactly
    the matches made before the first pixel below tau, so target ``g`` is
    detected at tau iff ``scores[g] >= tau``.
    """
    values = _values(cube)
    if values.shape != tuple(gt.shape):
        raise StructuralError(f"cube shape {values.shape} != ground truth shape {tuple(gt.shape)}")
    H, W, K = values.shape
    scores = np.full(gt.n_targets, -np.inf)
    xi, yi = gt.pixel_xy()
    for t in np.unique(gt.t):
        idx = np.flatnonzero(gt.t == t)
        cand = set()
        for g in idx:
            for y in range(max(0, yi[g] - radius), min(H, yi[g] + radius + 1)):
                for x in range(max(0, xi[g] - radius), min(W, xi[g] + radius + 1)):
                    cand.add((y, x))
        cand = sorted(cand, key=lambda yx: (-float(values[yx[0], yx[1], t]), yx[0], yx[1]))
        free = set(idx.tolist())
        for y, x in cand:
            if not free:
                break
            best = None
            for g in free:
                cheb = max(abs(x - xi[g]), abs(y - yi[g]))
                if cheb <= radius:
                    key = (cheb, (x - xi[g]) ** 2 + (y - yi[g]) ** 2, g)
                    if best is None or key < best:
                        best = key
            if best is not None:
                scores[best[2]] = float(values[y, x, t])
                free.discard(best[2])
    return scores


@dataclass
class ConfusionCounts:
    n_detected: int
    n_targets: int
    n_false: int
    n_background: int


def pd_fa_at_tau(cube, gt: GroundTruth, tau: float, match_radius: int = 3):
    """``(P_d, F_a, ConfusionCounts)`` at one threshold (inclusive ``>= tau``)."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    values = _values(cube)
    det = detection_scores(values, gt, match_radius)
    n_d = int(np.sum(det >= tau))
    n_f = int(np.count_nonzero((values >= tau) & ~_near_mask(gt, match_radius)))
    n_b = gt.background_pixels()
    counts = ConfusionCounts(n_d, gt.n_targets, n_f, n_b)
    pd = n_d / gt.n_targets if gt.n_targets else 0.0
    return pd, (n_f / n_b if n_b else 0.0), counts


# ------------------------------------------------------------------ curves

@dataclass
class RocReport:
    taus: np.ndarray
    pd: np.ndarray
    fa: np.ndarray
    aucs: dict = field(default_factory=dict)
    match_radius: int = 3

    def to_json(self) -> dict:
        return {
            "grid": [float(v) for v in self.taus],
            "curves": {"tau": [float(v) for v in self.taus], "pd": [float(v) for v in self.pd],
                       "fa": [float(v) for v in self.fa]},
            "aucs": {k: _json_float(v) for k, v in self.aucs.items()},
            "match_radius": self.match_radius,
        }


def _json_float(v):
    # JSON has no infinity; the unbounded ratio is written as the string "inf"
    return "inf" if math.isinf(v) else float(v)


def default_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64).reshape(-1)
    if g.size < 2 or np.any(np.diff(g) <= 0):
        raise ConfigError("tau grid must be strictly ascending with at least two values")
    if g[0] != 0.0 or g[-1] != 1.0:
        raise ConfigError("tau grid must start at 0 and end at 1")
    return g


def roc_curves(cube, gt: GroundTruth, grid=None, match_radius: int = 3) -> RocReport:
    """P_d(tau) and F_a(tau) over ``grid`` (default: 101 points on [0, 1])."""
    taus = _check_grid(default_grid() if grid is None else grid)
    values = _values(cube)
    det = np.sort(detection_scores(values, gt, match_radius))
    bg = np.sort(values[~_near_mask(gt, match_radius)].astype(np.float64))
    n_b = gt.background_pixels()
    # counts of entries >= tau via binary search on the sorted arrays
    n_d = det.size - np.searchsorted(det, taus, side="left")
    n_f = bg.size - np.searchsorted(bg, taus, side="left")
    pd = n_d / gt.n_targets if gt.n_targets else np.zeros_like(taus)
    fa = n_f / n_b if n_b else np.zeros_like(taus)
    return RocReport(taus, np.asarray(pd, dtype=np.float64), np.asarray(fa, dtype=np.float64),
                     match_radius=match_radius)


def _trapz(y, x) -> float:
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) * 0.5))


def auc_df(fa, pd) -> float:
    """Area under P_d over F_a on [0, 1], with constant continuation to both ends."""
    order = np.lexsort((pd, fa))
    f = np.asarray(fa, dtype=np.float64)[order]
    d = np.asarray(pd, dtype=np.float64)[order]
    f = np.concatenate([[0.0], f, [1.0]])
    d = np.concatenate([[d[0]], d, [d[-1]]])
    return _trapz(d, f)


def derived_aucs(df: float, dtau: float, ftau: float) -> dict:
    return {
        "DF": df,
        "Dtau": dtau,
        "Ftau": ftau,
        "TD": df + dtau,
        "BS": df - ftau,
        "TD_BS": dtau - ftau,
        "ODP": dtau + (1.0 - ftau),
        "SNPR": dtau / ftau if ftau != 0 else math.inf,
    }


def auc_metrics(report: RocReport) -> dict:
    """Fill ``report.aucs`` with the eight area metrics and return them."""
    df = auc_df(report.fa, report.pd)
    dtau = _trapz(report.pd, report.taus)
    ftau = _trapz(report.fa, report.taus)
    report.aucs = derived_aucs(df, dtau, ftau)
    return report.aucs


def evaluate(cube, gt: GroundTruth, grid=None, match_radius: int = 3) -> RocReport:
    report = roc_curves(cube, gt, grid, match_radius)
    auc_metrics(report)
    return report


# --------------------------------------------------------- point outputs

def render_points_cube(points, shape) -> np.ndarray:
    """Binary ``(H, W, K)`` cube with 1 at each point's ``(y, x, t)``."""
    H, W, K = shape
    cube = np.zeros((H, W, K), dtype=np.float32)
    for p in points:
        if not (0 <= p.x < W and 0 <= p.y < H and 0 <= p.t < K):
            raise RangeError(f"point {p} outside {H}x{W}x{K}")
        cube[p.y, p.x, p.t] = 1.0
    return cube


def trajectory_recovery(trajectories, gt: GroundTruth, radius: int = 3) -> dict:
    """``{target_id: fraction}`` of each target's lifetime recovered by its own trajectory.

    A trajectory point matches a target when it lies within Chebyshev
    ``radius`` of that target's position in the same frame.  Each trajectory
    is credited to one target only: the one it matches most points of (ties
    go to the lower id).  A component that swallows several targets therefore
    recovers at most one of them.  The fraction is the frame span
    (last - first + 1) of the credited trajectory's matched points divided by
    the number of frames the target is present; the best trajectory counts.
    """
    xi, yi = gt.pixel_xy()
    where = {}
    for i in range(gt.n_targets):
        where.setdefault(int(gt.t[i]), []).append((int(gt.target_id[i]), int(xi[i]), int(yi[i])))
    lifetimes = gt.lifetimes()
    out = {g: 0.0 for g in lifetimes}
    for tr in trajectories:
        hits: dict = {}
        for p in tr.points:
            for g, x, y in where.get(p.t, ()):
                if max(abs(p.x - x), abs(p.y - y)) <= radius:
                    hits.setdefault(g, []).append(p.t)
        if not hits:
            continue
        g = min(hits, key=lambda k: (-len(hits[k]), k))
        ts = hits[g]
        out[g] = max(out[g], min((max(ts) - min(ts) + 1) / len(lifetimes[g]), 1.0))
    return out


# ----------------------------------------------------------------- output

def write_report(report: RocReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")


def write_curves_csv(report: RocReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "pd", "fa"])
        for t, d, f in zip(report.taus, report.pd, report.fa):
            w.writerow([repr(float(t)), repr(float(d)), repr(float(f))])


def plot_curves_svg(report: RocReport, path) -> None:
    """Three panels: P_d over F_a, P_d over tau, F_a over tau."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "tpsdet", "svg.fonttype": "path"}):
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
        panels = [(report.fa, report.pd, "F_a", "P_d"), (report.taus, report.pd, "tau", "P_d"),
                  (report.taus, report.fa, "tau", "F_a")]
        for ax, (x, y, xl, yl) in zip(axes, panels):
            ax.plot(x, y, lw=1.5)
            ax.set_xlabel(xl)
            ax.set_ylabel(yl)
            ax.grid(alpha=0.3)
        if report.aucs:
            axes[0].set_title(f"AUC {report.aucs['DF']:.4f}")
            axes[1].set_title(f"AUC {report.aucs['Dtau']:.4f}")
            axes[2].set_title(f"AUC {report.aucs['Ftau']:.3e}")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
