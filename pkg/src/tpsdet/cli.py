"""Command line front end: ``tpsdet <command> [--config FILE] [--seed N] [--set section.key=value] ...``.

Every command resolves and checks its inputs before it creates anything, so a
missing file leaves the output directory untouched.  Failures print a single
line ``tpsdet: error: <ErrorClass>: <message>`` on stderr and exit with the
class's code (see :mod:`tpsdet.errors`).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import _accel
from .config import PipelineConfig, load_config
from .detect import extract_points, window_starts, read_points, reconstruct_sequence, write_points
from .errors import ConfigError, MissingInputError, TpsError
from .gtm import monte_carlo_mine, read_trajectories, write_report as write_mining_report, write_trajectories
from .rng import derive_seed
from .roceval import (
    evaluate, plot_curves_svg, read_ground_truth, render_points_cube, trajectory_recovery, write_curves_csv,
    write_ground_truth, write_report,
)
from .scenegen import background_only, default_scene, generate_sequence, read_scene_config, write_scene_config
from .signal_io import (
    FrameSequence, extract_training_pool, frames_from_signals, load_cube, load_sequence, save_cube, save_sequence,
)
from .tps_synthesis import build_dataset, load_dataset, save_dataset
from .train import train as train_model
from .tsrnet import build_model, load_weights, model_from_store

log = logging.getLogger("tpsdet")

COMMANDS = ("simulate", "extract", "synth", "train", "infer", "mine", "eval", "pipeline", "bench")

# artifact layout inside the run directory
SCENE_FRAMES = "scene/frames"
SCENE_GT = "scene/ground_truth.csv"
SCENE_INI = "scene/scene.ini"
SCENE_SNR = "scene/snr.json"
BACKGROUND_FRAMES = "background/frames"
SIGNALS = "signals.tpsc"
BACKGROUND_SIGNALS = "background.tpsc"
DATASET = "dataset.tpsd"
MODEL_DIR = "model"
WEIGHTS = "model/weights.tpsw"
RECON = "recon.tpsc"
RECON_META = "recon.json"
POINTS = "points.csv"
TRAJECTORIES = "trajectories.jsonl"
MINING = "mining.json"
ROC_JSON = "roc.json"
ROC_CSV = "roc.csv"
ROC_SVG = "roc.svg"
GTM_EVAL = "gtm_eval.json"
BENCH = "bench.json"


def sub_seed(root: int, name: str) -> int:
    """32-bit seed for a module stream derived from the root seed."""
    return int(derive_seed(root, name).generate_state(1)[0])


def model_id(weights_path) -> str:
    return hashlib.sha256(Path(weights_path).read_bytes()).hexdigest()[:16]


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class Run:
    """Resolved configuration plus path lookups for one invocation."""

    def __init__(self, cfg: PipelineConfig, args):
        self.cfg = cfg
        self.args = args
        out = getattr(args, "out", None) or cfg.get("run", "out_dir")
        self.out = Path(out)
        if not self.out.is_absolute() and cfg.source is not None and getattr(args, "out", None) is None:
            self.out = cfg.source.parent / self.out

    def artifact(self, rel: str) -> Path:
        return self.out / rel

    def input(self, flag: str, rel: str, cfg_key=None, what: str = "input") -> Path:
        """Path from ``--flag``, else the config key, else the run-dir default; must exist."""
        p = getattr(self.args, flag, None)
        if p is None and cfg_key is not None:
            p = self.cfg.path(*cfg_key)
        p = Path(p) if p is not None else self.artifact(rel)
        if not p.exists():
            raise MissingInputError(f"{what} not found: {p}")
        return p

    def prepare(self, *subdirs) -> None:
        for d in ("",) + subdirs:
            (self.out / d).mkdir(parents=True, exist_ok=True)


# ------------------------------------------------------------- commands

def scene_config(cfg: PipelineConfig):
    path = cfg.path("scene", "file")
    if path is not None:
        return read_scene_config(path)
    g = cfg.get
    return default_scene(g("scene", "snr"), g("scene", "n_targets"), seed=sub_seed(cfg.seed, "scene"),
                         H=g("scene", "H"), W=g("scene", "W"), K=g("scene", "K"), background=g("scene", "background"),
                         level=g("scene", "level"), noise_sigma=g("scene", "noise_sigma"))


def cmd_simulate(run: Run) -> dict:
    """Render the scene and a target-free sequence from the same background/noise model."""
    sc = scene_config(run.cfg)
    scene = generate_sequence(sc)
    bg = generate_sequence(background_only(sc, seed=sub_seed(run.cfg.seed, "background"))).sequence
    run.prepare("scene", "background")
    depth = run.cfg.get("scene", "bit_depth")
    save_sequence(scene.sequence, run.artifact(SCENE_FRAMES), bit_depth=depth)
    save_sequence(bg, run.artifact(BACKGROUND_FRAMES), bit_depth=depth)
    write_ground_truth(scene.ground_truth, run.artifact(SCENE_GT))
    write_scene_config(sc, run.artifact(SCENE_INI))
    snr = [None if s is None else {"snr": s.snr, "mu_target": s.mu_target, "mu_background": s.mu_background,
                  "sigma_background": s.sigma_background}
           for s in scene.snr]
    _dump_json({"targets": snr}, run.artifact(SCENE_SNR))
    return {"frames": str(run.artifact(SCENE_FRAMES)), "targets": len(sc.targets)}


def cmd_extract(run: Run) -> dict:
    """Frame directories -> pixel-signal cubes (analysis sequence and, when present, the background one)."""
    frames = run.input("frames", SCENE_FRAMES, ("data", "frames"), "frame directory")
    bg_flag = getattr(run.args, "background", None) or run.cfg.path("data", "background_frames")
    bg = Path(bg_flag) if bg_flag is not None else run.artifact(BACKGROUND_FRAMES)
    if bg_flag is not None and not bg.exists():
        raise MissingInputError(f"background frame directory not found: {bg}")
    depth = run.cfg.get("data", "bit_depth")
    seq = load_sequence(frames, bit_depth=depth)
    bg_seq = load_sequence(bg, bit_depth=depth) if bg.exists() else None
    run.prepare()
    save_cube(seq.signal_cube(), run.artifact(SIGNALS))
    if bg_seq is not None:
        save_cube(bg_seq.signal_cube(), run.artifact(BACKGROUND_SIGNALS))
    return {"shape": list(seq.signal_cube().shape), "background": bg_seq is not None}


def cmd_synth(run: Run) -> dict:
    """Background signals -> TPS training set."""
    src = run.input("background_signals", BACKGROUND_SIGNALS, None, "background signal cube")
    cube = load_cube(src)
    g = run.cfg.get
    pool = extract_training_pool(FrameSequence(frames_from_signals(cube)), g("synthesis", "stride"))
    ds = build_dataset(pool, run.cfg.sampling_ranges(), g("synthesis", "n_samples"), window=g("model", "window"),
                       seed=sub_seed(run.cfg.seed, "synthesis"), p_pos=g("synthesis", "p_pos"))
    run.prepare()
    save_dataset(ds, run.artifact(DATASET))
    return {"samples": len(ds), "pool": len(pool)}


def cmd_train(run: Run) -> dict:
    src = run.input("dataset", DATASET, None, "training set")
    ds = load_dataset(src)
    model = build_model(run.cfg.model_config(), seed=sub_seed(run.cfg.seed, "model"))
    run.prepare(MODEL_DIR)
    _, history = train_model(model, ds, run.cfg.train_config(), out_dir=run.artifact(MODEL_DIR))
    return {"epochs": len(history), "loss": history[-1].loss}


def _load_model(run: Run):
    path = run.input("weights", WEIGHTS, None, "weight file")
    mcfg = run.cfg.model_config()
    return model_from_store(mcfg, load_weights(path, mcfg)), model_id(path)


def cmd_infer(run: Run) -> dict:
    """Signals + weights -> reconstructed cube, extracted points."""
    src = run.input("signals", SIGNALS, None, "signal cube")
    model, mid = _load_model(run)
    g = run.cfg.get
    seq = FrameSequence(frames_from_signals(load_cube(src)))
    rec = reconstruct_sequence(model, seq, overlap=g("detect", "overlap"), batch_size=g("detect", "batch_size"),
                               workers=g("run", "workers"), model_id=mid)
    pts = extract_points(rec.values, g("detect", "tau"))
    run.prepare()
    save_cube(rec.values, run.artifact(RECON))
    write_points(pts, run.artifact(POINTS))
    _dump_json({**rec.provenance, "tau": g("detect", "tau"), "shape": list(rec.shape), "n_points": len(pts)},
               run.artifact(RECON_META))
    return {"points": len(pts), "model": mid}


def _n_frames(run: Run) -> int:
    meta = run.artifact(RECON_META)
    if getattr(run.args, "points", None) is None and meta.is_file():
        return int(json.loads(meta.read_text())["shape"][2])
    cube = run.input("cube", RECON, None, "reconstructed cube")
    return int(load_cube(cube).shape[2])


def cmd_mine(run: Run) -> dict:
    src = run.input("points", POINTS, None, "point file")
    K = _n_frames(run)
    pts = read_points(src)
    res = monte_carlo_mine(pts, run.cfg.mining_bounds(), K)
    run.prepare()
    write_trajectories(res, run.artifact(TRAJECTORIES))
    write_mining_report(res, run.artifact(MINING))
    return {"trajectories": len(res.trajectories), "params": res.params.as_dict()}


def cmd_eval(run: Run) -> dict:
    """ROC of the reconstructed cube and, when trajectories exist, of the mined points."""
    cube_path = run.input("cube", RECON, None, "reconstructed cube")
    gt_path = run.input("gt", SCENE_GT, ("data", "ground_truth"), "ground truth")
    traj_flag = getattr(run.args, "trajectories", None)
    traj_path = Path(traj_flag) if traj_flag is not None else run.artifact(TRAJECTORIES)
    if traj_flag is not None and not traj_path.is_file():
        raise MissingInputError(f"trajectory file not found: {traj_path}")
    cube = load_cube(cube_path)
    gt = read_ground_truth(gt_path, cube.shape)
    trajs = read_trajectories(traj_path) if traj_path.is_file() else None
    g = run.cfg.get
    grid = np.linspace(0.0, 1.0, g("eval", "grid_points"))
    radius = g("eval", "match_radius")
    report = evaluate(cube, gt, grid, radius)
    gtm = None
    if trajs is not None:
        pts = [p for tr in trajs for p in tr.points]
        pt_report = evaluate(render_points_cube(pts, cube.shape), gt, grid, radius)
        recovery = trajectory_recovery(trajs, gt, radius)
        gtm = {"aucs": pt_report.to_json()["aucs"], "recovery": {str(k): v for k, v in sorted(recovery.items())},
               "n_trajectories": len(trajs)}
    run.prepare()
    write_report(report, run.artifact(ROC_JSON))
    if g("eval", "csv"):
        write_curves_csv(report, run.artifact(ROC_CSV))
    if g("eval", "svg"):
        plot_curves_svg(report, run.artifact(ROC_SVG))
    if gtm is not None:
        _dump_json(gtm, run.artifact(GTM_EVAL))
    return {"aucs": report.to_json()["aucs"], "gtm": gtm}


def cmd_pipeline(run: Run) -> dict:
    """simulate (unless frames are given) -> extract -> synth -> train -> infer -> mine -> eval."""
    if run.cfg.path("data", "frames") is None and getattr(run.args, "frames", None) is None:
        cmd_simulate(run)
    out = {}
    for name, fn in (("extract", cmd_extract), ("synth", cmd_synth), ("train", cmd_train), ("infer", cmd_infer),
                     ("mine", cmd_mine), ("eval", cmd_eval)):
        log.info("pipeline: %s", name)
        out[name] = fn(run)
    return out


def bench_throughput(model, H: int, W: int, K: int, batch_size: int, workers: int, repeats: int, seed: int) -> dict:
    """Time full-cube reconstruction of an ``(H, W, K)`` noise cube; the best of ``repeats`` runs counts."""
    rng = np.random.default_rng(seed)
    seq = FrameSequence((100.0 + 5.0 * rng.standard_normal((K, H, W))).astype(np.float32))
    n_windows = H * W * len(window_starts(max(K, model.window), model.window, 0.5))
    # warm-up: the first call pays for JIT compilation and buffer allocation
    reconstruct_sequence(model, FrameSequence(seq.frames[:, :2, :2]), overlap=0.5, batch_size=batch_size)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        reconstruct_sequence(model, seq, overlap=0.5, batch_size=batch_size, workers=workers)
        best = min(best, time.perf_counter() - t0)
    return {
        "cube": [H, W, K], "window": int(model.window), "overlap": 0.5, "batch_size": batch_size, "workers": workers,
        "windows": int(n_windows), "seconds": best, "windows_per_second": n_windows / best,
        "frames_per_second": K / best, "repeats": repeats, "backend": _accel.backend(),
    }


def cmd_bench(run: Run) -> dict:
    """Inference throughput on a synthetic cube, with trained weights if present, else a fresh init."""
    flag = getattr(run.args, "weights", None)
    if flag is not None or run.artifact(WEIGHTS).is_file():
        model, mid = _load_model(run)
    else:
        model, mid = build_model(run.cfg.model_config(), seed=sub_seed(run.cfg.seed, "model")), "untrained"
    g = run.cfg.get
    if g("bench", "repeats") < 1:
        raise ConfigError("bench.repeats must be >= 1")
    res = bench_throughput(model, g("bench", "H"), g("bench", "W"), g("bench", "K"), g("detect", "batch_size"),
                           g("run", "workers"), g("bench", "repeats"), sub_seed(run.cfg.seed, "bench"))
    res["model"] = mid
    run.prepare()
    _dump_json(res, run.artifact(BENCH))
    return res


HANDLERS = {
    "simulate": cmd_simulate, "extract": cmd_extract, "synth": cmd_synth, "train": cmd_train, "infer": cmd_infer,
    "mine": cmd_mine, "eval": cmd_eval, "pipeline": cmd_pipeline, "bench": cmd_bench,
}


# ------------------------------------------------------------------ entry

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tpsdet", description="Dim moving-target detection from pixel temporal signals.")
    sub = ap.add_subparsers(dest="command", metavar="command")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    common.add_argument("-o", "--out", help="run directory (overrides run.out_dir)")
    paths = {
        "frames": "frame directory to analyse", "background": "target-free frame directory",
        "background-signals": "background signal cube", "signals": "signal cube to reconstruct",
        "dataset": "training set", "weights": "weight file", "cube": "reconstructed cube",
        "points": "point CSV", "trajectories": "trajectory JSONL", "gt": "ground-truth CSV",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HANDLERS[name].__doc__.split("\n")[0]
                           if HANDLERS[name].__doc__ else name)
        for flag, doc in paths.items():
            p.add_argument(f"--{flag}", help=doc)
    return ap


def _setup_logging() -> None:
    level = os.environ.get("TPSDET_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[list] = None) -> int:
    _setup_logging()
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command is None:
        ap.print_usage(sys.stderr)
        print("tpsdet: error: ConfigError: no command given", file=sys.stderr)
        return ConfigError.exit_code
    try:
        cfg = load_config(args.config, args.set, args.seed)
        result = HANDLERS[args.command](Run(cfg, args))
    except TpsError as exc:
        msg = " ".join(str(exc).split())
        print(f"tpsdet: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # unexpected: still one parseable line
        msg = " ".join(str(exc).split())
        print(f"tpsdet: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1
    print(json.dumps({"command": args.command, "result": result}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
