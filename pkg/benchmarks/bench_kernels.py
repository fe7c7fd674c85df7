"""Time the numba kernels against their numpy/scipy twins.

    python benchmarks/bench_kernels.py [--repeats 5] [--json out.json]

Each case runs once to warm up (numba compiles on first call), then the best
of ``--repeats`` timings is reported for both backends.  The last two cases
are whole-model passes, where most of the time is GEMM and the backend
matters much less.
"""
import argparse
import json
import platform
import timeit

import numpy as np

from tpsdet import _accel, kernels
from tpsdet.detect import DetectionPoint
from tpsdet.gtm import build_graph, extract_trajectories
from tpsdet.tsrnet import ModelConfig, build_model


def cases(rng):
    C, B, L, k = 64, 64, 256, 21
    x = rng.standard_normal((C, B, L)).astype(np.float32)
    w = rng.standard_normal((C, k)).astype(np.float32)
    g = rng.standard_normal((C, B, L)).astype(np.float32)
    pad = k // 2

    cube = rng.random((64, 64, 300)).astype(np.float32)

    n = 2000
    pts = [DetectionPoint(int(t), int(y), int(x), 0.9)
           for t, y, x in zip(rng.integers(0, 300, n), rng.integers(0, 64, n), rng.integers(0, 64, n))]
    edges = build_graph(pts, 6.0, 3)

    model = build_model(ModelConfig(), seed=0)
    windows = rng.standard_normal((256, 256)).astype(np.float32)

    return {
        "depthwise_forward (64x64x256, k=21)": lambda: kernels.depthwise_forward(x, w, pad, L),
        "depthwise_backward (64x64x256, k=21)": lambda: kernels.depthwise_backward(x, w, g, pad),
        "local_maxima (64x64x300)": lambda: kernels.local_maxima(cube, 0.5),
        "build_graph (2000 points, d=6, dt=3)": lambda: build_graph(pts, 6.0, 3),
        "connected components (2000 points)": lambda: extract_trajectories(pts, edges, 5),
        "model predict (256 windows of 256)": lambda: model.predict(windows, batch_size=256),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    results = {}
    prev = _accel.backend()
    try:
        for name, fn in cases(np.random.default_rng(0)).items():
            row = {}
            for be in ("numba", "numpy"):
                _accel.set_backend(be)
                fn()
                row[be] = min(timeit.repeat(fn, number=1, repeat=args.repeats))
            row["speedup"] = row["numpy"] / row["numba"]
            results[name] = row
    finally:
        _accel.set_backend(prev)
    width = max(len(k) for k in results)
    print(f"{'case':<{width}}  {'numba ms':>10}  {'numpy ms':>10}  {'speedup':>8}")
    for name, row in results.items():
        print(f"{name:<{width}}  {row['numba'] * 1e3:10.2f}  {row['numpy'] * 1e3:10.2f}  {row['speedup']:7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"machine": platform.machine(), "python": platform.python_version(), "results": results},
                      fh, indent=2)
            fh.write("\n")


if __name__ == "__main__":
    main()
