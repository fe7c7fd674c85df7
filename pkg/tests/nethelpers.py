"""Shared helpers for whole-network gradient checks."""
import numpy as np

from tpsdet.diffcore import Trace, grad_check
from tpsdet.tsrnet import ModelConfig, build_model

SMALL_WINDOW = 64


def randomize_running_stats(model, rng):
    for name, buf in model.store.buffers.items():
        if name.endswith("running_mean"):
            buf[...] = 0.1 * rng.standard_normal(buf.shape)
        else:
            buf[...] = rng.random(buf.shape) + 0.5


def full_net_gradcheck(seed, eps=1e-3, tol=1e-3, max_coords=1, mode="eval", use_kinks=True,
                       window=SMALL_WINDOW, batch=2, floor=1e-6):
    """Check every parameter tensor (``max_coords`` random entries each) plus the input."""
    cfg = ModelConfig(window=window, dropout=0.0)
    model = build_model(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    randomize_running_stats(model, rng)
    x = rng.standard_normal((batch, 1, window))
    R = rng.standard_normal((batch, 1, window))
    snapshot = {k: v.copy() for k, v in model.store.buffers.items()}

    def restore():
        for k, v in snapshot.items():
            model.store.buffers[k][...] = v

    def loss():
        kinks = [] if use_kinks else None
        out = model.forward(x, mode=mode, kinks=kinks)
        restore()
        value = float(np.sum(R * out))
        if kinks is None:
            return value
        return value, b"".join(k.tobytes() for k in kinks)

    trace = Trace()
    out = model.forward(x, mode=mode, trace=trace)
    restore()
    model.store.zero_grad()
    dx = model.backward(trace, out, R, wrt=x)
    tensors = {name: p.value for name, p in model.store.params.items()}
    analytic = {name: p.grad.copy() for name, p in model.store.params.items()}
    tensors["input"] = x
    analytic["input"] = dx
    return grad_check(loss, tensors, analytic, eps=eps, tol=tol, max_coords=max_coords, floor=floor,
                      rng=np.random.default_rng(seed + 1000))
