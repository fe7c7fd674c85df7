"""Temporal signal reconstruction network.

Encoder-decoder over one pixel's temporal signal::

    pre-block -> 4 x (encoder block + multi-scale attention) -> neck
              -> 4 x decoder block (concatenation skips) -> post-block -> sigmoid

All weights live in a :class:`~tpsdet.diffcore.ParameterStore`; the model
object itself only holds the configuration, so a frozen model can be shared
by concurrent readers.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .diffcore import ops
from .diffcore.store import ParameterStore
from .diffcore.trace import Trace
from .errors import ConfigError, FormatError, MissingInputError, NumericalError, StructuralError
from .rng import derive_rng

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"TPSW"
WEIGHTS_VERSION = 1
NECK_CHANNELS = 512


@dataclass(frozen=True)
class ModelConfig:
    window: int = 256
    pre_channels: tuple = (16, 32)
    encoder_channels: tuple = (32, 64, 128, 256)
    neck_channels: int = NECK_CHANNELS
    decoder_channels: tuple = (128, 64, 32, 32)
    post_channels: int = 16
    attention_kernels: tuple = (5, 11, 21)
    attention_reduction: int = 4
    use_attention: bool = True
    dropout: float = 0.1
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    @property
    def downsample_factor(self) -> int:
        return 2 ** (1 + len(self.encoder_channels))

    def validate(self) -> None:
        if self.window < 1 or self.window % self.downsample_factor:
            raise ConfigError(f"window {self.window} must be a positive multiple of {self.downsample_factor}")
        if self.neck_channels != NECK_CHANNELS:
            raise ConfigError(f"neck must have {NECK_CHANNELS} channels, got {self.neck_channels}")
        if len(self.decoder_channels) != len(self.encoder_channels):
            raise ConfigError("decoder and encoder must have the same number of stages")
        if len(self.pre_channels) != 2 or min(self.pre_channels) < 1:
            raise ConfigError("pre_channels must be two positive widths")
        if any(k % 2 == 0 for k in self.attention_kernels) or not self.attention_kernels:
            raise ConfigError("attention kernel sizes must be odd")
        if self.attention_reduction < 1:
            raise ConfigError("attention_reduction must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


@dataclass
class AttentionState:
    scale_features: list  # F_i, each (B, C, L)
    pooled: np.ndarray  # z, (B, C)
    scale_weights: np.ndarray  # w, (B, n_scales)
    fused: np.ndarray  # F_fused, (B, C, L)
    channel_mask: np.ndarray  # A_channel, (B, C, L)


def _bottleneck(c: int, reduction: int) -> int:
    return max(c // reduction, 1)


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form trainable parameter count for ``cfg`` (independent of :func:`build_model`)."""
    def conv(ci, co, k):
        return ci * co * k + co

    c0, c1 = cfg.pre_channels
    total = conv(1, c0, 7) + 2 * c0 + conv(c0, c1, 3)
    cin = c1
    skips = []
    for co in cfg.encoder_channels:
        total += conv(cin, co, 3) + conv(co, co, 3) + conv(cin + co, co, 1)
        total += conv(co, co, 3) + conv(co, co, 3) + 3 * 2 * co
        if cfg.use_attention:
            r = _bottleneck(co, cfg.attention_reduction)
            n = len(cfg.attention_kernels)
            total += sum(co * k + co for k in cfg.attention_kernels)
            total += co * r + r + r * n + n + 2 * (3 * co + co)
        skips.append(co)
        cin = co
    total += conv(cin, cfg.neck_channels, 3)
    cin = cfg.neck_channels
    for cs, co in zip(reversed(skips), cfg.decoder_channels):
        total += conv(cin, co, 2) + conv(co + cs, co, 3) + conv(co, co, 3) + 2 * 2 * co
        cin = co
    total += conv(cin, cin, 2) + conv(cin, cfg.post_channels, 3) + conv(cfg.post_channels, 1, 3)
    return total


@dataclass
class _Run:
    """Per-call state for one forward pass (keeps the model object stateless)."""

    mode: str
    rng: Optional[np.random.Generator]
    trace: Optional[Trace]
    force_weights: Optional[dict] = None
    states: dict = field(default_factory=dict)
    kinks: Optional[list] = None


class TSRNet:
    def __init__(self, cfg: ModelConfig, store: ParameterStore):
        cfg.validate()
        self.cfg = cfg
        self.store = store

    @property
    def window(self) -> int:
        return self.cfg.window

    @property
    def num_parameters(self) -> int:
        return self.store.num_parameters()

    # ---------------------------------------------------------- primitives

    def _record(self, run, inputs, out, back):
        if run.trace is not None:
            run.trace.push(inputs, out, back)
        return out

    def _conv(self, run, name, x, stride=1, pad=None):
        w = self.store[name + ".weight"]
        b = self.store[name + ".bias"]
        if pad is None:
            pad = (w.shape[2] - 1) // 2
        out, cache = ops.conv1d_forward(x, w, b, stride, pad)

        def back(g):
            dx, dw, db = ops.conv1d_backward(g, cache)
            return (dx,), {name + ".weight": dw, name + ".bias": db}

        return self._record(run, (x,), out, back)

    def _convt(self, run, name, x):
        w = self.store[name + ".weight"]
        b = self.store[name + ".bias"]
        out, cache = ops.conv_transpose1d_forward(x, w, b, stride=2, pad=0)

        def back(g):
            dx, dw, db = ops.conv_transpose1d_backward(g, cache)
            return (dx,), {name + ".weight": dw, name + ".bias": db}

        return self._record(run, (x,), out, back)

    def _dwconv(self, run, name, x):
        w = self.store[name + ".weight"]
        b = self.store[name + ".bias"]
        out, cache = ops.depthwise_conv1d_forward(x, w, b, (w.shape[1] - 1) // 2)

        def back(g):
            dx, dw, db = ops.depthwise_conv1d_backward(g, cache)
            return (dx,), {name + ".weight": dw, name + ".bias": db}

        return self._record(run, (x,), out, back)

    def _linear(self, run, name, x):
        out, cache = ops.linear_forward(x, self.store[name + ".weight"], self.store[name + ".bias"])

        def back(g):
            dx, dw, db = ops.linear_backward(g, cache)
            return (dx,), {name + ".weight": dw, name + ".bias": db}

        return self._record(run, (x,), out, back)

    def _bn(self, run, name, x):
        s = self.store
        out, cache = ops.batch_norm1d_forward(
            x, s[name + ".gamma"], s[name + ".beta"], run.mode,
            s[name + ".running_mean"], s[name + ".running_var"],
            eps=self.cfg.bn_eps, momentum=self.cfg.bn_momentum,
        )

        def back(g):
            dx, dgamma, dbeta = ops.batch_norm1d_backward(g, cache)
            return (dx,), {name + ".gamma": dgamma, name + ".beta": dbeta}

        return self._record(run, (x,), out, back)

    def _relu(self, run, x):
        out, cache = ops.relu_forward(x)
        if run.kinks is not None:
            run.kinks.append(np.packbits(x > 0))
        return self._record(run, (x,), out, lambda g: ((ops.relu_backward(g, cache),), {}))

    def _sigmoid(self, run, x):
        out, cache = ops.sigmoid_forward(x)
        return self._record(run, (x,), out, lambda g: ((ops.sigmoid_backward(g, cache),), {}))

    def _dropout(self, run, x):
        out, cache = ops.dropout_forward(x, self.cfg.dropout, run.mode, run.rng)
        if cache is None:
            return x
        return self._record(run, (x,), out, lambda g: ((ops.dropout_backward(g, cache),), {}))

    def _maxpool(self, run, x):
        out, cache = ops.max_pool1d_forward(x, 2, 2)
        if run.kinks is not None:
            run.kinks.append(np.packbits(cache[1].astype(bool)))
        return self._record(run, (x,), out, lambda g: ((ops.max_pool1d_backward(g, cache),), {}))

    def _concat(self, run, a, b):
        # stack channel-major buffers so the result keeps the ops' memory layout
        out = np.concatenate([a.transpose(1, 0, 2), b.transpose(1, 0, 2)], axis=0).transpose(1, 0, 2)
        ca = a.shape[1]
        return self._record(run, (a, b), out, lambda g: ((g[:, :ca], g[:, ca:]), {}))

    def _mul(self, run, a, b):
        out = a * b
        return self._record(run, (a, b), out, lambda g: ((g * b, g * a), {}))

    def _check(self, name, x):
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite activation after {name}")
        return x

    # ------------------------------------------------------------- blocks

    def attention(self, run, name, x):
        """Multi-scale depthwise branches fused by softmax weights, then a channel gate."""
        cfg = self.cfg
        feats = [self._dwconv(run, f"{name}.branch{i}", x) for i in range(len(cfg.attention_kernels))]
        z, gcache = ops.global_avg_pool_forward(x)
        self._record(run, (x,), z, lambda g: ((ops.global_avg_pool_backward(g, gcache),), {}))
        h = self._sigmoid(run, self._linear(run, f"{name}.fc1", z))
        logits = self._linear(run, f"{name}.fc2", h)
        forced = (run.force_weights or {}).get(name)
        if forced is not None:
            w = np.broadcast_to(np.asarray(forced, dtype=x.dtype), (x.shape[0], len(feats))).copy()
        else:
            w, scache = ops.softmax_forward(logits, axis=1)
            self._record(run, (logits,), w, lambda g: ((ops.softmax_backward(g, scache),), {}))
        fused, fcache = ops.weighted_sum_forward(feats, w)

        def back_fused(g):
            dfeats, dw = ops.weighted_sum_backward(g, fcache)
            return tuple(dfeats) + (None if forced is not None else dw,), {}

        self._record(run, tuple(feats) + (w,), fused, back_fused)
        gate = self._dwconv(run, f"{name}.gate2", self._relu(run, self._dwconv(run, f"{name}.gate1", fused)))
        mask = self._sigmoid(run, gate)
        out = self._mul(run, x, mask)
        run.states[name] = AttentionState(feats, z, w, fused, mask)
        return out

    def forward(self, x, mode="eval", rng=None, trace=None, force_weights=None, return_states=False, kinks=None):
        """Map ``(B, 1, L)`` signals to ``(B, 1, L)`` target probabilities in (0, 1).

        If ``kinks`` is a list, the decisions of every non-smooth layer
        (relu masks, pooling argmax, output clipping) are appended to it as
        packed bit arrays; gradient checks use this to skip coordinates
        whose finite differences straddle a kink.
        """
        cfg = self.cfg
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[1] != 1:
            raise StructuralError(f"input must be (B, 1, L), got {x.shape}")
        if x.shape[2] != cfg.window:
            raise StructuralError(f"input length {x.shape[2]} != model window {cfg.window}")
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        if mode == "train" and cfg.dropout > 0 and rng is None:
            raise ConfigError("train mode needs a random generator for dropout")
        run = _Run(mode, rng, trace, force_weights, kinks=kinks)
        x = x.astype(self.store.dtype, copy=False)

        h = self._relu(run, self._bn(run, "pre.bn1", self._conv(run, "pre.conv1", x)))
        h = self._maxpool(run, h)
        h = self._dropout(run, self._conv(run, "pre.conv2", h))
        h = self._check("pre", h)

        skips = []
        for i in range(len(cfg.encoder_channels)):
            n = f"enc{i}"
            a = self._relu(run, self._bn(run, n + ".bn_a", self._conv(run, n + ".conv_a", h)))
            a = self._relu(run, self._bn(run, n + ".bn_b", self._conv(run, n + ".conv_b", a)))
            skip = self._conv(run, n + ".restore", self._concat(run, h, a))
            skips.append(skip)
            d = self._relu(run, self._bn(run, n + ".bn_down", self._conv(run, n + ".down", skip, stride=2, pad=1)))
            h = self._conv(run, n + ".refine", self._dropout(run, d))
            if cfg.use_attention:
                h = self.attention(run, f"att{i}", h)
            h = self._check(n, h)

        h = self._check("neck", self._relu(run, self._conv(run, "neck", h)))

        for i, skip in enumerate(reversed(skips)):
            n = f"dec{i}"
            u = self._convt(run, n + ".up", h)
            c = self._concat(run, u, skip)
            c = self._relu(run, self._bn(run, n + ".bn_a", self._conv(run, n + ".conv_a", c)))
            c = self._relu(run, self._bn(run, n + ".bn_b", self._conv(run, n + ".conv_b", c)))
            h = self._check(n, self._dropout(run, c))

        h = self._convt(run, "post.up", h)
        h = self._relu(run, self._conv(run, "post.conv_a", h))
        logits = self._conv(run, "post.conv_b", h)
        y = self._sigmoid(run, logits)
        # keep probabilities strictly inside (0, 1) after float rounding
        lo = np.finfo(y.dtype).tiny
        hi = 1.0 - np.finfo(y.dtype).epsneg
        inside = (y > lo) & (y < hi)
        if kinks is not None:
            kinks.append(np.packbits(inside))
        out = np.clip(y, lo, hi)
        self._record(run, (y,), out, lambda g: ((np.where(inside, g, 0),), {}))
        self._check("post", out)
        if return_states:
            return out, run.states
        return out

    def backward(self, trace: Trace, out: np.ndarray, dout: np.ndarray, wrt: Optional[np.ndarray] = None):
        """Accumulate parameter gradients for a traced forward pass."""
        return trace.backward(out, dout.astype(out.dtype, copy=False), self.store, wrt=wrt)

    def predict(self, windows: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode inference on centred windows ``(N, L)`` -> ``(N, L)``."""
        windows = np.asarray(windows, dtype=self.store.dtype)
        out = np.empty(windows.shape, dtype=np.float32)
        for s in range(0, windows.shape[0], batch_size):
            out[s : s + batch_size] = self.forward(windows[s : s + batch_size, None, :], "eval")[:, 0, :]
        # a float64 model can produce values that round to 0 or 1 in float32
        f32 = np.finfo(np.float32)
        return np.clip(out, f32.tiny, np.float32(1.0) - f32.epsneg, out=out)


# ------------------------------------------------------------ construction

def _layout(cfg: ModelConfig):
    """Yield ``(name, kind, shape, fan_in)`` for every tensor in build order."""
    c0, c1 = cfg.pre_channels

    def conv(name, ci, co, k):
        yield name + ".weight", "kaiming", (co, ci, k), ci * k
        yield name + ".bias", "zeros", (co,), None

    def convt(name, ci, co, k):
        yield name + ".weight", "kaiming", (ci, co, k), ci
        yield name + ".bias", "zeros", (co,), None

    def bn(name, c):
        yield name + ".gamma", "ones", (c,), None
        yield name + ".beta", "zeros", (c,), None
        yield name + ".running_mean", "buffer0", (c,), None
        yield name + ".running_var", "buffer1", (c,), None

    yield from conv("pre.conv1", 1, c0, 7)
    yield from bn("pre.bn1", c0)
    yield from conv("pre.conv2", c0, c1, 3)
    cin = c1
    skips = []
    for i, co in enumerate(cfg.encoder_channels):
        n = f"enc{i}"
        yield from conv(n + ".conv_a", cin, co, 3)
        yield from bn(n + ".bn_a", co)
        yield from conv(n + ".conv_b", co, co, 3)
        yield from bn(n + ".bn_b", co)
        yield from conv(n + ".restore", cin + co, co, 1)
        yield from conv(n + ".down", co, co, 3)
        yield from bn(n + ".bn_down", co)
        yield from conv(n + ".refine", co, co, 3)
        if cfg.use_attention:
            a = f"att{i}"
            r = _bottleneck(co, cfg.attention_reduction)
            for j, k in enumerate(cfg.attention_kernels):
                yield f"{a}.branch{j}.weight", "kaiming", (co, k), k
                yield f"{a}.branch{j}.bias", "zeros", (co,), None
            yield a + ".fc1.weight", "kaiming", (r, co), co
            yield a + ".fc1.bias", "zeros", (r,), None
            yield a + ".fc2.weight", "kaiming", (len(cfg.attention_kernels), r), r
            yield a + ".fc2.bias", "zeros", (len(cfg.attention_kernels),), None
            for g in ("gate1", "gate2"):
                yield f"{a}.{g}.weight", "kaiming", (co, 3), 3
                yield f"{a}.{g}.bias", "zeros", (co,), None
        skips.append(co)
        cin = co
    yield from conv("neck", cin, cfg.neck_channels, 3)
    cin = cfg.neck_channels
    for i, (cs, co) in enumerate(zip(reversed(skips), cfg.decoder_channels)):
        n = f"dec{i}"
        yield from convt(n + ".up", cin, co, 2)
        yield from conv(n + ".conv_a", co + cs, co, 3)
        yield from bn(n + ".bn_a", co)
        yield from conv(n + ".conv_b", co, co, 3)
        yield from bn(n + ".bn_b", co)
        cin = co
    yield from convt("post.up", cin, cin, 2)
    yield from conv("post.conv_a", cin, cfg.post_channels, 3)
    yield from conv("post.conv_b", cfg.post_channels, 1, 3)


def build_model(cfg: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32) -> TSRNet:
    """Kaiming-uniform (fan-in) kernels, zero biases, unit batch-norm scale."""
    cfg.validate()
    rng = derive_rng(seed, "tsrnet-init")
    store = ParameterStore(dtype)
    for name, kind, shape, fan_in in _layout(cfg):
        if kind == "kaiming":
            bound = np.sqrt(6.0 / fan_in)
            store.add(name, rng.uniform(-bound, bound, size=shape))
        elif kind == "zeros":
            store.add(name, np.zeros(shape))
        elif kind == "ones":
            store.add(name, np.ones(shape))
        elif kind == "buffer0":
            store.add_buffer(name, np.zeros(shape))
        else:
            store.add_buffer(name, np.ones(shape))
    model = TSRNet(cfg, store)
    expected = count_parameters(cfg)
    if model.num_parameters != expected:
        raise StructuralError(f"built {model.num_parameters} parameters, analytic count is {expected}")
    log.info("TSRNet built: %d trainable parameters", model.num_parameters)
    return model


def check_store_matches(cfg: ModelConfig, store: ParameterStore) -> None:
    """Raise a descriptive error if ``store`` does not hold exactly the tensors ``cfg`` needs."""
    expected = {name: shape for name, _, shape, _ in _layout(cfg)}
    got = dict((name, arr.shape) for name, arr in store.tensors())
    missing = sorted(set(expected) - set(got))
    extra = sorted(set(got) - set(expected))
    if missing or extra:
        raise StructuralError(f"weight tensors do not match model: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, shape in expected.items():
        if tuple(got[name]) != tuple(shape):
            raise StructuralError(f"tensor {name!r} has shape {got[name]}, model expects {shape}")


def model_from_store(cfg: ModelConfig, store: ParameterStore) -> TSRNet:
    check_store_matches(cfg, store)
    # rebuild in layout order so parameter/buffer roles follow the config
    ordered = ParameterStore(store.dtype)
    values = dict(store.tensors())
    for name, kind, _, _ in _layout(cfg):
        if kind.startswith("buffer"):
            ordered.add_buffer(name, values[name])
        else:
            ordered.add(name, values[name])
    return TSRNet(cfg, ordered)


def dms_attention(model: TSRNet, x: np.ndarray, stage: int = 0, force_weights=None, trace: Optional[Trace] = None):
    """Apply the attention module of encoder ``stage`` to ``x``; returns ``(out, AttentionState)``.

    ``force_weights`` replaces the learned scale weights (e.g. a one-hot row).
    """
    name = f"att{stage}"
    run = _Run("eval", None, trace, {name: force_weights} if force_weights is not None else None)
    out = model.attention(run, name, np.asarray(x, dtype=model.store.dtype))
    return out, run.states[name]


# ------------------------------------------------------------ weight files

def save_weights(store: ParameterStore, path) -> None:
    tensors = list(store.tensors())
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weights(path, cfg: Optional[ModelConfig] = None) -> ParameterStore:
    """Read a ``TPSW`` file.  Tensor roles (parameter vs buffer) follow the name suffix."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"weight file not found: {path}")
    raw = path.read_bytes()

    def take(n, pos):
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated weight file")
        return raw[pos : pos + n], pos + n

    head, pos = take(12, 0)
    if head[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: not a TPSW weight file")
    version, n = struct.unpack("<II", head[4:])
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported weight version {version}")
    store = ParameterStore(np.float32)
    for _ in range(n):
        b, pos = take(2, pos)
        (nlen,) = struct.unpack("<H", b)
        b, pos = take(nlen, pos)
        name = b.decode("utf-8")
        b, pos = take(1, pos)
        (rank,) = struct.unpack("<B", b)
        b, pos = take(4 * rank, pos)
        dims = struct.unpack(f"<{rank}I", b)
        count = int(np.prod(dims)) if rank else 1
        b, pos = take(4 * count, pos)
        arr = np.frombuffer(b, dtype="<f4").reshape(dims).astype(np.float32)
        if name.endswith(".running_mean") or name.endswith(".running_var"):
            store.add_buffer(name, arr)
        else:
            store.add(name, arr)
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    if cfg is not None:
        check_store_matches(cfg, store)
    return store
