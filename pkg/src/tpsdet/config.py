"""Pipeline configuration: one INI file, every key typed and documented.

``KEYS`` is the single source of truth; ``docs/config.md`` is generated
from it (see :func:`render_docs`) and a test keeps the two in step.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError, MissingInputError
from .gtm import MiningBounds
from .rng import DEFAULT_SEED
from .tps_synthesis import SamplingRanges
from .train import LossConfig, TrainConfig
from .tsrnet import ModelConfig


def _ints(raw: str) -> tuple:
    return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _opt_float(raw: str) -> Optional[float]:
    return None if raw.strip() in ("", "auto") else float(raw)


# (section, key) -> (default text, parser, description)
KEYS: dict = {
    ("run", "seed"): (str(DEFAULT_SEED), int, "Root seed; every random stream in a run derives from it."),
    ("run", "workers"): ("1", int, "Threads used for batched inference. Batches are fixed, so any value gives identical output."),
    ("run", "out_dir"): ("tpsdet_run", str, "Directory receiving every artifact of a run."),

    ("scene", "file"): ("", str, "Optional scene INI (see `write_scene_config`); overrides the keys below when set."),
    ("scene", "snr"): ("3.0", float, "Requested per-target SNR; target amplitudes are solved for it."),
    ("scene", "n_targets"): ("3", int, "Number of moving targets."),
    ("scene", "H"): ("64", int, "Frame height in pixels."),
    ("scene", "W"): ("64", int, "Frame width in pixels."),
    ("scene", "K"): ("300", int, "Number of frames."),
    ("scene", "background"): ("flat", str, "Background model: flat, gradient or drift."),
    ("scene", "level"): ("100.0", float, "Background level in intensity units."),
    ("scene", "noise_sigma"): ("5.0", float, "Standard deviation of the Gaussian sensor noise."),
    ("scene", "bit_depth"): ("16", int, "Bit depth of the written frame files (8 or 16)."),

    ("data", "frames"): ("", str, "Frame directory to analyse; empty means the simulated scene."),
    ("data", "background_frames"): ("", str, "Target-free frame directory for training; empty means the simulated background."),
    ("data", "ground_truth"): ("", str, "Ground-truth CSV for `eval`; empty means the simulated scene's."),
    ("data", "bit_depth"): ("16", int, "Bit depth expected when reading frames (8 or 16)."),

    ("synthesis", "stride"): ("4", int, "Pixel lattice stride for the background pool."),
    ("synthesis", "n_samples"): ("1000", int, "Number of training windows."),
    ("synthesis", "p_pos"): ("0.5", float, "Probability that a window receives a pulse."),
    ("synthesis", "a_min"): ("10.0", float, "Smallest pulse amplitude."),
    ("synthesis", "a_max"): ("30.0", float, "Largest pulse amplitude."),
    ("synthesis", "s_min"): ("5.0", float, "Smallest pulse width S (sigma = S / 6), frames."),
    ("synthesis", "s_max"): ("15.0", float, "Largest pulse width S, frames."),
    ("synthesis", "pulses_min"): ("1", int, "Fewest pulses in a positive window."),
    ("synthesis", "pulses_max"): ("1", int, "Most pulses in a positive window."),

    ("model", "window"): ("256", int, "Window length L; a multiple of the downsampling factor (32 by default)."),
    ("model", "pre_channels"): ("16, 32", _ints, "Channels of the two pre-block convolutions."),
    ("model", "encoder_channels"): ("32, 64, 128, 256", _ints, "Channels of each encoder stage."),
    ("model", "decoder_channels"): ("128, 64, 32, 32", _ints, "Channels of each decoder stage."),
    ("model", "post_channels"): ("16", int, "Channels of the post-block convolution."),
    ("model", "attention_kernels"): ("5, 11, 21", _ints, "Depthwise kernel sizes of the attention branches."),
    ("model", "attention_reduction"): ("4", int, "Reduction ratio of the attention bottleneck."),
    ("model", "use_attention"): ("true", _bool, "Use the multi-scale attention blocks."),
    ("model", "dropout"): ("0.1", float, "Dropout rate in training."),

    ("train", "lr"): ("0.001", float, "Adam learning rate."),
    ("train", "batch_size"): ("1000", int, "Windows per optimisation step."),
    ("train", "epochs"): ("200", int, "Number of epochs (upper bound when a stop rule is set)."),
    ("train", "checkpoint_every"): ("0", int, "Epochs between checkpoints; 0 keeps only the final weights."),
    ("train", "plateau_patience"): ("0", int, "Stop after this many epochs without relative improvement; 0 disables."),
    ("train", "plateau_min_delta"): ("0.001", float, "Relative loss improvement that resets the plateau counter."),
    ("train", "alpha"): ("1.0", float, "Weight of the target term of the loss."),
    ("train", "beta"): ("1.0", float, "Weight of the background term of the loss."),
    ("train", "delta"): ("0.07", float, "Background responses above this value are penalised."),

    ("detect", "overlap"): ("0.5", float, "Fractional overlap of consecutive windows."),
    ("detect", "batch_size"): ("256", int, "Windows per inference batch."),
    ("detect", "tau"): ("0.5", float, "Threshold for point extraction before trajectory mining."),

    ("mine", "d_min"): ("1.0", float, "Lower bound of the spatial distance threshold, pixels."),
    ("mine", "d_max"): ("10.0", float, "Upper bound of the spatial distance threshold, pixels."),
    ("mine", "dt_min"): ("1", int, "Lower bound of the frame gap."),
    ("mine", "dt_max"): ("5", int, "Upper bound of the frame gap."),
    ("mine", "l_min"): ("auto", _opt_float, "Lower bound of the minimum length; auto = 5."),
    ("mine", "l_max"): ("auto", _opt_float, "Upper bound of the minimum length; auto = max(6, K / 4)."),
    ("mine", "n_trials"): ("100", int, "Monte Carlo trials."),

    ("eval", "grid_points"): ("101", int, "Number of uniformly spaced thresholds on [0, 1]."),
    ("eval", "match_radius"): ("3", int, "Chebyshev radius, pixels, within which a target counts as detected."),
    ("eval", "svg"): ("true", _bool, "Write the three curve plots as SVG."),
    ("eval", "csv"): ("true", _bool, "Write the curves as CSV."),

    ("bench", "H"): ("64", int, "Height of the benchmark cube."),
    ("bench", "W"): ("64", int, "Width of the benchmark cube."),
    ("bench", "K"): ("256", int, "Frames of the benchmark cube."),
    ("bench", "repeats"): ("3", int, "Timed repetitions; the best is reported."),
}


@dataclass
class PipelineConfig:
    values: dict  # {(section, key): parsed value}
    source: Optional[Path] = None

    def __getitem__(self, item):
        return self.values[item]

    def get(self, section: str, key: str) -> Any:
        return self.values[(section, key)]

    @property
    def seed(self) -> int:
        return self.get("run", "seed")

    def path(self, section: str, key: str) -> Optional[Path]:
        raw = self.get(section, key)
        if not raw:
            return None
        p = Path(raw)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p

    # ---- module configs
    def model_config(self) -> ModelConfig:
        g = self.get
        return ModelConfig(
            window=g("model", "window"), pre_channels=g("model", "pre_channels"),
            encoder_channels=g("model", "encoder_channels"), decoder_channels=g("model", "decoder_channels"),
            post_channels=g("model", "post_channels"), attention_kernels=g("model", "attention_kernels"),
            attention_reduction=g("model", "attention_reduction"), use_attention=g("model", "use_attention"),
            dropout=g("model", "dropout"),
        )

    def sampling_ranges(self) -> SamplingRanges:
        g = self.get
        return SamplingRanges(g("synthesis", "a_min"), g("synthesis", "a_max"), g("synthesis", "s_min"),
                              g("synthesis", "s_max"), g("synthesis", "pulses_min"), g("synthesis", "pulses_max"))

    def train_config(self) -> TrainConfig:
        g = self.get
        return TrainConfig(
            lr=g("train", "lr"), batch_size=g("train", "batch_size"), epochs=g("train", "epochs"), seed=self.seed,
            loss=LossConfig(g("train", "alpha"), g("train", "beta"), g("train", "delta")),
            checkpoint_every=g("train", "checkpoint_every"), plateau_patience=g("train", "plateau_patience"),
            plateau_min_delta=g("train", "plateau_min_delta"),
        )

    def mining_bounds(self) -> MiningBounds:
        g = self.get
        lmin, lmax = g("mine", "l_min"), g("mine", "l_max")
        if (lmin is None) != (lmax is None):
            raise ConfigError("mine.l_min and mine.l_max must both be set or both be auto")
        l = None if lmin is None else (lmin, lmax)
        return MiningBounds((g("mine", "d_min"), g("mine", "d_max")), (g("mine", "dt_min"), g("mine", "dt_max")), l,
                            g("mine", "n_trials"), self.seed)

    def validate(self) -> None:
        if self.get("run", "workers") < 1:
            raise ConfigError("run.workers must be >= 1")
        for sec in ("scene", "data"):
            if self.get(sec, "bit_depth") not in (8, 16):
                raise ConfigError(f"{sec}.bit_depth must be 8 or 16")
        if not 0.0 <= self.get("detect", "tau") <= 1.0:
            raise ConfigError("detect.tau must lie in [0, 1]")
        if self.get("eval", "grid_points") < 2:
            raise ConfigError("eval.grid_points must be >= 2")
        self.model_config().validate()
        self.sampling_ranges().validate()
        self.train_config().validate()
        self.mining_bounds().validate()


def _parse(section: str, key: str, raw: str):
    if (section, key) not in KEYS:
        raise ConfigError(f"unknown config key {section}.{key}")
    try:
        return KEYS[(section, key)][1](raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from exc


def load_config(path=None, overrides=(), seed: Optional[int] = None) -> PipelineConfig:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides, then ``seed``."""
    raw = {k: v[0] for k, v in KEYS.items()}
    src = None
    if path is not None:
        src = Path(path)
        if not src.is_file():
            raise MissingInputError(f"config file not found: {src}")
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read(src)
        except configparser.Error as exc:
            raise ConfigError(f"{src}: {exc}") from exc
        for sec in cp.sections():
            for key, val in cp[sec].items():
                if (sec, key) not in KEYS:
                    raise ConfigError(f"{src}: unknown config key {sec}.{key}")
                raw[(sec, key)] = val
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, val = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        if (sec, key) not in KEYS:
            raise ConfigError(f"unknown config key {sec}.{key}")
        raw[(sec, key)] = val.strip()
    if seed is not None:
        raw[("run", "seed")] = str(seed)
    cfg = PipelineConfig({k: _parse(k[0], k[1], v) for k, v in raw.items()}, src)
    cfg.validate()
    return cfg


def render_docs() -> str:
    lines = [
        "# Configuration reference",
        "",
        "All commands read one INI file (`--config`). Any key can be overridden on the command line with",
        "`--set section.key=value`, and `--seed N` replaces `run.seed`. Relative paths are resolved against",
        "the config file's directory. The log level comes from the `TPSDET_LOG_LEVEL` environment variable",
        "(default `WARNING`); it is not a config key.",
        "",
    ]
    section = None
    for (sec, key), (default, _, doc) in KEYS.items():
        if sec != section:
            lines += ["", f"## [{sec}]", "", "| key | default | meaning |", "|---|---|---|"]
            section = sec
        shown = f"`{default}`" if default else "(empty)"
        lines.append(f"| `{key}` | {shown} | {doc} |")
    return "\n".join(lines).replace("\n\n\n", "\n\n") + "\n"
