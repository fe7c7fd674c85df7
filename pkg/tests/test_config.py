from pathlib import Path

import pytest

from tpsdet.config import KEYS, load_config, render_docs
from tpsdet.errors import ConfigError, MissingInputError
from tpsdet.rng import DEFAULT_SEED
from tpsdet.tsrnet import ModelConfig

DOCS = Path(__file__).resolve().parents[1] / "docs" / "config.md"


def test_defaults_match_module_defaults():
    cfg = load_config()
    assert cfg.seed == DEFAULT_SEED
    assert cfg.model_config() == ModelConfig()
    b = cfg.mining_bounds()
    assert (b.d, b.dt, b.l, b.n_trials) == ((1.0, 10.0), (1, 5), None, 100)
    tc = cfg.train_config()
    assert (tc.epochs, tc.batch_size, tc.seed) == (200, 1000, DEFAULT_SEED)


def test_precedence_file_then_set_then_seed(tmp_path):
    f = tmp_path / "run.ini"
    f.write_text("[run]\nseed = 5\n[train]\nepochs = 7\nlr = 0.01\n")
    cfg = load_config(f, ["train.epochs=9"], seed=11)
    assert cfg.get("train", "epochs") == 9
    assert cfg.get("train", "lr") == 0.01
    assert cfg.seed == 11 and cfg.train_config().seed == 11 and cfg.mining_bounds().seed == 11


def test_relative_paths_resolve_against_config_dir(tmp_path):
    f = tmp_path / "sub" / "run.ini"
    f.parent.mkdir()
    f.write_text("[data]\nframes = frames_dir\n")
    cfg = load_config(f)
    assert cfg.path("data", "frames") == tmp_path / "sub" / "frames_dir"
    assert cfg.path("data", "ground_truth") is None


def test_list_and_bool_parsing():
    cfg = load_config(None, ["model.encoder_channels=8, 16,32,64", "model.use_attention=off", "mine.l_min=3",
                             "mine.l_max=9"])
    assert cfg.get("model", "encoder_channels") == (8, 16, 32, 64)
    assert cfg.get("model", "use_attention") is False
    assert cfg.mining_bounds().l == (3.0, 9.0)


@pytest.mark.parametrize("override", [
    "train.bogus=1", "nosection=1", "train.epochs=abc", "model.use_attention=maybe", "run.workers=0",
    "detect.tau=1.5", "data.bit_depth=12", "mine.l_min=3",
])
def test_bad_overrides(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_bad_file(tmp_path):
    with pytest.raises(MissingInputError):
        load_config(tmp_path / "none.ini")
    (tmp_path / "x.ini").write_text("[train]\nwhat = 1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "x.ini")
    (tmp_path / "y.ini").write_text("no section header\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "y.ini")


def test_every_key_documented_and_docs_in_sync():
    text = render_docs()
    for (sec, key), (_, _, doc) in KEYS.items():
        assert doc
        assert f"| `{key}` |" in text and f"## [{sec}]" in text
    assert DOCS.read_text() == text, "docs/config.md is stale; regenerate with tpsdet.config.render_docs()"
