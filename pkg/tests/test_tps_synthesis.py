import numpy as np
import pytest

from tpsdet.errors import ConfigError, FormatError
from tpsdet.signal_io import TemporalSignal
from tpsdet.tps_synthesis import (
    GaussianPulseParams, SamplingRanges, build_dataset, gaussian_pulse, load_dataset, sample_params, save_dataset,
    synthesize_sample,
)


def test_pulse_values():
    v = gaussian_pulse(GaussianPulseParams(1.0, 10.0, 2.0), 21).values
    assert v[10] == 1.0
    assert v[14] == pytest.approx(np.exp(-2.0), rel=1e-6)
    assert np.all(gaussian_pulse(GaussianPulseParams(0.0, 10.0, 2.0), 21).values == 0)
    with pytest.raises(ConfigError):
        gaussian_pulse(GaussianPulseParams(1.0, 3.0, 0.0), 10)


def test_pulse_symmetry():
    v = gaussian_pulse(GaussianPulseParams(5.0, 50.0, 3.0), 101).values
    np.testing.assert_array_equal(v[50 + np.arange(20)], v[50 - np.arange(20)])


@pytest.mark.parametrize("sigma", [20.0, 35.5, 50.0])
def test_pulse_energy_within_three_sigma(sigma):
    # the sampled sum tracks the Gaussian integral once sigma spans many
    # frames; at sigma of 1-3 frames the outside share depends on where the
    # samples fall relative to T +- 3 sigma
    n = int(12 * sigma) + 1
    T = n // 2
    v = gaussian_pulse(GaussianPulseParams(1.0, float(T), sigma), n).values.astype(np.float64)
    outside = np.abs(np.arange(n) - T) >= 3 * sigma
    assert v[outside].sum() <= 0.003 * v.sum()


def test_sample_params():
    r = SamplingRanges()
    a = sample_params(r, np.random.default_rng(4), 256)
    b = sample_params(r, np.random.default_rng(4), 256)
    assert a == b and 0 <= a.center <= 255
    d = sample_params(SamplingRanges(20, 20, 12, 12), np.random.default_rng(0), 64)
    assert (d.amplitude, d.sigma) == (20.0, 2.0)
    rng = np.random.default_rng(1)
    amps = [sample_params(r, rng, 256).amplitude for _ in range(10_000)]
    assert abs(np.mean(amps) - 20.0) < 0.5


def test_ranges_validation():
    with pytest.raises(ConfigError):
        SamplingRanges(a_min=30, a_max=10).validate()
    with pytest.raises(ConfigError):
        SamplingRanges(s_min=0).validate()
    with pytest.raises(ConfigError):
        SamplingRanges(20, 20, 12, 12).validate(allow_degenerate=False)


def test_synthesize_single():
    bg = TemporalSignal(np.full(41, 100.0))
    s = synthesize_sample(bg, [GaussianPulseParams(20.0, 20.0, 2.0)])
    assert s.input.values[20] == 120.0 and s.label.values[20] == 1.0
    assert int(np.argmax(s.input.values)) == 20


def test_synthesize_empty_and_two():
    bg = TemporalSignal(np.linspace(90, 110, 80))
    s = synthesize_sample(bg, [])
    np.testing.assert_array_equal(s.input.values, bg.values)
    assert np.all(s.label.values == 0)
    two = synthesize_sample(bg, [GaussianPulseParams(10, 20.0, 2.0), GaussianPulseParams(15, 60.0, 2.0)])
    lab = two.label.values
    assert lab[20] == 1.0 and lab[60] == 1.0 and lab[40] < 1e-6
    assert lab.max() <= 1.0 and lab.min() >= 0.0


def test_linearity(rng):
    bg = TemporalSignal(rng.uniform(80, 120, 100).astype(np.float32))
    ps = [GaussianPulseParams(12.0, 30.3, 1.7), GaussianPulseParams(25.0, 70.8, 2.2)]
    s = synthesize_sample(bg, ps)
    expect = bg.values.copy()
    for p in ps:
        expect += gaussian_pulse(p, 100).values
    np.testing.assert_array_equal(s.input.values, expect)


def test_dataset_reproducible_and_p_pos(tmp_path):
    pool = [TemporalSignal(np.full(300, 100.0))]
    a = build_dataset(pool, SamplingRanges(), 5, window=64, seed=3)
    b = build_dataset(pool, SamplingRanges(), 5, window=64, seed=3)
    assert a.inputs.tobytes() == b.inputs.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    neg = build_dataset(pool, SamplingRanges(), 50, window=64, seed=0, p_pos=0.0)
    assert np.all(neg.labels == 0)
    with pytest.raises(ConfigError):
        build_dataset([], SamplingRanges(), 5)


def test_positive_label_peaks():
    pool = [TemporalSignal(np.full(256, 100.0))]
    ds = build_dataset(pool, SamplingRanges(), 1000, window=256, seed=1, p_pos=1.0)
    sigma_min = 5.0 / 6.0
    assert np.all(ds.labels.max(axis=1) >= np.exp(-1 / (8 * sigma_min**2)) - 1e-6)


def test_short_pool_reflect_padded():
    pool = [TemporalSignal(np.arange(40, dtype=np.float32))]
    ds = build_dataset(pool, SamplingRanges(), 2, window=64, seed=0, p_pos=0.0)
    expect = np.pad(np.arange(40, dtype=np.float32), (0, 24), mode="reflect")
    np.testing.assert_array_equal(ds.inputs[0], expect)


def test_dataset_file(tmp_path):
    pool = [TemporalSignal(np.full(100, 50.0))]
    ds = build_dataset(pool, SamplingRanges(), 4, window=32, seed=0)
    save_dataset(ds, tmp_path / "d.tpsd")
    raw = (tmp_path / "d.tpsd").read_bytes()
    assert raw[:4] == b"TPSD" and len(raw) == 16 + 4 * 32 * 2 * 4
    back = load_dataset(tmp_path / "d.tpsd")
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.labels, ds.labels)
    (tmp_path / "t.tpsd").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "t.tpsd")
