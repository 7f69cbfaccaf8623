import numpy as np
import pytest

from dotkit import quality
from dotkit.errors import MissingOptode, NeedTwoWavelengths, WindowTooShort
from dotkit.quality import CLEAN, TAINTED
from dotkit.recording import LabeledPoints, PointType
from dotkit.tensor import LabeledTensor
from dotkit.units import Quantity


def make_geo(positions):
    labels = list(positions)
    return LabeledPoints(
        tuple(labels),
        tuple(PointType.SOURCE if l.startswith("S") else PointType.DETECTOR
              for l in labels),
        "digitized",
        np.asarray([positions[l] for l in labels], dtype=float),
        "mm",
    )


def make_amp(data, fs=10.0, channels=("S1D1",), wavelengths=(760.0, 850.0)):
    """(channel, wavelength, time) tensor from array-like data."""
    data = np.asarray(data, dtype=float)
    n = data.shape[-1]
    time = np.arange(n) / fs
    coords = {
        "time": ("time", time),
        "channel": ("channel", list(channels)),
        "source": ("channel", [c.split("D")[0] for c in channels]),
        "detector": ("channel", ["D" + c.split("D")[1] for c in channels]),
        "wavelength": ("wavelength", list(wavelengths)),
    }
    return LabeledTensor(("channel", "wavelength", "time"), data, coords, "V")


class TestChannelDistances:
    def test_three_four_five(self):
        geo = make_geo({"S1": [0, 0, 0], "D1": [3, 4, 0]})
        ts = make_amp(np.ones((1, 2, 10)))
        d = quality.channel_distances(ts, geo)
        assert d.data[0] == pytest.approx(5.0)
        assert d.unit == "mm"

    def test_identical_positions(self):
        geo = make_geo({"S1": [1, 2, 3], "D1": [1, 2, 3]})
        ts = make_amp(np.ones((1, 2, 10)))
        assert quality.channel_distances(ts, geo).data[0] == 0.0

    def test_missing_optode(self):
        geo = make_geo({"S1": [0, 0, 0]})
        ts = make_amp(np.ones((1, 2, 10)))
        with pytest.raises(MissingOptode):
            quality.channel_distances(ts, geo)

    def test_threshold_partition_matches_brute_force(self):
        rng = np.random.default_rng(11)
        pos = {}
        channels = []
        for i in range(1, 9):
            pos[f"S{i}"] = rng.uniform(-50, 50, 3)
            pos[f"D{i}"] = rng.uniform(-50, 50, 3)
            channels.append(f"S{i}D{i}")
        geo = make_geo(pos)
        ts = make_amp(np.ones((8, 2, 10)), channels=channels)
        d = quality.channel_distances(ts, geo)
        thresh = Quantity(22.5, "mm")
        is_long = (d >= thresh).bool_values
        for i, ch in enumerate(channels):
            expect = np.linalg.norm(pos[f"S{i+1}"] - pos[f"D{i+1}"]) >= 22.5
            assert is_long[i] == expect


class TestSnr:
    def test_constant_signal(self):
        amp = make_amp(np.ones((1, 2, 50)))
        metric, mask = quality.snr(amp, 10.0)
        assert np.isinf(metric.data).all()
        assert mask.bool_values.all()

    def test_exact_formula_on_samples(self):
        rng = np.random.default_rng(3)
        data = 10.0 + rng.normal(0, 1, (1, 2, 200))
        amp = make_amp(data)
        metric, _ = quality.snr(amp, 1.0)
        expect = data.mean(-1) / data.std(-1, ddof=1)
        assert metric.data == pytest.approx(expect)

    def test_threshold_boundary(self):
        rng = np.random.default_rng(4)
        noise = rng.normal(0, 1.0, 400)
        noise = (noise - noise.mean()) / noise.std(ddof=1)  # mean 0, sd 1
        data = np.tile(9.9 * 1.0 + noise, (1, 2, 1))
        amp = make_amp(data)
        metric, mask = quality.snr(amp, 10.0)
        assert metric.data[0, 0] == pytest.approx(9.9)
        assert not mask.bool_values[0, 0]


def cardiac_tone(fs, seconds, freq=1.0, phase=0.0):
    t = np.arange(int(seconds * fs)) / fs
    return np.sin(2 * np.pi * freq * t + phase)


class TestSci:
    def test_identical_inband_sinusoid(self):
        fs = 10.0
        tone = cardiac_tone(fs, 60)
        amp = make_amp(np.stack([tone, tone])[None, :, :], fs=fs)
        metric, mask = quality.sci(amp, 10.0, 0.75)
        assert metric.values.data == pytest.approx(1.0, abs=1e-9)
        assert mask.bool_values.all()

    def test_sign_flip(self):
        fs = 10.0
        tone = cardiac_tone(fs, 60)
        amp = make_amp(np.stack([tone, -tone])[None, :, :], fs=fs)
        metric, mask = quality.sci(amp, 10.0, 0.75)
        assert metric.values.data == pytest.approx(-1.0, abs=1e-9)
        assert not mask.bool_values.any()

    def test_window_left_edges(self):
        fs = 10.0
        tone = cardiac_tone(fs, 35)
        amp = make_amp(np.stack([tone, tone])[None, :, :], fs=fs)
        metric, _ = quality.sci(amp, 10.0, 0.75)
        # 350 samples, 100-sample windows -> 3 windows, partial discarded
        assert metric.values.sizes["time"] == 3
        assert list(metric.values.coord_values("time")) == [0.0, 10.0, 20.0]

    def test_needs_two_wavelengths(self):
        t = LabeledTensor(
            ("channel", "time"), np.ones((1, 100)),
            {"time": ("time", np.arange(100) / 10.0),
             "channel": ("channel", ["S1D1"])},
        )
        with pytest.raises(NeedTwoWavelengths):
            quality.sci(t, 10.0, 0.75)

    def test_window_too_short(self):
        amp = make_amp(np.ones((1, 2, 100)), fs=10.0)
        with pytest.raises(WindowTooShort):
            quality.sci(amp, 0.2, 0.75)

    def test_affine_invariance(self):
        fs = 8.0
        rng = np.random.default_rng(5)
        a = cardiac_tone(fs, 40) + 0.1 * rng.normal(size=320)
        b = cardiac_tone(fs, 40, phase=0.3) + 0.1 * rng.normal(size=320)
        base = make_amp(np.stack([a, b])[None, :, :], fs=fs)
        scaled = make_amp(np.stack([3.5 * a + 2.0, b])[None, :, :], fs=fs)
        m0, _ = quality.sci(base, 10.0, 0.75)
        m1, _ = quality.sci(scaled, 10.0, 0.75)
        assert m1.values.data == pytest.approx(m0.values.data, abs=1e-9)
        flipped = make_amp(np.stack([-2.0 * a, b])[None, :, :], fs=fs)
        m2, _ = quality.sci(flipped, 10.0, 0.75)
        assert m2.values.data == pytest.approx(-m0.values.data, abs=1e-9)


class TestPsp:
    def test_deterministic_and_above_threshold(self):
        fs = 10.0
        tone = cardiac_tone(fs, 60)
        amp = make_amp(np.stack([tone, tone])[None, :, :], fs=fs)
        m1, mask = quality.psp(amp, 10.0, 0.03)
        m2, _ = quality.psp(amp, 10.0, 0.03)
        assert np.array_equal(m1.values.data, m2.values.data)
        assert (m1.values.data > 0.03).all()
        assert mask.bool_values.all()

    def test_all_zero_window(self):
        amp = make_amp(np.zeros((1, 2, 200)), fs=10.0)
        metric, mask = quality.psp(amp, 10.0, 0.03)
        assert (metric.values.data == 0.0).all()
        assert not mask.bool_values.any()

    def test_cardiac_with_noise_snr10(self):
        fs = 10.0
        rng = np.random.default_rng(42)
        tone = cardiac_tone(fs, 120, freq=1.0)
        sigma = np.sqrt((tone**2).mean() / 10.0)  # SNR 10 in power
        a = tone + sigma * rng.normal(size=tone.size)
        b = tone + sigma * rng.normal(size=tone.size)
        amp = make_amp(np.stack([a, b])[None, :, :], fs=fs)
        metric, _ = quality.psp(amp, 10.0, 0.03)
        assert (metric.values.data > 0.1).all()


class TestGvtd:
    def test_constant_series(self):
        ts = make_amp(np.ones((2, 2, 30)), channels=("S1D1", "S2D2"))
        metric, _ = quality.gvtd(ts)
        assert (metric.data == 0.0).all()

    def test_single_channel_unit_step(self):
        data = np.zeros((1, 1, 20))
        data[..., 10:] = 1.0
        ts = LabeledTensor(
            ("channel", "wavelength", "time"), data,
            {"time": ("time", np.arange(20) / 10.0)},
        )
        metric, _ = quality.gvtd(ts)
        nz = np.flatnonzero(metric.data)
        assert len(nz) == 1
        assert metric.data[nz[0]] == pytest.approx(1.0)

    def test_multichannel_step_matches_formula(self):
        rng = np.random.default_rng(9)
        steps = rng.uniform(0.5, 2.0, size=5)
        data = np.zeros((5, 1, 40))
        data[:, 0, 20:] = steps[:, None]
        ts = LabeledTensor(
            ("channel", "wavelength", "time"), data,
            {"time": ("time", np.arange(40) / 10.0)},
        )
        metric, _ = quality.gvtd(ts)
        assert metric.data[19] == pytest.approx(np.sqrt((steps**2).mean()))

    def test_shift_and_scale_invariance(self):
        rng = np.random.default_rng(10)
        data = rng.normal(size=(3, 2, 50))
        ts = make_amp(data, channels=("S1D1", "S2D2", "S3D3"))
        g0, _ = quality.gvtd(ts)
        shifted = make_amp(data + rng.normal(size=(3, 2, 1)),
                           channels=("S1D1", "S2D2", "S3D3"))
        g1, _ = quality.gvtd(shifted)
        assert g1.data == pytest.approx(g0.data)
        scaled = make_amp(3.0 * data, channels=("S1D1", "S2D2", "S3D3"))
        g2, _ = quality.gvtd(scaled)
        assert g2.data == pytest.approx(3.0 * g0.data)


class TestMasks:
    def mask2d(self, values, transpose=False):
        values = np.asarray(values, dtype=float)
        coords = {
            "time": ("time", np.arange(values.shape[1], dtype=float)),
            "channel": ("channel", [f"C{i}" for i in range(values.shape[0])]),
        }
        t = LabeledTensor(("channel", "time"), values, coords)
        return t.transpose("time", "channel") if transpose else t

    def test_combine_transposed_operands(self):
        a = self.mask2d([[1, 0], [1, 1]])
        b = self.mask2d([[1, 1], [0, 1]], transpose=True)
        both = quality.combine_masks([a, b], "and")
        assert set(both.dims) == {"channel", "time"}
        assert both.bool_values.sum() == 2

    def test_combine_subset_superset(self):
        rng = np.random.default_rng(12)
        a = self.mask2d(rng.integers(0, 2, (3, 8)))
        b = self.mask2d(rng.integers(0, 2, (3, 8)))
        land = quality.combine_masks([a, b], "and").bool_values
        lor = quality.combine_masks([a, b], "or").bool_values
        assert np.all(land <= a.bool_values) and np.all(land <= b.bool_values)
        assert np.all(lor >= a.bool_values) and np.all(lor >= b.bool_values)

    def test_all_clean_no_segments(self):
        m = LabeledTensor(("time",), np.ones(6),
                          {"time": ("time", np.arange(6.0))})
        assert quality.mask_to_segments(m) == []

    def test_ttfft_segment(self):
        m = LabeledTensor(("time",), np.asarray([1, 1, 0, 0, 1, 1], float),
                          {"time": ("time", np.arange(6.0))})
        assert quality.mask_to_segments(m) == [(2.0, 3.0)]

    def test_trailing_segment(self):
        m = LabeledTensor(("time",), np.asarray([1, 0, 0], float),
                          {"time": ("time", np.arange(3.0))})
        assert quality.mask_to_segments(m) == [(1.0, 2.0)]


class TestPrune:
    def make_ts(self, n_ch=4, n_t=10):
        channels = [f"S{i}D{i}" for i in range(1, n_ch + 1)]
        return make_amp(np.ones((n_ch, 2, n_t)), channels=channels)

    def fraction_mask(self, fractions, threshold=0.95):
        channels = [f"S{i}D{i}" for i in range(1, len(fractions) + 1)]
        vals = (np.asarray(fractions) >= threshold).astype(float)
        return LabeledTensor(("channel",), vals,
                             {"channel": ("channel", channels)})

    def test_clean_fraction_threshold_drop(self):
        fractions = [0.955, 0.99, 0.815, 0.91, 1.0]
        ts = make_amp(np.ones((5, 2, 10)),
                      channels=[f"S{i}D{i}" for i in range(1, 6)])
        mask = self.fraction_mask(fractions)
        pruned, dropped = quality.prune_channels(ts, [mask], "all")
        assert dropped == ["S3D3", "S4D4"]
        assert pruned.sizes["channel"] == 3

    def test_all_clean(self):
        ts = self.make_ts()
        mask = self.fraction_mask([1, 1, 1, 1])
        pruned, dropped = quality.prune_channels(ts, [mask], "all")
        assert dropped == []
        assert pruned.sizes["channel"] == 4

    def test_all_tainted(self):
        ts = self.make_ts()
        mask = self.fraction_mask([0, 0, 0, 0])
        pruned, dropped = quality.prune_channels(ts, [mask], "all")
        assert pruned.sizes["channel"] == 0
        assert dropped == ["S1D1", "S2D2", "S3D3", "S4D4"]

    def test_prune_all_matches_brute_force_and(self):
        rng = np.random.default_rng(13)
        ts = self.make_ts(n_ch=5)
        vals = rng.integers(0, 2, (5, 7)).astype(float)
        mask = LabeledTensor(
            ("channel", "time"), vals,
            {"channel": ("channel", [f"S{i}D{i}" for i in range(1, 6)]),
             "time": ("time", np.arange(7.0))},
        )
        _, dropped = quality.prune_channels(ts, [mask], "all")
        for i, ch in enumerate([f"S{i}D{i}" for i in range(1, 6)]):
            brute = all(bool(v) for v in vals[i])
            assert (ch in dropped) == (not brute)

    def test_clean_fraction_formula(self):
        vals = np.asarray([[1, 1, 0, 1], [0, 0, 1, 1]], dtype=float)
        mask = LabeledTensor(
            ("channel", "time"), vals,
            {"channel": ("channel", ["a", "b"]),
             "time": ("time", np.arange(4.0))},
        )
        frac = quality.clean_fraction(mask)
        assert frac.data == pytest.approx([0.75, 0.5])
