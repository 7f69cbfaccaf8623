import numpy as np
import pytest

from dotkit import decomp
from dotkit.errors import BadConfig
from dotkit.toy import (
    ToyConfig,
    preprocess_toy,
    simulate_bimodal_toy,
    snr_db,
)


def small_config(**kw):
    base = dict(Nx=8, Ny=6, Ns_all=12, Ns_target=1, T=60.0, T_epoch=0.1,
                rate=50.0, f_min=8.0, f_max=12.0)
    base.update(kw)
    return ToyConfig(**base)


class TestConfig:
    def test_snr_formula(self):
        assert snr_db(0.6) == pytest.approx(-4.44, abs=0.005)

    def test_validation(self):
        with pytest.raises(BadConfig):
            ToyConfig(Ns_all=2, Ns_target=5)
        with pytest.raises(BadConfig):
            ToyConfig(f_min=30.0, f_max=10.0)
        with pytest.raises(BadConfig):
            ToyConfig(T_epoch=0.033)
        with pytest.raises(BadConfig):
            ToyConfig(gamma=0.0)


class TestSimulation:
    def test_shapes(self):
        cfg = small_config()
        ds = simulate_bimodal_toy(cfg, seed=5)
        assert ds.x.sizes == {"time": 3000, "channel": 8}
        assert ds.x_power.sizes == {"time": 600, "channel": 8}
        assert ds.y.sizes == {"time": 600, "channel": 6}
        assert ds.sy.shape == (1, 600)
        assert ds.ax.shape == (8, 1)

    def test_seed_determinism(self):
        cfg = small_config()
        a = simulate_bimodal_toy(cfg, seed=9)
        b = simulate_bimodal_toy(cfg, seed=9)
        assert np.array_equal(a.x.data, b.x.data)
        assert np.array_equal(a.y.data, b.y.data)
        assert np.array_equal(a.ay, b.ay)
        c = simulate_bimodal_toy(cfg, seed=10)
        assert not np.array_equal(a.y.data, c.y.data)

    def test_invert_sy(self):
        a = simulate_bimodal_toy(small_config(), seed=2)
        b = simulate_bimodal_toy(small_config(invert_sy=True), seed=2)
        assert b.sy == pytest.approx(-a.sy)

    def test_delay_moves_envelope(self):
        cfg = small_config(T=120.0, dT=2.0)
        ds = simulate_bimodal_toy(cfg, seed=3)
        ds0 = simulate_bimodal_toy(small_config(T=120.0, dT=0.0), seed=3)
        # the delayed env of sx lags the dT=0 version by 2 s (100 samples)
        k = 50  # 1 s moving average extracts the envelopes
        smooth = lambda v: np.convolve(np.abs(v), np.ones(k) / k, mode="same")
        lagged = smooth(ds.sx[0])
        base = smooth(ds0.sx[0])
        lags = np.arange(0, 300, 10)
        corrs = [np.corrcoef(base[: -l or None], lagged[l:])[0, 1]
                 for l in lags]
        best = lags[int(np.argmax(corrs))]
        assert abs(best - 100) <= 20

    def test_structured_mixing_is_rbf_like(self):
        ds = simulate_bimodal_toy(small_config(sigma_noise=0.0), seed=4)
        col = ds.ay[:, 0]
        peak = int(np.argmax(col))
        # grid points rarely hit the center exactly
        assert col[peak] == pytest.approx(1.0, abs=0.05)
        assert (np.diff(col[: peak + 1]) >= 0).all()
        assert (np.diff(col[peak:]) <= 0).all()
        # shared center: both modalities peak at the same relative spot
        px = ds.x_montage[int(np.argmax(ds.ax[:, 0]))]
        py = ds.y_montage[peak]
        assert abs(px - py) < 0.15


class TestPreprocess:
    def test_split_and_standardization(self):
        ds = simulate_bimodal_toy(small_config(), seed=6)
        pp = preprocess_toy(ds, 0.8)
        assert pp["y_train"].sizes["time"] == 480
        assert pp["y_test"].sizes["time"] == 120
        train = pp["y_train"].data
        assert train.mean(axis=0) == pytest.approx(0.0, abs=1e-12)
        assert train.std(axis=0) == pytest.approx(1.0, abs=1e-12)
        # test set uses train statistics, so mean is close but not exact
        test = pp["y_test"].data
        assert np.abs(test.mean(axis=0)).max() < 1.0

    def test_bad_split(self):
        ds = simulate_bimodal_toy(small_config(), seed=6)
        with pytest.raises(BadConfig):
            preprocess_toy(ds, 1.5)


class TestRecoveryLimits:
    def test_high_gamma_recovery(self):
        cfg = ToyConfig(gamma=100.0)
        ds = simulate_bimodal_toy(cfg, seed=3)
        pp = preprocess_toy(ds, 0.8)
        model = decomp.fit_cca(pp["x_power_train"], pp["y_train"],
                               decomp.CCAParams(n_components=1))
        sx, sy = decomp.transform_cca(model, pp["x_power_test"],
                                      pp["y_test"])
        corr = abs(np.corrcoef(sy.data[:, 0], pp["sy"][0])[0, 1])
        assert corr > 0.95
