"""Bimodal EEG/fNIRS toy dataset from a pseudo-random linear mixing model.

Background sources are independent between the two modalities; target
sources co-modulate through a shared slow envelope, optionally delayed in
the fast (EEG-like) modality.  The gamma parameter sets the amplitude of
the target relative to the unit-variance background mixture, so the
nominal SNR in dB is 20*log10(gamma).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as _signal

from .errors import BadConfig
from .sim import rng_from_seed
from .tensor import LabeledTensor

_ENVELOPE_LP_HZ = 1.5
_ENVELOPE_FLOOR = 0.05


@dataclass(frozen=True)
class ToyConfig:
    """Configuration of the bimodal toy simulation."""

    Nx: int = 32  # fast-modality channels
    Ny: int = 28  # slow-modality channels
    Ns_all: int = 100  # total sources per modality
    Ns_target: int = 1  # shared target sources
    T: float = 300.0  # duration (s)
    T_epoch: float = 0.1  # epoch length / slow sampling interval (s)
    rate: float = 100.0  # fast sampling rate (Hz)
    f_min: float = 8.0  # oscillation band (Hz)
    f_max: float = 12.0
    dT: float = 0.0  # delay of the fast-modality target envelope (s)
    gamma: float = 0.6  # target-vs-background amplitude (SNR parameter)
    gamma_e: float = 0.5  # white measurement-noise amplitude
    ellx: float = 0.5  # RBF widths of the structured mixing columns
    elly: float = 0.2
    sigma_noise: float = 0.1  # white noise on the structured columns
    invert_sy: bool = False

    def __post_init__(self):
        if self.Ns_target > self.Ns_all:
            raise BadConfig("Ns_target must not exceed Ns_all")
        if not 0 < self.f_min < self.f_max < self.rate / 2:
            raise BadConfig("need 0 < f_min < f_max < rate/2")
        n = self.T_epoch * self.rate
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise BadConfig("T_epoch * rate must be a positive integer")
        if self.gamma <= 0 or self.gamma_e < 0:
            raise BadConfig("gamma must be > 0 and gamma_e >= 0")


def snr_db(gamma: float) -> float:
    """Nominal SNR in dB for a gamma setting: 20*log10(gamma)."""
    return 20.0 * np.log10(gamma)


@dataclass(frozen=True)
class ToyDataset:
    """Simulated recordings, sources, mixing matrices and montages."""

    config: ToyConfig
    seed: int
    x: LabeledTensor  # (time, channel) fast modality
    x_power: LabeledTensor  # (time, channel) within-epoch variance
    y: LabeledTensor  # (time, channel) slow modality
    sx: np.ndarray  # (Ns_target, n_fast) target fast sources
    sx_power: np.ndarray  # (Ns_target, n_epochs)
    sy: np.ndarray  # (Ns_target, n_epochs)
    ax: np.ndarray  # (Nx, Ns_target) structured target mixing
    ay: np.ndarray  # (Ny, Ns_target)
    x_montage: np.ndarray  # channel positions in [0, 1]
    y_montage: np.ndarray


def _lowpass(data: np.ndarray, cutoff: float, fs: float) -> np.ndarray:
    sos = _signal.butter(4, cutoff, btype="lowpass", fs=fs, output="sos")
    return _signal.sosfiltfilt(sos, data, axis=-1)


def _envelopes(rng, n_sources: int, n_fast: int, fs: float) -> np.ndarray:
    """Slow positive amplitude-modulation curves, one per source.

    Low-passed white noise is rectified, smoothed with a one-second
    moving average and floored.  The band (1.5 Hz) stays far below the
    oscillation band but decorrelates within seconds, which keeps the
    effective sample count of a recording well above the channel count
    and makes lag estimates sharp.
    """
    noise = rng.standard_normal((n_sources, n_fast))
    slow = _lowpass(noise, _ENVELOPE_LP_HZ, fs)
    rect = np.abs(slow)
    k = max(int(round(fs)), 1)
    kernel = np.ones(k) / k
    env = np.stack([np.convolve(row, kernel, mode="same") for row in rect])
    # rescale to a stable range and apply the floor
    env = env / np.abs(env).max(axis=-1, keepdims=True)
    return np.maximum(env, _ENVELOPE_FLOOR)


def _bandpassed_noise(rng, shape, f_min, f_max, fs) -> np.ndarray:
    sos = _signal.butter(4, [f_min, f_max], btype="bandpass", fs=fs,
                         output="sos")
    return _signal.sosfiltfilt(sos, rng.standard_normal(shape), axis=-1)


def _epoch_reduce(data: np.ndarray, epoch_len: int, op: str) -> np.ndarray:
    n = (data.shape[-1] // epoch_len) * epoch_len
    slabs = data[..., :n].reshape(data.shape[:-1] + (-1, epoch_len))
    if op == "mean":
        return slabs.mean(axis=-1)
    return slabs.var(axis=-1)


def simulate_bimodal_toy(config: ToyConfig, seed: int = 0,
                         mixing_type: str = "structured") -> ToyDataset:
    """Generate one bimodal dataset; identical (config, seed) pairs give
    bit-identical output."""
    if mixing_type not in ("structured", "random"):
        raise BadConfig(f"unknown mixing_type '{mixing_type}'")
    rng = rng_from_seed(seed)
    fs = config.rate
    n_fast = int(round(config.T * fs))
    epoch_len = int(round(config.T_epoch * fs))
    n_epochs = n_fast // epoch_len
    n_bg = config.Ns_all - config.Ns_target
    n_t = config.Ns_target

    # background envelopes and sources, independent per modality
    env_x = _envelopes(rng, n_bg, n_fast, fs)
    sx_bg = _bandpassed_noise(rng, (n_bg, n_fast), config.f_min,
                              config.f_max, fs) * env_x
    env_y = _envelopes(rng, n_bg, n_fast, fs)
    sy_bg = _epoch_reduce(env_y, epoch_len, "mean")

    # shared target envelope; the fast modality is delayed by dT
    env_t = _envelopes(rng, n_t, n_fast, fs)
    shift = int(round(config.dT * fs))
    env_t_delayed = np.zeros_like(env_t)
    if shift < n_fast:
        env_t_delayed[:, shift:] = env_t[:, : n_fast - shift]
    sx_t = _bandpassed_noise(rng, (n_t, n_fast), config.f_min,
                             config.f_max, fs) * env_t_delayed
    sy_t = _epoch_reduce(env_t, epoch_len, "mean")
    if config.invert_sy:
        sy_t = -sy_t

    def standardized(rows):
        mu = rows.mean(axis=-1, keepdims=True)
        sd = rows.std(axis=-1, keepdims=True)
        sd[sd == 0] = 1.0
        return (rows - mu) / sd

    def structured_columns(n_channels, ell, centers):
        pos = np.linspace(0.0, 1.0, n_channels)
        cols = np.empty((n_channels, n_t))
        for k in range(n_t):
            cols[:, k] = np.exp(-((pos - centers[k]) ** 2) / (2.0 * ell**2)) \
                + config.sigma_noise * rng.standard_normal(n_channels)
        return pos, cols

    # mixing: unit-variance background mixture plus gamma-scaled target
    a_x_bg = rng.standard_normal((config.Nx, n_bg)) / np.sqrt(max(n_bg, 1))
    a_y_bg = rng.standard_normal((config.Ny, n_bg)) / np.sqrt(max(n_bg, 1))
    if mixing_type == "structured":
        # one center per target source, shared between the modalities
        centers = rng.uniform(0.25, 0.75, size=n_t)
        x_pos, a_x_t = structured_columns(config.Nx, config.ellx, centers)
        y_pos, a_y_t = structured_columns(config.Ny, config.elly, centers)
    else:
        x_pos = np.linspace(0.0, 1.0, config.Nx)
        y_pos = np.linspace(0.0, 1.0, config.Ny)
        a_x_t = rng.standard_normal((config.Nx, n_t))
        a_y_t = rng.standard_normal((config.Ny, n_t))

    x = a_x_bg @ standardized(sx_bg) \
        + config.gamma * (a_x_t @ standardized(sx_t)) \
        + config.gamma_e * rng.standard_normal((config.Nx, n_fast))
    y = a_y_bg @ standardized(sy_bg) \
        + config.gamma * (a_y_t @ standardized(sy_t)) \
        + config.gamma_e * rng.standard_normal((config.Ny, n_epochs))

    sos = _signal.butter(4, [config.f_min, config.f_max], btype="bandpass",
                         fs=fs, output="sos")
    x_filtered = _signal.sosfiltfilt(sos, x, axis=-1)
    x_power = _epoch_reduce(x_filtered, epoch_len, "var")

    t_fast = (np.arange(n_fast) + 1) / fs
    t_epoch = (np.arange(n_epochs) + 1) * config.T_epoch

    def wrap(data, t, prefix):
        return LabeledTensor(
            ("time", "channel"), data.T,
            {"time": ("time", t),
             "channel": ("channel",
                         [f"{prefix}{i + 1}" for i in range(data.shape[0])])},
        )

    return ToyDataset(
        config=config,
        seed=seed,
        x=wrap(x, t_fast, "X"),
        x_power=wrap(x_power, t_epoch, "X"),
        y=wrap(y, t_epoch, "Y"),
        sx=sx_t,
        sx_power=_epoch_reduce(sx_t, epoch_len, "var"),
        sy=sy_t,
        ax=a_x_t,
        ay=a_y_t,
        x_montage=x_pos,
        y_montage=y_pos,
    )


def standardize(t: LabeledTensor, mean: np.ndarray | None = None,
                std: np.ndarray | None = None) -> LabeledTensor:
    """Zero-mean/unit-variance per feature column (sample dim first)."""
    arr = t.data
    mu = arr.mean(axis=0, keepdims=True) if mean is None else mean
    sd = arr.std(axis=0, keepdims=True) if std is None else std
    sd = np.where(sd == 0, 1.0, sd)
    return t.with_data((arr - mu) / sd)


def preprocess_toy(ds: ToyDataset, split: float = 0.8) -> dict:
    """Standardize with train statistics and split into train/test maps.

    The first floor(split * n_epochs) epochs form the training set;
    ground-truth target sources are returned standardized over the test
    span for comparison with reconstructed sources.
    """
    if not 0 < split < 1:
        raise BadConfig("split must be in (0, 1)")
    n_epochs = ds.y.sizes["time"]
    n_train = int(np.floor(split * n_epochs))
    n_fast = ds.x.sizes["time"]
    n_train_fast = int(np.floor(split * n_fast))

    def split_std(t: LabeledTensor, n_tr: int):
        train = t.take("time", np.arange(n_tr))
        test = t.take("time", np.arange(n_tr, t.sizes["time"]))
        mu = train.data.mean(axis=0, keepdims=True)
        sd = train.data.std(axis=0, keepdims=True)
        return standardize(train, mu, sd), standardize(test, mu, sd)

    x_train, x_test = split_std(ds.x, n_train_fast)
    xp_train, xp_test = split_std(ds.x_power, n_train)
    y_train, y_test = split_std(ds.y, n_train)

    def std_rows(rows):
        mu = rows.mean(axis=-1, keepdims=True)
        sd = rows.std(axis=-1, keepdims=True)
        sd = np.where(sd == 0, 1.0, sd)
        return (rows - mu) / sd

    return {
        "x_train": x_train, "x_test": x_test,
        "x_power_train": xp_train, "x_power_test": xp_test,
        "y_train": y_train, "y_test": y_test,
        "sx": std_rows(ds.sx[:, n_train_fast:]),
        "sx_power": std_rows(ds.sx_power[:, n_train:]),
        "sy": std_rows(ds.sy[:, n_train:]),
    }
