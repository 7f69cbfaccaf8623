"""Channel-quality metrics, windowed boolean masks and channel pruning.

Masks follow the convention CLEAN=True, TAINTED=False and share their
coordinates with the series they annotate, so they can be combined and
collapsed across metrics or dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce as _reduce

import numpy as np

from .errors import (
    BadBand,
    CoordMismatch,
    MissingOptode,
    NeedTwoWavelengths,
    TooShort,
    WindowTooShort,
)
from .frequency import _as_seconds, freq_filter, sampling_rate
from .recording import LabeledPoints
from .tensor import LabeledTensor, binary_op

CLEAN = True
TAINTED = False

CARDIAC_FMIN = 0.5
CARDIAC_FMAX = 2.5


@dataclass(frozen=True)
class WindowedMetric:
    """A per-channel metric over non-overlapping windows.

    The window timestamps on the values tensor are the left edge of each
    window.
    """

    values: LabeledTensor
    window_length: float
    threshold: float


def channel_distances(ts: LabeledTensor, geo3d: LabeledPoints) -> LabeledTensor:
    """Euclidean source-detector distance per channel in geo3d's unit."""
    if "source" not in ts.coords or "detector" not in ts.coords:
        raise MissingOptode("time series lacks source/detector coords")
    sources = ts.coord_values("source")
    detectors = ts.coord_values("detector")
    dist = np.empty(len(sources))
    for i, (s, d) in enumerate(zip(sources, detectors)):
        dist[i] = np.linalg.norm(geo3d.position_of(s) - geo3d.position_of(d))
    coords = {name: ("channel", vals) for name, vals in ts.coords_on("channel").items()}
    return LabeledTensor(("channel",), dist, coords, geo3d.unit)


def snr(amp: LabeledTensor, threshold: float = 2.0):
    """Signal-to-noise ratio per channel (and wavelength): mean/std over time.

    Returns ``(snr, mask)`` where the mask is CLEAN where snr > threshold.
    A zero std yields +inf and a CLEAN verdict.
    """
    mean = amp.reduce("time", "mean")
    std = amp.reduce("time", "std")
    with np.errstate(divide="ignore", invalid="ignore"):
        values = mean.data / std.data
    values = np.where(np.isnan(values), np.inf, values)
    metric = mean.with_data(values, unit="unitless")
    mask = metric.with_data((values > threshold).astype(float), unit="unitless")
    return metric, mask


def _extract_cardiac(amp: LabeledTensor, fmin: float, fmax: float) -> LabeledTensor:
    fs = sampling_rate(amp)
    nyq = fs / 2.0
    if nyq <= fmin:
        raise BadBand(
            f"sampling rate {fs:.3g} Hz too low to extract the cardiac band"
        )
    if nyq > fmax:
        return freq_filter(amp, fmin, fmax, butter_order=4)
    return freq_filter(amp, fmin, 0.0, butter_order=4)  # highpass fallback


def _window_setup(amp: LabeledTensor, window_length):
    win_s = _as_seconds(window_length)
    fs = sampling_rate(amp)
    nper = int(np.ceil(win_s * fs))
    n = amp.sizes["time"]
    if nper < 4:
        raise WindowTooShort(f"window holds {nper} samples, need >= 4")
    n_win = n // nper
    if n_win < 1:
        raise WindowTooShort("time series shorter than one window")
    return nper, n_win


def _two_wavelength_windows(amp: LabeledTensor, window_length, fmin, fmax):
    """Cardiac-band filter, then cut (channel, 2, n_win, nper) windows."""
    if "wavelength" not in amp.dims:
        raise NeedTwoWavelengths("input lacks a wavelength dim")
    if amp.sizes["wavelength"] != 2:
        raise NeedTwoWavelengths(
            f"need exactly two wavelengths, got {amp.sizes['wavelength']}"
        )
    nper, n_win = _window_setup(amp, window_length)
    filtered = _extract_cardiac(amp, fmin, fmax)
    arr = filtered.transpose("channel", "wavelength", "time").data
    arr = arr[:, :, : n_win * nper].reshape(arr.shape[0], 2, n_win, nper)

    time = amp.coord_values("time")
    edges = np.arange(n_win) * nper
    coords = {n_: ("channel", v) for n_, v in amp.coords_on("channel").items()}
    for name, values in amp.coords_on("time").items():
        coords[name] = ("time", values[edges])
    return arr, coords, nper, n_win


def sci(amp: LabeledTensor, window_length, threshold: float = 0.75,
        cardiac_fmin: float = CARDIAC_FMIN, cardiac_fmax: float = CARDIAC_FMAX):
    """Scalp-coupling index per channel over non-overlapping windows.

    Both wavelength signals are band-passed to the cardiac band (globally,
    before windowing), then the SCI of a window is the zero-lag Pearson
    correlation between the two filtered signals.  Returns a
    :class:`WindowedMetric` and a mask, CLEAN where SCI > threshold.
    """
    arr, coords, nper, n_win = _two_wavelength_windows(
        amp, window_length, cardiac_fmin, cardiac_fmax
    )
    x = arr[:, 0] - arr[:, 0].mean(axis=-1, keepdims=True)
    y = arr[:, 1] - arr[:, 1].mean(axis=-1, keepdims=True)
    denom = np.sqrt((x**2).sum(-1) * (y**2).sum(-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = (x * y).sum(-1) / denom
    corr = np.where(np.isfinite(corr), corr, 0.0)

    values = LabeledTensor(("channel", "time"), corr, coords, "unitless")
    mask = values.with_data((corr > threshold).astype(float))
    return WindowedMetric(values, _as_seconds(window_length), threshold), mask


def psp(amp: LabeledTensor, window_length, threshold: float = 0.03,
        cardiac_fmin: float = CARDIAC_FMIN, cardiac_fmax: float = CARDIAC_FMAX):
    """Peak spectral power of the two wavelengths' cross-correlation.

    Per window the zero-mean cross-correlation sequence is normalized by
    the product of the window standard deviations and the window length;
    PSP is the maximum of its power spectrum (|FFT|^2 / window length)
    over the cardiac band.  Returns a :class:`WindowedMetric` and a mask,
    CLEAN where PSP > threshold.
    """
    arr, coords, nper, n_win = _two_wavelength_windows(
        amp, window_length, cardiac_fmin, cardiac_fmax
    )
    fs = sampling_rate(amp)
    x = arr[:, 0] - arr[:, 0].mean(axis=-1, keepdims=True)
    y = arr[:, 1] - arr[:, 1].mean(axis=-1, keepdims=True)
    sx = x.std(axis=-1)
    sy = y.std(axis=-1)

    nlags = 2 * nper - 1
    fx = np.fft.rfft(x, n=nlags, axis=-1)
    fy = np.fft.rfft(y, n=nlags, axis=-1)
    # |FFT(xcorr)| == |FFT(x)| * |FFT(y)| for the zero-padded sequences
    cross_mag = np.abs(fx) * np.abs(fy)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr_spec = cross_mag / (nper * sx * sy)[..., None]
    corr_spec = np.where(np.isfinite(corr_spec), corr_spec, 0.0)
    power = corr_spec**2 / nper

    freqs = np.fft.rfftfreq(nlags, d=1.0 / fs)
    band = (freqs >= cardiac_fmin) & (freqs <= cardiac_fmax)
    if not band.any():
        raise WindowTooShort("window too short to resolve the cardiac band")
    values_arr = power[..., band].max(axis=-1)

    values = LabeledTensor(("channel", "time"), values_arr, coords, "unitless")
    mask = values.with_data((values_arr > threshold).astype(float))
    return WindowedMetric(values, _as_seconds(window_length), threshold), mask


def gvtd(ts: LabeledTensor, threshold: float | None = None):
    """Global variance of the temporal derivative.

    ``g(t_i)`` is the RMS over all non-time dims of the sample-to-sample
    difference; the last value is repeated so the output matches the input
    length.  The mask is CLEAN where g < threshold; the default threshold
    is ``median(g) + 10 * 1.4826 * MAD(g)`` (non-normative, configurable).
    """
    if ts.sizes["time"] < 2:
        raise TooShort("gvtd needs at least two time samples")
    ax = ts.axis("time")
    diff = np.diff(ts.data, axis=ax)
    other_axes = tuple(i for i in range(ts.data.ndim) if i != ax)
    g = np.sqrt((diff**2).mean(axis=other_axes)) if other_axes else np.abs(diff)
    g = np.concatenate([g, g[-1:]])

    coords = {n: ("time", v) for n, v in ts.coords_on("time").items()}
    metric = LabeledTensor(("time",), g, coords, ts.unit)

    if threshold is None:
        med = np.median(g)
        mad = np.median(np.abs(g - med))
        threshold = med + 10.0 * 1.4826 * mad
    mask = metric.with_data((g < threshold).astype(float), unit="unitless")
    return metric, mask


def combine_masks(masks, op: str = "and") -> LabeledTensor:
    """Logically combine broadcast-alignable boolean masks."""
    masks = list(masks)
    if not masks:
        raise CoordMismatch("no masks to combine")
    if op == "and":
        return _reduce(lambda a, b: binary_op(a, b, "and"), masks)
    if op == "or":
        return _reduce(lambda a, b: binary_op(a, b, "or"), masks)
    raise ValueError(f"unsupported operator '{op}'")


def mask_to_segments(mask: LabeledTensor) -> list[tuple[float, float]]:
    """Maximal runs of TAINTED samples as (first, last) timestamps.

    The mask must be one-dimensional over time (collapse other dims
    first, e.g. with ``mask.reduce(dim, "all")``).
    """
    if mask.dims != ("time",):
        raise CoordMismatch(
            f"mask must be 1-d over time, has dims {mask.dims}"
        )
    time = mask.coord_values("time")
    tainted = ~mask.bool_values
    segments = []
    start = None
    for i, bad in enumerate(tainted):
        if bad and start is None:
            start = i
        elif not bad and start is not None:
            segments.append((float(time[start]), float(time[i - 1])))
            start = None
    if start is not None:
        segments.append((float(time[start]), float(time[-1])))
    return segments


def prune_channels(ts: LabeledTensor, masks, flag: str = "all"):
    """Drop channels whose combined per-channel verdict is TAINTED.

    ``flag="all"`` keeps a channel only if every mask entry for it is
    CLEAN; ``flag="any"`` keeps it if any entry is CLEAN.  Returns the
    restricted series and the dropped channel labels in original order.
    """
    if flag not in ("all", "any"):
        raise ValueError(f"unsupported flag '{flag}'")
    combined = combine_masks(masks, "and" if flag == "all" else "or")
    if "channel" not in combined.dims:
        raise CoordMismatch("masks must carry a channel dim")
    verdict = combined
    for dim in [d for d in combined.dims if d != "channel"]:
        verdict = verdict.reduce(dim, flag)
    labels = ts.coord_values("channel")
    mask_labels = list(verdict.coord_values("channel"))
    keep = np.asarray(
        [bool(verdict.data[mask_labels.index(lbl)]) if lbl in mask_labels else False
         for lbl in labels]
    )
    dropped = [str(lbl) for lbl, k in zip(labels, keep) if not k]
    return ts.take("channel", np.flatnonzero(keep)), dropped


def clean_fraction(mask: LabeledTensor) -> LabeledTensor:
    """Fraction of clean windows per channel: sum(mask) / n_windows."""
    n_windows = mask.sizes["time"]
    return mask.reduce("time", "sum").with_data(
        mask.reduce("time", "sum").data / n_windows
    )
