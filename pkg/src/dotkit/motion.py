"""Motion artifact correction: TDDR and mask-supervised spline correction."""

from __future__ import annotations

import numpy as np
from scipy import signal as _signal
from scipy.interpolate import make_smoothing_spline

from .errors import CoordMismatch
from .frequency import assert_regular_sampling
from .tensor import LabeledTensor

_TDDR_SPLIT_HZ = 0.5
_TDDR_TUNE = 4.685
_TDDR_MAX_ITER = 50
_TDDR_TOL = 1e-8


def _tddr_1d(y: np.ndarray, fs: float) -> np.ndarray:
    mean = y.mean()
    y = y - mean

    # split into a low-pass part carrying the baseline and a high-pass rest
    nyq = fs / 2.0
    if _TDDR_SPLIT_HZ < nyq:
        sos = _signal.butter(3, _TDDR_SPLIT_HZ, btype="lowpass", fs=fs, output="sos")
        padlen = int(min(3 * 3 * fs / _TDDR_SPLIT_HZ, len(y) - 1))
        y_low = _signal.sosfiltfilt(sos, y, padtype="odd", padlen=padlen)
    else:
        y_low = y.copy()
    y_high = y - y_low

    d = np.diff(y_low)
    if len(d) == 0:
        return y + mean

    w = np.ones_like(d)
    outlier = np.zeros(len(d), dtype=bool)
    mu = np.inf
    for _ in range(_TDDR_MAX_ITER):
        mu0 = mu
        mu = float((w * d).sum() / w.sum())
        dev = np.abs(d - mu)
        sigma = 1.4826 * float(np.median(dev))
        if sigma == 0.0:
            # degenerate scale: anything deviating from mu is an artifact
            outlier = dev > 0.0
            w = (~outlier).astype(float)
            break
        r = dev / (sigma * _TDDR_TUNE)
        outlier = r >= 1.0
        w = np.where(outlier, 0.0, (1.0 - r**2) ** 2)
        if abs(mu - mu0) < _TDDR_TOL * sigma:
            break

    # inlier derivatives pass through unchanged so clean signals are
    # preserved; flagged outliers are pulled to the robust location
    # (w is zero there)
    d_corr = np.where(outlier, w * (d - mu), d)
    y_low_corr = np.concatenate([[0.0], np.cumsum(d_corr)])
    out = y_low_corr + y_high
    # the integration constant is fixed by restoring the original DC level
    return out - out.mean() + mean


def tddr(od: LabeledTensor) -> LabeledTensor:
    """Temporal derivative distribution repair, per channel and wavelength.

    Estimates a robust location/scale of the low-pass signal derivative
    via Tukey-biweight IRLS and suppresses derivatives flagged as outliers
    (|residual| beyond 4.685 robust sigmas), then re-integrates.  Spikes
    and baseline jumps vanish while clean in-band signals pass through
    unchanged; the mean of every trace is preserved.  Requires regular
    sampling.
    """
    fs = assert_regular_sampling(od)
    ax = od.axis("time")
    moved = np.moveaxis(od.data, ax, -1)
    flat = moved.reshape(-1, moved.shape[-1]).copy()
    for i in range(flat.shape[0]):
        flat[i] = _tddr_1d(flat[i], fs)
    out = np.moveaxis(flat.reshape(moved.shape), -1, ax)
    return od.with_data(out)


_SPLINE_P = 0.99
_RELEVEL_MAX_S = 2.0


def _segments_from_bool(tainted: np.ndarray) -> list[tuple[int, int, bool]]:
    """(start, stop, is_tainted) covering [0, n) with maximal runs."""
    n = len(tainted)
    segments = []
    start = 0
    for i in range(1, n + 1):
        if i == n or tainted[i] != tainted[start]:
            segments.append((start, i, bool(tainted[start])))
            start = i
    return segments


def _fit_segment_spline(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    if len(y) < 4:
        return np.full_like(y, y.mean())
    x = (t - t[0]) / (t[-1] - t[0])  # normalized abscissa
    lam = (1.0 - _SPLINE_P) / _SPLINE_P
    try:
        spline = make_smoothing_spline(x, y, lam=lam)
        return np.asarray(spline(x))
    except Exception:
        return np.full_like(y, y.mean())


def _spline_1d(t: np.ndarray, y: np.ndarray, tainted: np.ndarray,
               fs: float) -> np.ndarray:
    segments = _segments_from_bool(tainted)
    out = y.copy()
    for i0, i1, is_tainted in segments:
        if is_tainted:
            out[i0:i1] = y[i0:i1] - _fit_segment_spline(t[i0:i1], y[i0:i1])

    # re-level every segment after the first so means stay continuous
    max_win = max(int(round(_RELEVEL_MAX_S * fs)), 1)
    prev_i0, prev_i1, _ = segments[0]
    for i0, i1, _seg in segments[1:]:
        w_prev = min(int(np.ceil((prev_i1 - prev_i0) / 3)), max_win)
        w_cur = min(int(np.ceil((i1 - i0) / 3)), max_win)
        level_prev = out[prev_i1 - w_prev:prev_i1].mean()
        level_cur = out[i0:i0 + w_cur].mean()
        out[i0:i1] += level_prev - level_cur
        prev_i0, prev_i1 = i0, i1
    return out


def spline_correct(od: LabeledTensor, mask: LabeledTensor) -> LabeledTensor:
    """Subtract a smoothing cubic spline inside TAINTED mask segments.

    Per channel and wavelength, a smoothing spline (p=0.99 on the
    normalized abscissa) is fitted to each tainted segment and removed;
    afterwards the segments are re-leveled so segment means stay
    continuous across boundaries.  An all-clean mask is the identity.  A
    mask covering the whole series acts as a global detrend.
    """
    fs = assert_regular_sampling(od)
    time = od.coord_values("time")
    ax = od.axis("time")

    if "time" not in mask.dims:
        raise CoordMismatch("spline mask must have a time dim")
    # broadcast mask to od layout
    from .tensor import binary_op

    ones = od.with_data(np.ones_like(od.data), unit="unitless")
    full_mask = binary_op(ones, mask, "and").transpose(*od.dims)

    tainted = ~full_mask.bool_values
    if not tainted.any():
        return od

    moved = np.moveaxis(od.data, ax, -1)
    tmoved = np.moveaxis(tainted, ax, -1)
    flat = moved.reshape(-1, moved.shape[-1]).copy()
    tflat = tmoved.reshape(-1, moved.shape[-1])
    for i in range(flat.shape[0]):
        if tflat[i].any():
            flat[i] = _spline_1d(time, flat[i], tflat[i], fs)
    out = np.moveaxis(flat.reshape(moved.shape), -1, ax)
    return od.with_data(out)
