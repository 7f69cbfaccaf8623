"""Frequency-domain helpers: sampling rate and zero-phase Butterworth filter."""

from __future__ import annotations

import numpy as np
from scipy import signal

from .errors import BadBand, IrregularSampling, TooShort
from .tensor import LabeledTensor
from .units import Quantity


def _as_hz(f) -> float:
    if isinstance(f, Quantity):
        return f.to("Hz").magnitude
    return float(f)


def _as_seconds(t) -> float:
    if isinstance(t, Quantity):
        return t.to("s").magnitude
    return float(t)


def sampling_rate(ts: LabeledTensor) -> float:
    """Sampling rate in Hz, computed as 1 / median(diff(time)).

    The time coordinate is stored explicitly to allow irregular sampling;
    this helper gives the nominal rate.
    """
    time = ts.coord_values("time")
    if len(time) < 2:
        raise TooShort("need at least two samples to derive a sampling rate")
    return 1.0 / float(np.median(np.diff(time)))


def assert_regular_sampling(ts: LabeledTensor, rel_tol: float = 0.01) -> float:
    """Raise IrregularSampling unless all time steps are within 1% of the
    median step.  Returns the sampling rate.
    """
    time = ts.coord_values("time")
    if len(time) < 2:
        raise TooShort("need at least two samples")
    dt = np.diff(time)
    med = np.median(dt)
    if np.max(np.abs(dt - med)) > rel_tol * med:
        raise IrregularSampling(
            f"time steps deviate more than {rel_tol:.0%} from the median"
        )
    return 1.0 / float(med)


def freq_filter(ts: LabeledTensor, fmin, fmax, butter_order: int = 4) -> LabeledTensor:
    """Zero-phase (forward-backward) Butterworth filter along the time dim.

    ``fmin=0`` gives a low-pass, ``fmax=0`` a high-pass, both non-zero a
    band-pass.  Edges are padded by odd reflection with a length of
    ``3 * order * fs / fc`` samples (capped at N-1), where fc is the lower
    band edge (or the cutoff for a low-pass).
    """
    fmin = _as_hz(fmin)
    fmax = _as_hz(fmax)
    fs = sampling_rate(ts)
    nyq = fs / 2.0

    if fmin < 0 or fmin >= nyq:
        raise BadBand(f"fmin={fmin} Hz outside [0, Nyquist={nyq:.4g})")
    if fmax >= nyq:
        raise BadBand(f"fmax={fmax} Hz must be below Nyquist={nyq:.4g}")
    if fmin == 0 and fmax == 0:
        raise BadBand("fmin and fmax cannot both be zero")

    if fmin == 0:
        sos = signal.butter(butter_order, fmax, btype="lowpass", fs=fs, output="sos")
        fc = fmax
    elif fmax == 0:
        sos = signal.butter(butter_order, fmin, btype="highpass", fs=fs, output="sos")
        fc = fmin
    else:
        if fmax <= fmin:
            raise BadBand(f"fmax={fmax} must exceed fmin={fmin}")
        sos = signal.butter(
            butter_order, [fmin, fmax], btype="bandpass", fs=fs, output="sos"
        )
        fc = fmin

    ax = ts.axis("time")
    n = ts.shape[ax]
    padlen = int(min(round(3 * butter_order * fs / fc), n - 1))
    out = signal.sosfiltfilt(sos, ts.data, axis=ax, padtype="odd", padlen=padlen)
    return ts.with_data(out)
