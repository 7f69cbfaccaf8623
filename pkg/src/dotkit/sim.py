"""Ground-truth augmentation: spatial activations, random stimulus tables,
synthetic HRF series in channel space and spike/baseline-shift artifacts
with concentration-calibrated scaling.

All randomness flows through numpy's Philox generator (a 64-bit
counter-based PRNG), so seeds are portable and runs reproducible.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    BadRange,
    BadSeed,
    GridMismatch,
    OnsetOutOfRange,
    UnknownGenerator,
)
from .imgrecon import TriSurface, geodesic_distance
from .preproc import conc2od
from .recording import LabeledPoints
from .stim import StimEvent, StimTable
from .tensor import LabeledTensor
from .units import Quantity


def rng_from_seed(seed: int) -> np.random.Generator:
    """The toolbox-wide PRNG: Philox (counter-based, 64-bit)."""
    return np.random.Generator(np.random.Philox(seed))


# --- spatial activations ---------------------------------------------------------


def build_spatial_activation(brain: TriSurface, seed_vertex: int,
                             spatial_scale=Quantity(2.0, "cm"),
                             intensity_scale=Quantity(1.0, "uM"),
                             hbr_scale: float = -0.4) -> LabeledTensor:
    """Gaussian activation over geodesic distance from a seed vertex.

    HbO_v = intensity * exp(-d_g(v, seed)^2 / (2 * spatial_scale^2)),
    HbR_v = hbr_scale * HbO_v.  Returns a (vertex, chromo) image in M.
    """
    if not 0 <= int(seed_vertex) < brain.n_vertices:
        raise BadSeed(f"seed vertex {seed_vertex} out of range")
    scale_mm = spatial_scale.to("mm").magnitude \
        if isinstance(spatial_scale, Quantity) else float(spatial_scale)
    intensity_m = intensity_scale.to("M").magnitude \
        if isinstance(intensity_scale, Quantity) else float(intensity_scale)
    d = geodesic_distance(brain, int(seed_vertex))
    hbo = intensity_m * np.exp(-(d**2) / (2.0 * scale_mm**2))
    hbo = np.where(np.isfinite(d), hbo, 0.0)
    data = np.stack([hbo, hbr_scale * hbo], axis=1)
    return LabeledTensor(("vertex", "chromo"), data,
                         {"chromo": ("chromo", ["HbO", "HbR"])}, "M")


# --- stimulus tables --------------------------------------------------------------


def _as_s(x) -> float:
    return x.to("s").magnitude if isinstance(x, Quantity) else float(x)


def build_stim_df(max_time, trial_types: Sequence[str],
                  min_interval, max_interval,
                  min_stim_dur, max_stim_dur,
                  min_stim_value: float = 1.0, max_stim_value: float = 1.0,
                  order: str = "random", seed: int = 0) -> StimTable:
    """Generate a random event sequence.

    Onsets advance by duration plus a uniform inter-stimulus interval;
    generation stops when the next event window would exceed ``max_time``.
    ``order`` picks trial types iid-uniformly ('random') or cyclically
    ('alternating').
    """
    max_time = _as_s(max_time)
    lo_i, hi_i = _as_s(min_interval), _as_s(max_interval)
    lo_d, hi_d = _as_s(min_stim_dur), _as_s(max_stim_dur)
    if lo_i < 0 or hi_i < lo_i or lo_d < 0 or hi_d < lo_d \
            or max_stim_value < min_stim_value:
        raise BadRange("invalid random ranges for stimulus generation")
    if order not in ("random", "alternating"):
        raise BadRange(f"unknown order policy '{order}'")
    if not trial_types:
        raise BadRange("need at least one trial type")

    rng = rng_from_seed(seed)
    events = []
    onset = rng.uniform(lo_i, hi_i)
    i = 0
    while True:
        duration = rng.uniform(lo_d, hi_d)
        if onset + duration > max_time:
            break
        value = rng.uniform(min_stim_value, max_stim_value)
        if order == "random":
            tt = trial_types[int(rng.integers(0, len(trial_types)))]
        else:
            tt = trial_types[i % len(trial_types)]
        events.append(StimEvent(onset, duration, value, tt))
        onset = onset + duration + rng.uniform(lo_i, hi_i)
        i += 1
    return StimTable(events)


# --- synthetic HRF time series ------------------------------------------------


def build_synthetic_hrf_timeseries(ts: LabeledTensor, stim: StimTable,
                                   basis,
                                   spatial_chan: LabeledTensor) -> LabeledTensor:
    """Temporal activation per trial type times per-channel spatial weights.

    The temporal profile is the peak-normalized superposition of the basis
    responses of all events of a trial type (gamma kernels are convolved
    over the event duration).  The output has dims (trial_type,
    wavelength, channel, time); summing over trial_type yields the series
    to inject.
    """
    time = ts.coord_values("time")
    trial_types = [str(t) for t in spatial_chan.coord_values("trial_type")]
    plane = "wavelength" if "wavelength" in spatial_chan.dims else "chromo"
    spatial = spatial_chan.transpose("trial_type", plane, "channel")
    if len(stim) and all(e.onset > time[-1] or e.onset + e.duration < time[0]
                         for e in stim):
        raise GridMismatch("no stimulus event overlaps the time grid")

    temporal = np.zeros((len(trial_types), len(time)))
    for k, tt in enumerate(trial_types):
        events = [e for e in stim if e.trial_type == tt]
        acc = np.zeros(len(time))
        for e in events:
            if getattr(basis, "convolve_over_duration", False):
                kern = basis.evaluate(time - e.onset, duration=e.duration)
            else:
                kern = basis.evaluate(time - e.onset)
            acc += e.value * kern.sum(axis=1)
        peak = np.abs(acc).max()
        if peak > 0:
            acc = acc / peak
        temporal[k] = acc

    data = spatial.data[:, :, :, None] * temporal[:, None, None, :]
    coords = {
        "trial_type": ("trial_type", trial_types),
        plane: (plane, spatial.coord_values(plane)),
        "time": ("time", time),
    }
    for name, values in spatial.coords_on("channel").items():
        coords[name] = ("channel", values)
    return LabeledTensor(("trial_type", plane, "channel", "time"), data,
                         coords, spatial_chan.unit)


# --- artifact generation ---------------------------------------------------------


def gen_bl_shift(time: np.ndarray, onset: float,
                 duration: float = 0.0) -> np.ndarray:
    """Unit baseline shift: 0 before onset, 1 at and after."""
    time = np.asarray(time, dtype=float)
    if not time[0] <= onset <= time[-1]:
        raise OnsetOutOfRange(f"onset {onset} outside [{time[0]}, {time[-1]}]")
    return (time >= onset).astype(float)


def gen_spike(time: np.ndarray, onset: float, duration: float) -> np.ndarray:
    """Unit Gaussian spike centered on onset + duration/2, sigma duration/6.

    The center snaps to the nearest sample so the peak value is exactly 1.
    """
    time = np.asarray(time, dtype=float)
    if not time[0] <= onset <= time[-1]:
        raise OnsetOutOfRange(f"onset {onset} outside [{time[0]}, {time[-1]}]")
    center = time[np.argmin(np.abs(time - (onset + duration / 2.0)))]
    sigma = max(duration / 6.0, 1e-9)
    return np.exp(-((time - center) ** 2) / (2.0 * sigma**2))


ARTIFACT_GENERATORS: dict[str, Callable] = {
    "bl_shift": gen_bl_shift,
    "spike": gen_spike,
}


def add_event_timing(events: Sequence[tuple], trial_type: str,
                     channels: Sequence[str] | None = None,
                     table: StimTable | None = None) -> StimTable:
    """Append (onset, duration) artifact events to a timing table."""
    rows = list(table.events) if table is not None else []
    ch = tuple(channels) if channels else None
    for onset, duration in events:
        rows.append(StimEvent(float(onset), float(duration), 1.0,
                              trial_type, ch))
    return StimTable(rows)


def sel_chans_by_opt(optodes: Sequence[str], ts: LabeledTensor) -> list[str]:
    """Channels whose source or detector is in the given optode list."""
    wanted = set(optodes)
    channels = ts.coord_values("channel")
    sources = ts.coord_values("source")
    detectors = ts.coord_values("detector")
    return [str(c) for c, s, d in zip(channels, sources, detectors)
            if s in wanted or d in wanted]


def random_events_perc(time: np.ndarray, fraction: float,
                       trial_types: Sequence[str],
                       channels: Sequence[str] | None = None,
                       seed: int = 0) -> StimTable:
    """Random artifact events until they cover ``fraction`` of the duration.

    Durations are uniform in [0.1, 0.4] s and onsets uniform over the
    recording.
    """
    time = np.asarray(time, dtype=float)
    if fraction < 0:
        raise BadRange("fraction must be >= 0")
    total = float(time[-1] - time[0])
    rng = rng_from_seed(seed)
    events = []
    covered = 0.0
    while covered < fraction * total:
        duration = rng.uniform(0.1, 0.4)
        onset = time[0] + rng.uniform(0.0, max(total - duration, 0.0))
        tt = trial_types[int(rng.integers(0, len(trial_types)))]
        events.append(StimEvent(onset, duration, 1.0, tt,
                                tuple(channels) if channels else None))
        covered += duration
    return StimTable(events)


def _auto_alpha(trace: np.ndarray, time: np.ndarray, onset: float,
                fs: float) -> float:
    """Median half peak-to-peak over 10 s windows around the onset."""
    win = int(round(10.0 * fs))
    if win < 2 or len(trace) < 2:
        return 1.0
    half = 25.0  # seconds of context on each side
    sel = (time >= onset - half) & (time <= onset + half)
    seg = trace[sel]
    if len(seg) < win:
        seg = trace
    n_win = max(len(seg) // win, 1)
    ptps = [np.ptp(seg[i * win:(i + 1) * win]) for i in range(n_win)]
    return float(np.median(ptps) / 2.0)


def add_artifacts(ts: LabeledTensor, timing: StimTable,
                  generators: Mapping[str, Callable] | None = None,
                  mode: str = "auto", scale: float = 1.0) -> LabeledTensor:
    """Add scaled artifacts to the listed channels (all when unset).

    In 'auto' mode each artifact is scaled by alpha * scale, where alpha
    is the median half peak-to-peak amplitude of the target channel over
    sliding 10 s windows around the onset; 'manual' mode uses the scale
    parameter directly.
    """
    if mode not in ("auto", "manual"):
        raise BadRange(f"unknown scaling mode '{mode}'")
    generators = dict(generators or ARTIFACT_GENERATORS)
    time = ts.coord_values("time")
    from .frequency import sampling_rate

    fs = sampling_rate(ts)
    channels = [str(c) for c in ts.coord_values("channel")]
    ordered = ts.transpose("channel", *[d for d in ts.dims if d != "channel"])
    time_ax = ordered.dims.index("time")
    original = ordered.data
    data = original.copy()

    for event in timing:
        gen = generators.get(event.trial_type)
        if gen is None:
            raise UnknownGenerator(
                f"no generator registered for '{event.trial_type}'"
            )
        artifact = gen(time, event.onset, event.duration) * event.value
        targets = [channels.index(c) for c in event.channels] \
            if event.channels else range(len(channels))
        shape = [1] * (data.ndim - 1)
        shape[time_ax - 1] = len(time)
        bump = artifact.reshape(shape)
        for i_ch in targets:
            if mode == "auto":
                # alpha from the unmodified series, so event order is moot
                flat = np.moveaxis(original[i_ch], time_ax - 1, -1)
                flat = flat.reshape(-1, len(time))
                alpha = _auto_alpha(flat[0], time, event.onset, fs)
            else:
                alpha = 1.0
            data[i_ch] = data[i_ch] + alpha * scale * bump
    out = LabeledTensor(ordered.dims, data, ordered.coords, ordered.unit)
    return out.transpose(*ts.dims)


def add_chromo_artifacts_to_od(od: LabeledTensor, timing: StimTable,
                               generators: Mapping[str, Callable] | None,
                               geo3d: LabeledPoints, dpf,
                               amp_uM: float, spectrum="prahl") -> LabeledTensor:
    """Add artifacts calibrated to a concentration amplitude.

    Per event a unit artifact is built in concentration space with
    HbO = HbR = amp_uM * artifact, converted to OD via the Beer-Lambert
    forward model and added to the listed channels.
    """
    generators = dict(generators or ARTIFACT_GENERATORS)
    time = od.coord_values("time")
    channels = [str(c) for c in od.coord_values("channel")]

    delta = np.zeros((len(channels), 2, len(time)))  # (channel, chromo, time)
    for event in timing:
        gen = generators.get(event.trial_type)
        if gen is None:
            raise UnknownGenerator(
                f"no generator registered for '{event.trial_type}'"
            )
        artifact = gen(time, event.onset, event.duration) * event.value
        targets = [channels.index(c) for c in event.channels] \
            if event.channels else range(len(channels))
        for i_ch in targets:
            delta[i_ch, 0] += amp_uM * artifact
            delta[i_ch, 1] += amp_uM * artifact

    conc = LabeledTensor(
        ("channel", "chromo", "time"), delta,
        {**{n: ("channel", v) for n, v in od.coords_on("channel").items()},
         "chromo": ("chromo", ["HbO", "HbR"]),
         "time": ("time", time)},
        "uM",
    )
    wavelengths = od.coord_values("wavelength").astype(float)
    od_delta = conc2od(conc, geo3d, dpf, spectrum, wavelengths=wavelengths)
    aligned = od_delta.transpose(*od.dims)
    return od.with_data(od.data + aligned.data)
