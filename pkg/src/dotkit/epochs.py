"""Event-locked epoching, baseline correction, block averaging and epoch
feature extraction."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import BadSlice, NoMatchingEvents
from .frequency import _as_seconds, assert_regular_sampling
from .stim import StimTable
from .tensor import LabeledTensor


def to_epochs(ts: LabeledTensor, stim: StimTable, trial_types: Sequence[str],
              before, after) -> LabeledTensor:
    """Cut [onset-before, onset+after] windows around matching events.

    All epochs share one relative-time grid derived from the sampling
    period.  Events whose window exceeds the recording bounds are skipped;
    query the skipped count with :func:`count_skipped`.
    """
    fs = assert_regular_sampling(ts)
    before_s = _as_seconds(before)
    after_s = _as_seconds(after)
    n_before = int(round(before_s * fs))
    n_after = int(round(after_s * fs))
    reltime = np.arange(-n_before, n_after + 1) / fs

    time = ts.coord_values("time")
    events = [e for e in stim if e.trial_type in set(trial_types)]
    if not events:
        raise NoMatchingEvents(f"no events with trial types {list(trial_types)}")

    ax = ts.axis("time")
    slabs = []
    labels = []
    skipped = 0
    for e in events:
        center = int(np.argmin(np.abs(time - e.onset)))
        i0 = center - n_before
        i1 = center + n_after + 1
        if i0 < 0 or i1 > len(time):
            skipped += 1
            continue
        slabs.append(np.take(ts.data, np.arange(i0, i1), axis=ax))
        labels.append(e.trial_type)
    if not slabs:
        raise NoMatchingEvents("all matching events fall outside the recording")

    data = np.stack(slabs, axis=0)
    dims = ("epoch",) + tuple("reltime" if d == "time" else d for d in ts.dims)
    coords: dict = {"trial_type": ("epoch", labels),
                    "reltime": ("reltime", reltime)}
    for name, (dim, values) in ts.coords.items():
        if dim != "time":
            coords[name] = (dim, values)
    out = LabeledTensor(dims, data, coords, ts.unit)
    object.__setattr__(out, "n_skipped", skipped)
    return out


def count_skipped(epochs: LabeledTensor) -> int:
    """Number of events skipped while building this epoch tensor."""
    return getattr(epochs, "n_skipped", 0)


def baseline_correct(epochs: LabeledTensor) -> LabeledTensor:
    """Subtract each epoch's pre-stimulus (reltime < 0) mean."""
    reltime = epochs.coord_values("reltime")
    pre = reltime < 0
    if not pre.any():
        return epochs
    ax = epochs.axis("reltime")
    base = np.compress(pre, epochs.data, axis=ax).mean(axis=ax, keepdims=True)
    return epochs.with_data(epochs.data - base)


def block_average(epochs: LabeledTensor) -> LabeledTensor:
    """Mean over epochs grouped by trial type.

    The epoch dim is replaced by a trial_type dim ordered by first
    occurrence.
    """
    labels = epochs.coord_values("trial_type")
    order = []
    for lbl in labels:
        if lbl not in order:
            order.append(lbl)
    ax = epochs.axis("epoch")
    groups = [
        np.compress(np.asarray([l == lbl for l in labels]), epochs.data, axis=ax)
        .mean(axis=ax)
        for lbl in order
    ]
    data = np.stack(groups, axis=0)
    dims = ("trial_type",) + tuple(d for d in epochs.dims if d != "epoch")
    coords = {"trial_type": ("trial_type", order)}
    for name, (dim, values) in epochs.coords.items():
        if dim != "epoch":
            coords[name] = (dim, values)
    return LabeledTensor(dims, data, coords, epochs.unit)


_FEATURES = ("slope", "mean", "max", "min", "auc")


def _feature_1d(feature: str, t: np.ndarray, y: np.ndarray) -> float:
    if feature == "slope":
        # least-squares line slope
        tc = t - t.mean()
        denom = (tc**2).sum()
        return float((tc * y).sum() / denom) if denom > 0 else 0.0
    if feature == "mean":
        return float(y.mean())
    if feature == "max":
        return float(y.max())
    if feature == "min":
        return float(y.min())
    if feature == "auc":
        return float(np.trapezoid(y, t))
    raise BadSlice(f"unknown feature type '{feature}'")


def epoch_features(epochs: LabeledTensor, feature_types: Sequence[str],
                   reltime_slices: Mapping[str, tuple] | None = None,
                   ) -> LabeledTensor:
    """Scalar features per epoch, stacked into one 'feature' dimension.

    Supported features: slope (least-squares line slope), mean, max, min
    and auc (trapezoid over the full reltime range unless sliced).
    ``reltime_slices`` optionally restricts a feature to a (tmin, tmax)
    window.  Origin coordinates (feature_type, chromo/wavelength, channel,
    source, detector) are preserved on the feature dim so every feature
    can be traced back to where it came from.
    """
    reltime_slices = dict(reltime_slices or {})
    reltime = epochs.coord_values("reltime")
    for f in feature_types:
        if f not in _FEATURES:
            raise BadSlice(f"unknown feature type '{f}'")
    for f, sl in reltime_slices.items():
        lo = sl[0] if not isinstance(sl, slice) else sl.start
        hi = sl[1] if not isinstance(sl, slice) else sl.stop
        if lo is not None and lo > reltime[-1]:
            raise BadSlice(f"slice for '{f}' starts after the epoch ends")
        if hi is not None and hi < reltime[0]:
            raise BadSlice(f"slice for '{f}' ends before the epoch starts")

    # flatten all non-epoch, non-reltime dims into one trace axis
    other_dims = [d for d in epochs.dims if d not in ("epoch", "reltime")]
    ordered = epochs.transpose("epoch", *other_dims, "reltime")
    arr = ordered.data.reshape(epochs.sizes["epoch"], -1, len(reltime))
    n_traces = arr.shape[1]

    def slice_mask(f):
        sl = reltime_slices.get(f)
        if sl is None:
            return np.ones(len(reltime), dtype=bool)
        lo = sl.start if isinstance(sl, slice) else sl[0]
        hi = sl.stop if isinstance(sl, slice) else sl[1]
        mask = np.ones(len(reltime), dtype=bool)
        if lo is not None:
            mask &= reltime >= lo
        if hi is not None:
            mask &= reltime <= hi
        if not mask.any():
            raise BadSlice(f"slice for '{f}' selects no samples")
        return mask

    blocks = []
    for f in feature_types:
        m = slice_mask(f)
        t = reltime[m]
        vals = np.empty((arr.shape[0], n_traces))
        for i in range(arr.shape[0]):
            for j in range(n_traces):
                vals[i, j] = _feature_1d(f, t, arr[i, j, m])
        blocks.append(vals)
    data = np.concatenate(blocks, axis=1)

    # origin coords: replicate per-dim coordinate values along the stack
    grids = np.meshgrid(
        *[np.arange(epochs.sizes[d]) for d in other_dims], indexing="ij"
    )
    flat_index = {d: g.reshape(-1) for d, g in zip(other_dims, grids)}

    coords: dict = {"feature_type": ("feature",
                                     np.repeat(list(feature_types), n_traces))}
    for name, (dim, values) in epochs.coords.items():
        if dim == "epoch":
            coords[name] = ("epoch", values)
        elif dim in other_dims:
            per_trace = np.asarray(values, dtype=object)[flat_index[dim]]
            coords[name] = ("feature", np.tile(per_trace, len(feature_types)))
    return LabeledTensor(("epoch", "feature"), data, coords, epochs.unit)
