"""The Recording container and labeled point clouds."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimMismatch, MissingOptode, SchemaError
from .stim import StimTable
from .tensor import LabeledTensor
from .units import parse_unit


class PointType(str, Enum):
    SOURCE = "SOURCE"
    DETECTOR = "DETECTOR"
    LANDMARK = "LANDMARK"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class LabeledPoints:
    """Labeled 3D points in a named coordinate reference system."""

    labels: tuple[str, ...]
    point_types: tuple[PointType, ...]
    crs: str
    positions: np.ndarray  # (N, 3) float64
    unit: str = "mm"

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(set(labels)) != len(labels):
            raise SchemaError("point labels must be unique")
        if not self.crs:
            raise SchemaError("crs name must be non-empty")
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.shape != (len(labels), 3):
            raise DimMismatch(
                f"positions must be ({len(labels)}, 3), got {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise SchemaError("point positions must be finite")
        types = tuple(PointType(t) for t in self.point_types)
        if len(types) != len(labels):
            raise DimMismatch("one point type per label required")
        parse_unit(self.unit)
        pos = np.ascontiguousarray(pos)
        pos.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "point_types", types)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return len(self.labels)

    def position_of(self, label: str) -> np.ndarray:
        try:
            i = self.labels.index(label)
        except ValueError:
            raise MissingOptode(f"no point labeled '{label}'") from None
        return self.positions[i]

    def of_type(self, point_type: PointType) -> "LabeledPoints":
        keep = [i for i, t in enumerate(self.point_types) if t == point_type]
        return LabeledPoints(
            tuple(self.labels[i] for i in keep),
            tuple(self.point_types[i] for i in keep),
            self.crs,
            self.positions[keep],
            self.unit,
        )


@dataclass
class Recording:
    """Container carrying time series and related objects through a pipeline.

    ``timeseries`` holds the fNIRS series, ``aux_ts`` auxiliary sensors,
    ``masks`` boolean quality masks sharing coords with the series they
    annotate, and ``meta`` free-form string metadata.
    """

    timeseries: dict[str, LabeledTensor] = field(default_factory=dict)
    geo3d: LabeledPoints | None = None
    stim: StimTable = field(default_factory=StimTable)
    aux_ts: dict[str, LabeledTensor] = field(default_factory=dict)
    masks: dict[str, LabeledTensor] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)
    # derived results without time-series semantics (fit tables, images,
    # metrics); serialized alongside the series
    derived: dict[str, LabeledTensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> LabeledTensor:
        return self.timeseries[name]

    def __setitem__(self, name: str, ts: LabeledTensor) -> None:
        self.timeseries[name] = ts

    def __contains__(self, name: str) -> bool:
        return name in self.timeseries

    def validate(self) -> None:
        """Re-check container invariants; raises on violation."""
        for name, ts in self.timeseries.items():
            if "time" not in ts.dims:
                raise SchemaError(f"time series '{name}' lacks a time dim")
            if "channel" in ts.dims and "channel" not in ts.coords:
                raise SchemaError(
                    f"time series '{name}' has a channel dim without a "
                    "channel coordinate"
                )
        for name, ts in self.aux_ts.items():
            if "time" not in ts.dims:
                raise SchemaError(f"aux series '{name}' lacks a time dim")
        for name, mask in self.masks.items():
            vals = mask.data
            if not np.all((vals == 0.0) | (vals == 1.0)):
                raise SchemaError(f"mask '{name}' is not boolean")
        for key, value in self.meta.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise SchemaError("meta entries must map strings to strings")
