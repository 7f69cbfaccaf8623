"""Labeled, unit-carrying dense tensors.

A :class:`LabeledTensor` is a float64 ndarray with named dimensions,
per-dimension coordinate arrays and a physical unit.  Booleans are stored
as 0.0/1.0 with unit "unitless".  All instances are immutable; operations
return new tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CoordMismatch,
    DimMismatch,
    DuplicateDim,
    UnalignedSelector,
    UnitMismatch,
    UnknownCoord,
    UnknownDim,
)
from .units import Quantity, parse_unit

_REDUCERS = {
    "mean": (np.mean, np.nanmean),
    "sum": (np.sum, np.nansum),
    "max": (np.max, np.nanmax),
    "min": (np.min, np.nanmin),
}


def _freeze(arr: np.ndarray) -> np.ndarray:
    # ascontiguousarray promotes 0-d to 1-d; keep the original shape
    arr = np.ascontiguousarray(arr).reshape(np.shape(arr))
    arr.flags.writeable = False
    return arr


def _coerce_coord_values(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DimMismatch("coordinate arrays must be one-dimensional")
    if arr.dtype == object or arr.dtype.kind in ("U", "S"):
        return _freeze(np.asarray([str(v) for v in arr], dtype=object))
    if arr.dtype.kind == "b":
        return _freeze(arr.astype(bool))
    if arr.dtype.kind in ("i", "u"):
        return _freeze(arr.astype(np.int64))
    return _freeze(arr.astype(np.float64))


def _coords_equal(a: np.ndarray, b: np.ndarray) -> bool:
    if len(a) != len(b):
        return False
    if a.dtype == object or b.dtype == object:
        return a.dtype == b.dtype and all(x == y for x, y in zip(a, b))
    if a.dtype.kind != b.dtype.kind:
        return False
    # float coords compare bit-for-bit: no tolerance
    return np.array_equal(a.view(np.uint8) if a.dtype.kind == "f" else a,
                          b.view(np.uint8) if b.dtype.kind == "f" else b)


@dataclass(frozen=True)
class LabeledTensor:
    """Dense float64 array with named dims, coordinates and a unit.

    ``coords`` maps a coordinate name to ``(attached_dim, values)``.  A
    dimension may carry several coordinate arrays (e.g. ``time`` carries
    both timestamps and a sample counter).
    """

    dims: tuple[str, ...]
    data: np.ndarray
    coords: dict[str, tuple[str, np.ndarray]] = field(default_factory=dict)
    unit: str = "unitless"

    def __post_init__(self):
        dims = tuple(str(d) for d in self.dims)
        if len(set(dims)) != len(dims):
            raise DuplicateDim(f"duplicate dimension names in {dims}")
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != len(dims):
            raise DimMismatch(
                f"data has {data.ndim} axes but {len(dims)} dims were named"
            )
        parse_unit(self.unit)
        coords = {}
        for name, spec in dict(self.coords).items():
            try:
                dim, values = spec
            except (TypeError, ValueError):
                raise DimMismatch(
                    f"coord '{name}' must be a (dim, values) pair"
                ) from None
            if dim not in dims:
                raise UnknownDim(f"coord '{name}' attached to unknown dim '{dim}'")
            values = _coerce_coord_values(values)
            axis = dims.index(dim)
            if len(values) != data.shape[axis]:
                raise DimMismatch(
                    f"coord '{name}' has {len(values)} values but dim "
                    f"'{dim}' has size {data.shape[axis]}"
                )
            coords[name] = (dim, values)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "coords", coords)

    # --- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def sizes(self) -> dict[str, int]:
        return dict(zip(self.dims, self.data.shape))

    def axis(self, dim: str) -> int:
        if dim not in self.dims:
            raise UnknownDim(f"unknown dim '{dim}' (have {self.dims})")
        return self.dims.index(dim)

    def coord_values(self, name: str) -> np.ndarray:
        if name not in self.coords:
            raise UnknownCoord(f"unknown coord '{name}' (have {list(self.coords)})")
        return self.coords[name][1]

    def coord_dim(self, name: str) -> str:
        if name not in self.coords:
            raise UnknownCoord(f"unknown coord '{name}' (have {list(self.coords)})")
        return self.coords[name][0]

    def coords_on(self, dim: str) -> dict[str, np.ndarray]:
        return {n: v for n, (d, v) in self.coords.items() if d == dim}

    @property
    def bool_values(self) -> np.ndarray:
        return self.data != 0.0

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        dims = ", ".join(f"{d}: {s}" for d, s in self.sizes.items())
        return f"<LabeledTensor ({dims}) unit='{self.unit}'>"

    # --- construction helpers ------------------------------------------------

    def with_data(self, data: np.ndarray, unit: str | None = None) -> "LabeledTensor":
        return LabeledTensor(self.dims, data, self.coords, unit or self.unit)

    def rename_unit(self, unit: str) -> "LabeledTensor":
        return LabeledTensor(self.dims, self.data, self.coords, unit)

    def assign_coords(self, **new: tuple[str, Sequence]) -> "LabeledTensor":
        coords = dict(self.coords)
        coords.update(new)
        return LabeledTensor(self.dims, self.data, coords, self.unit)

    def drop_coords(self, *names: str) -> "LabeledTensor":
        coords = {n: c for n, c in self.coords.items() if n not in names}
        return LabeledTensor(self.dims, self.data, coords, self.unit)

    # --- indexing ------------------------------------------------------------

    def take(self, dim: str, indices) -> "LabeledTensor":
        """Positional selection along ``dim``; coords are re-sliced."""
        ax = self.axis(dim)
        indices = np.asarray(indices)
        if indices.dtype.kind not in ("i", "u"):
            indices = indices.astype(np.int64)
        data = np.take(self.data, indices, axis=ax)
        coords = {}
        for name, (cdim, values) in self.coords.items():
            if cdim == dim:
                coords[name] = (cdim, values[indices])
            else:
                coords[name] = (cdim, values)
        return LabeledTensor(self.dims, data, coords, self.unit)

    def select(self, coord_name: str, predicate) -> "LabeledTensor":
        """Coordinate-based selection along the coord's dimension.

        ``predicate`` is one of

        - a value set (list / tuple / set / ndarray): keep positions whose
          coordinate value is in the set,
        - a ``slice(lo, hi)``: keep values with ``lo <= value <= hi``
          (either bound may be None),
        - a boolean selector (LabeledTensor or ndarray) aligned with the
          coord's dimension.
        """
        values = self.coord_values(coord_name)
        dim = self.coord_dim(coord_name)
        n = len(values)

        if isinstance(predicate, LabeledTensor):
            if predicate.dims != (dim,) or predicate.shape != (n,):
                raise UnalignedSelector(
                    f"boolean selector must be 1-d over dim '{dim}' with size {n}"
                )
            mask = predicate.bool_values
        elif isinstance(predicate, slice):
            lo, hi = predicate.start, predicate.stop
            mask = np.ones(n, dtype=bool)
            if lo is not None:
                mask &= values >= lo
            if hi is not None:
                mask &= values <= hi
        elif isinstance(predicate, np.ndarray) and predicate.dtype.kind == "b":
            if predicate.shape != (n,):
                raise UnalignedSelector(
                    f"boolean selector has shape {predicate.shape}, expected ({n},)"
                )
            mask = predicate
        elif isinstance(predicate, (list, tuple, set, frozenset, np.ndarray)):
            wanted = set(predicate) if not isinstance(predicate, np.ndarray) \
                else set(predicate.tolist())
            mask = np.asarray([v in wanted for v in values], dtype=bool)
        else:
            # single value
            mask = np.asarray([v == predicate for v in values], dtype=bool)

        return self.take(dim, np.flatnonzero(mask))

    # --- reductions ----------------------------------------------------------

    def reduce(self, dim: str, op: str, skipna: bool = False) -> "LabeledTensor":
        """Reduce ``dim`` away with one of mean|sum|std|max|min|all|any.

        ``std`` uses the unbiased (N-1) denominator.  The default is the
        strict variant (NaN propagates); ``skipna=True`` ignores NaN.
        """
        ax = self.axis(dim)
        if op in _REDUCERS:
            fn = _REDUCERS[op][1 if skipna else 0]
            data = fn(self.data, axis=ax)
            unit = self.unit
        elif op == "std":
            fn = np.nanstd if skipna else np.std
            data = fn(self.data, axis=ax, ddof=1)
            unit = self.unit
        elif op in ("all", "any"):
            vals = self.bool_values
            if skipna:
                nan = np.isnan(self.data)
                vals = np.where(nan, op == "all", vals)
            data = (vals.all(axis=ax) if op == "all" else vals.any(axis=ax))
            data = data.astype(np.float64)
            unit = "unitless"
        else:
            raise ValueError(f"unknown reduction '{op}'")
        dims = tuple(d for d in self.dims if d != dim)
        coords = {n: c for n, c in self.coords.items() if c[0] != dim}
        return LabeledTensor(dims, data, coords, unit)

    # --- arithmetic ----------------------------------------------------------

    def _binary(self, other, op: str) -> "LabeledTensor":
        return binary_op(self, other, op)

    def __add__(self, other):
        return self._binary(other, "add")

    def __radd__(self, other):
        return self._binary(other, "add")

    def __sub__(self, other):
        return self._binary(other, "sub")

    def __rsub__(self, other):
        return binary_op(self, other, "sub", reflect=True)

    def __mul__(self, other):
        return self._binary(other, "mul")

    def __rmul__(self, other):
        return self._binary(other, "mul")

    def __truediv__(self, other):
        return self._binary(other, "div")

    def __lt__(self, other):
        return self._binary(other, "lt")

    def __le__(self, other):
        return self._binary(other, "le")

    def __gt__(self, other):
        return self._binary(other, "gt")

    def __ge__(self, other):
        return self._binary(other, "ge")

    def __and__(self, other):
        return self._binary(other, "and")

    def __or__(self, other):
        return self._binary(other, "or")

    def __invert__(self):
        return self.with_data((~self.bool_values).astype(np.float64), "unitless")

    def __neg__(self):
        return self.with_data(-self.data)

    def transpose(self, *dims: str) -> "LabeledTensor":
        if set(dims) != set(self.dims):
            raise UnknownDim(f"transpose dims {dims} != tensor dims {self.dims}")
        order = [self.axis(d) for d in dims]
        return LabeledTensor(dims, np.transpose(self.data, order), self.coords, self.unit)


def build_labeled_tensor(dims, shape, data, coords=None, unit="unitless") -> LabeledTensor:
    """Validating constructor matching the container field layout.

    ``data`` is a flat row-major sequence of length prod(shape); ``coords``
    maps coordinate names either to plain value arrays (attached to the
    same-named dim) or to ``(dim, values)`` pairs.
    """
    shape = tuple(int(s) for s in shape)
    arr = np.asarray(data, dtype=np.float64).reshape(-1)
    expected = int(np.prod(shape)) if shape else 1
    if arr.size != expected:
        raise DimMismatch(
            f"data has {arr.size} values, expected {expected} for shape {shape}"
        )
    if len(shape) != len(tuple(dims)):
        raise DimMismatch("len(dims) must equal len(shape)")
    norm_coords = {}
    for name, spec in (coords or {}).items():
        if isinstance(spec, tuple) and len(spec) == 2 and isinstance(spec[0], str) \
                and spec[0] in dims:
            norm_coords[name] = spec
        else:
            if name not in dims:
                raise UnknownDim(
                    f"coord '{name}' needs an explicit (dim, values) pair"
                )
            norm_coords[name] = (name, spec)
    return LabeledTensor(tuple(dims), arr.reshape(shape), norm_coords, unit)


def _merge_coords(a: LabeledTensor, b: LabeledTensor, out_dims) -> dict:
    merged: dict[str, tuple[str, np.ndarray]] = {}
    for src in (a, b):
        for name, (dim, values) in src.coords.items():
            if dim not in out_dims:
                continue
            if name in merged:
                pdim, pvalues = merged[name]
                if pdim != dim or not _coords_equal(pvalues, values):
                    raise CoordMismatch(
                        f"coord '{name}' differs between operands"
                    )
            else:
                merged[name] = (dim, values)
    return merged


_CMP = {
    "lt": np.less,
    "le": np.less_equal,
    "gt": np.greater,
    "ge": np.greater_equal,
    "eq": np.equal,
    "ne": np.not_equal,
}


def binary_op(a: LabeledTensor, b, op: str, reflect: bool = False) -> LabeledTensor:
    """Elementwise operation with name-based broadcasting.

    Dims align by name; dims missing in one operand broadcast.  ``add``,
    ``sub`` and comparisons require compatible units (the right operand is
    converted into the left operand's unit).  Comparisons and logical ops
    yield unitless boolean tensors.
    """
    a_unit = parse_unit(a.unit)

    if isinstance(b, Quantity):
        b = LabeledTensor((), np.asarray(b.magnitude), {}, b.unit)
    elif isinstance(b, (int, float, np.floating, np.integer)):
        unit = a.unit if op in ("mul", "div") else a.unit
        if op in ("add", "sub") or op in _CMP or op in ("and", "or"):
            unit = a.unit  # bare numbers adopt the tensor's unit
        b = LabeledTensor((), np.asarray(float(b)), {}, unit)
    if not isinstance(b, LabeledTensor):
        raise TypeError(f"cannot combine LabeledTensor with {type(b)!r}")

    b_unit = parse_unit(b.unit)
    b_data = b.data

    if op in ("add", "sub") or op in _CMP:
        factor = b_unit.conversion_factor(a_unit)  # raises UnitMismatch
        if factor != 1.0:
            b_data = b_data * factor
        out_unit = a.unit if op in ("add", "sub") else "unitless"
    elif op == "mul":
        out_unit = (a_unit * b_unit).text
    elif op == "div":
        out_unit = (a_unit / b_unit).text
    elif op in ("and", "or"):
        out_unit = "unitless"
    else:
        raise ValueError(f"unknown binary op '{op}'")

    out_dims = tuple(a.dims) + tuple(d for d in b.dims if d not in a.dims)
    sizes = dict(zip(a.dims, a.shape))
    for d, s in zip(b.dims, b.shape):
        if d in sizes and sizes[d] != s:
            raise DimMismatch(
                f"dim '{d}' has size {sizes[d]} vs {s} in the two operands"
            )
        sizes.setdefault(d, s)

    def expand(t_dims, data):
        # reorder existing axes to out_dims order, insert size-1 axes elsewhere
        present = [d for d in out_dims if d in t_dims]
        perm = [t_dims.index(d) for d in present]
        data = np.transpose(data, perm)
        shape = [data.shape[present.index(d)] if d in present else 1 for d in out_dims]
        return data.reshape(shape)

    av = expand(tuple(a.dims), a.data)
    bv = expand(tuple(b.dims), b_data)

    if reflect:
        av, bv = bv, av

    if op == "add":
        out = av + bv
    elif op == "sub":
        out = av - bv
    elif op == "mul":
        out = av * bv
    elif op == "div":
        out = av / bv
    elif op == "and":
        out = ((av != 0) & (bv != 0)).astype(np.float64)
    elif op == "or":
        out = ((av != 0) | (bv != 0)).astype(np.float64)
    else:
        out = _CMP[op](av, bv).astype(np.float64)

    out = np.broadcast_to(out, tuple(sizes[d] for d in out_dims)).copy()
    coords = _merge_coords(a, b, out_dims)
    return LabeledTensor(out_dims, out, coords, out_unit)


def select(t: LabeledTensor, coord_name: str, predicate) -> LabeledTensor:
    """Functional alias for :meth:`LabeledTensor.select`."""
    return t.select(coord_name, predicate)


def reduce_dim(t: LabeledTensor, dim: str, op: str, skipna: bool = False) -> LabeledTensor:
    """Functional alias for :meth:`LabeledTensor.reduce`."""
    return t.reduce(dim, op, skipna=skipna)


def stack_tensors(tensors: Sequence[LabeledTensor], dim: str,
                  coords: Mapping[str, Sequence] | None = None) -> LabeledTensor:
    """Stack same-shaped tensors along a new leading dimension.

    ``coords`` maps coordinate names to per-tensor values for the new dim.
    """
    if not tensors:
        raise DimMismatch("cannot stack zero tensors")
    first = tensors[0]
    for t in tensors[1:]:
        if t.dims != first.dims or t.shape != first.shape:
            raise DimMismatch("stacked tensors must share dims and shape")
        if t.unit != first.unit:
            raise UnitMismatch("stacked tensors must share a unit")
    data = np.stack([t.data for t in tensors], axis=0)
    out_dims = (dim,) + tuple(first.dims)
    out_coords: dict = {}
    for name, (cdim, values) in first.coords.items():
        out_coords[name] = (cdim, values)
    for name, values in (coords or {}).items():
        out_coords[name] = (dim, values)
    return LabeledTensor(out_dims, data, out_coords, first.unit)


def concat_tensors(tensors: Sequence[LabeledTensor], dim: str) -> LabeledTensor:
    """Concatenate tensors along an existing dimension, joining its coords."""
    if not tensors:
        raise DimMismatch("cannot concat zero tensors")
    first = tensors[0]
    ax = first.axis(dim)
    for t in tensors[1:]:
        if t.dims != first.dims:
            raise DimMismatch("concatenated tensors must share dims")
        if t.unit != first.unit:
            raise UnitMismatch("concatenated tensors must share a unit")
    data = np.concatenate([t.data for t in tensors], axis=ax)
    coords: dict = {}
    for name, (cdim, values) in first.coords.items():
        if cdim == dim:
            parts = [t.coords[name][1] for t in tensors if name in t.coords]
            if len(parts) != len(tensors):
                raise CoordMismatch(f"coord '{name}' missing on some operands")
            joined = np.concatenate([np.asarray(p, dtype=object) for p in parts]) \
                if values.dtype == object else np.concatenate(parts)
            coords[name] = (cdim, joined)
        else:
            coords[name] = (cdim, values)
    return LabeledTensor(first.dims, data, coords, first.unit)
