"""Portable on-disk container for recordings, sensitivities and surfaces.

Layout: a directory holding ``manifest.json`` (UTF-8, canonical key
order, schema_version "1"), one raw little-endian float64 file per array
(C row-major, named ``<name>.f64`` with '/' replaced by '__') and
``stim.csv``.  sha256 digests of the data files are recorded in the
manifest, so a container round-trips byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from pathlib import Path

import numpy as np

from .errors import ChecksumError, DimMismatch, IoError, ManifestError, SchemaError
from .imgrecon import SensitivityMatrix, TriSurface
from .recording import LabeledPoints, PointType, Recording
from .stim import read_stim_csv, write_stim_csv
from .tensor import LabeledTensor

SCHEMA_VERSION = "1"

_ROLE_TS = "ts/"
_ROLE_AUX = "aux/"
_ROLE_MASK = "mask/"
_ROLE_DERIVED = "derived/"
_GEO3D = "geo3d"


def _data_filename(name: str) -> str:
    return name.replace("/", "__") + ".f64"


def _sha256(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def _coord_entry(name: str, dim: str, values: np.ndarray) -> dict:
    if values.dtype == object:
        dtype, vals = "str", [str(v) for v in values]
    elif values.dtype.kind == "b":
        dtype, vals = "bool", [bool(v) for v in values]
    elif values.dtype.kind in ("i", "u"):
        dtype, vals = "i64", [int(v) for v in values]
    else:
        dtype, vals = "f64", [float(v) for v in values]
    return {"dim": dim, "dtype": dtype, "name": name, "values": vals}


def _coord_values_from_entry(entry: dict) -> np.ndarray:
    dtype = entry["dtype"]
    values = entry["values"]
    if dtype == "str":
        return np.asarray([str(v) for v in values], dtype=object)
    if dtype == "bool":
        return np.asarray(values, dtype=bool)
    if dtype == "i64":
        return np.asarray(values, dtype=np.int64)
    if dtype == "f64":
        return np.asarray(values, dtype=np.float64)
    raise ManifestError(f"unknown coord dtype '{dtype}'")


def _array_entry(name: str, tensor: LabeledTensor, payload: bytes) -> dict:
    return {
        "coords": [
            _coord_entry(cname, dim, values)
            for cname, (dim, values) in sorted(tensor.coords.items())
        ],
        "data_file": _data_filename(name),
        "dims": [{"name": d, "size": s} for d, s in tensor.sizes.items()],
        "name": name,
        "sha256": _sha256(payload),
        "unit": tensor.unit,
    }


def _tensor_payload(tensor: LabeledTensor) -> bytes:
    return np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()


def _write_manifest(path: Path, manifest: dict) -> None:
    text = json.dumps(manifest, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))
    (path / "manifest.json").write_text(text, encoding="utf-8")


def _atomic_replace(tmp: Path, target: Path) -> None:
    if target.exists():
        shutil.rmtree(target)
    os.replace(tmp, target)


def _write_arrays(path: Path, entries: list, arrays: dict[str, LabeledTensor]):
    for name, tensor in arrays.items():
        payload = _tensor_payload(tensor)
        entries.append(_array_entry(name, tensor, payload))
        (path / _data_filename(name)).write_bytes(payload)


def _geo3d_tensor(geo3d: LabeledPoints) -> LabeledTensor:
    return LabeledTensor(
        ("label", geo3d.crs),
        geo3d.positions,
        {
            "label": ("label", list(geo3d.labels)),
            "point_type": ("label", [t.value for t in geo3d.point_types]),
        },
        geo3d.unit,
    )


def _geo3d_from_tensor(t: LabeledTensor) -> LabeledPoints:
    crs = t.dims[1]
    return LabeledPoints(
        tuple(str(v) for v in t.coord_values("label")),
        tuple(PointType(str(v)) for v in t.coord_values("point_type")),
        crs,
        t.data,
        t.unit,
    )


def write_container(rec: Recording, path) -> None:
    """Write a Recording to a container directory (atomic replace)."""
    target = Path(path)
    tmp = target.with_name(target.name + f".tmp-{os.getpid()}")
    try:
        tmp.mkdir(parents=True, exist_ok=False)
        entries: list = []
        arrays: dict[str, LabeledTensor] = {}
        for name, ts in rec.timeseries.items():
            arrays[_ROLE_TS + name] = ts
        for name, ts in rec.aux_ts.items():
            arrays[_ROLE_AUX + name] = ts
        for name, ts in rec.masks.items():
            arrays[_ROLE_MASK + name] = ts
        for name, ts in rec.derived.items():
            arrays[_ROLE_DERIVED + name] = ts
        if rec.geo3d is not None:
            arrays[_GEO3D] = _geo3d_tensor(rec.geo3d)
        _write_arrays(tmp, entries, arrays)
        entries.sort(key=lambda e: e["name"])
        manifest = {
            "arrays": entries,
            "meta": dict(sorted(rec.meta.items())),
            "schema_version": SCHEMA_VERSION,
        }
        _write_manifest(tmp, manifest)
        write_stim_csv(rec.stim, tmp / "stim.csv")
        _atomic_replace(tmp, target)
    except OSError as exc:
        raise IoError(f"failed to write container at {path}: {exc}") from exc
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def peek_container(path) -> dict:
    """Parse and validate the manifest without reading any data file."""
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.exists():
        raise ManifestError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"unsupported schema_version {manifest.get('schema_version')!r}"
        )
    if not isinstance(manifest.get("arrays"), list):
        raise ManifestError("manifest lacks an arrays list")
    for entry in manifest["arrays"]:
        for key in ("name", "dims", "unit", "data_file", "sha256", "coords"):
            if key not in entry:
                raise ManifestError(f"array entry missing '{key}'")
    return manifest


def _read_tensor(path: Path, entry: dict) -> LabeledTensor:
    data_path = path / entry["data_file"]
    if not data_path.exists():
        raise ManifestError(f"data file missing: {entry['data_file']}")
    payload = data_path.read_bytes()
    if _sha256(payload) != entry["sha256"]:
        raise ChecksumError(f"sha256 mismatch for {entry['data_file']}")
    dims = tuple(d["name"] for d in entry["dims"])
    shape = tuple(int(d["size"]) for d in entry["dims"])
    expected = int(np.prod(shape)) * 8 if shape else 8
    if len(payload) != expected:
        raise DimMismatch(
            f"{entry['data_file']}: {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(shape)
    coords = {
        c["name"]: (c["dim"], _coord_values_from_entry(c))
        for c in entry["coords"]
    }
    return LabeledTensor(dims, data, coords, entry["unit"])


def read_container(path) -> Recording:
    """Read a container; invariants are re-validated before returning."""
    root = Path(path)
    manifest = peek_container(root)
    rec = Recording(meta={str(k): str(v) for k, v in manifest.get("meta", {}).items()})
    for entry in manifest["arrays"]:
        tensor = _read_tensor(root, entry)
        name = entry["name"]
        if name.startswith(_ROLE_TS):
            rec.timeseries[name[len(_ROLE_TS):]] = tensor
        elif name.startswith(_ROLE_AUX):
            rec.aux_ts[name[len(_ROLE_AUX):]] = tensor
        elif name.startswith(_ROLE_MASK):
            rec.masks[name[len(_ROLE_MASK):]] = tensor
        elif name.startswith(_ROLE_DERIVED):
            rec.derived[name[len(_ROLE_DERIVED):]] = tensor
        elif name == _GEO3D:
            rec.geo3d = _geo3d_from_tensor(tensor)
        else:
            raise ManifestError(f"array '{name}' has an unknown role prefix")
    stim_path = root / "stim.csv"
    if stim_path.exists():
        rec.stim = read_stim_csv(stim_path)
    rec.validate()
    return rec


# --- sensitivity matrices and surfaces -----------------------------------------


def write_sensitivity(sens: SensitivityMatrix, path) -> None:
    """Store a sensitivity matrix as a single-array container."""
    target = Path(path)
    tmp = target.with_name(target.name + f".tmp-{os.getpid()}")
    try:
        tmp.mkdir(parents=True, exist_ok=False)
        entries: list = []
        _write_arrays(tmp, entries, {"sensitivity": sens.values})
        _write_manifest(tmp, {"arrays": entries, "meta": {},
                              "schema_version": SCHEMA_VERSION})
        _atomic_replace(tmp, target)
    except OSError as exc:
        raise IoError(f"failed to write sensitivity at {path}: {exc}") from exc
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def read_sensitivity(path) -> SensitivityMatrix:
    """Load a sensitivity matrix container.

    A missing ``is_brain`` coord defaults to all-true and is reported in
    the ``warnings`` field of the result.
    """
    root = Path(path)
    manifest = peek_container(root)
    entry = next((e for e in manifest["arrays"] if e["name"] == "sensitivity"),
                 None)
    if entry is None:
        raise SchemaError(f"{path} holds no 'sensitivity' array")
    dims = tuple(d["name"] for d in entry["dims"])
    if dims != ("channel", "vertex", "wavelength"):
        raise SchemaError(
            f"sensitivity dims must be (channel, vertex, wavelength), got {dims}"
        )
    tensor = _read_tensor(root, entry)
    if tensor.unit != "mm":
        raise SchemaError(f"sensitivity unit must be 'mm', got '{tensor.unit}'")
    return SensitivityMatrix(tensor)


def peek_sensitivity(path) -> dict[str, int]:
    """Shape of the stored sensitivity without touching the data file."""
    manifest = peek_container(path)
    entry = next((e for e in manifest["arrays"] if e["name"] == "sensitivity"),
                 None)
    if entry is None:
        raise SchemaError(f"{path} holds no 'sensitivity' array")
    return {d["name"]: int(d["size"]) for d in entry["dims"]}


def write_surface(surface: TriSurface, path) -> None:
    """Store a triangle surface (vertices + faces) as a container."""
    target = Path(path)
    tmp = target.with_name(target.name + f".tmp-{os.getpid()}")
    try:
        tmp.mkdir(parents=True, exist_ok=False)
        vertex_coords = {}
        if "parcel" in surface.vertex_coords:
            vertex_coords["parcel"] = (
                "vertex", [str(p) for p in surface.vertex_coords["parcel"]]
            )
        vertices = LabeledTensor(("vertex", surface.crs), surface.vertices,
                                 vertex_coords, surface.unit)
        faces = LabeledTensor(("face", "corner"),
                              surface.faces.astype(np.float64), {}, "unitless")
        entries: list = []
        _write_arrays(tmp, entries, {"faces": faces, "vertices": vertices})
        entries.sort(key=lambda e: e["name"])
        _write_manifest(tmp, {"arrays": entries, "meta": {},
                              "schema_version": SCHEMA_VERSION})
        _atomic_replace(tmp, target)
    except OSError as exc:
        raise IoError(f"failed to write surface at {path}: {exc}") from exc
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def read_surface(path) -> TriSurface:
    root = Path(path)
    manifest = peek_container(root)
    entries = {e["name"]: e for e in manifest["arrays"]}
    if "vertices" not in entries or "faces" not in entries:
        raise SchemaError(f"{path} lacks vertices/faces arrays")
    vertices = _read_tensor(root, entries["vertices"])
    faces = _read_tensor(root, entries["faces"])
    if vertices.data.shape[1] != 3 or faces.data.shape[1] != 3:
        raise SchemaError("vertices and faces must be (N, 3)")
    vertex_coords = {}
    if "parcel" in vertices.coords:
        vertex_coords["parcel"] = np.asarray(
            [str(p) for p in vertices.coord_values("parcel")], dtype=object
        )
    return TriSurface(vertices.data, faces.data.astype(np.int64),
                      crs=vertices.dims[1], unit=vertices.unit,
                      vertex_coords=vertex_coords)
