"""Intensity/OD/concentration conversion, channel splitting and nuisance
removal.

The modified Beer-Lambert model used throughout:

    dOD(lambda) = sum_c eps_c(lambda) * dC_c * L_ch * DPF(lambda)

with eps in 1/(M*mm), the channel distance L in mm and the differential
pathlength factor DPF unitless.  Converting to concentration replaces the
wavelength dimension with the chromophore dimension.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    BadParam,
    NonPositiveAmplitude,
    SingularExtinction,
    ZeroWeights,
)
from .quality import channel_distances
from .recording import LabeledPoints
from .tensor import LabeledTensor
from .units import Quantity, parse_unit

CHROMOPHORES = ("HbO", "HbR")


@dataclass(frozen=True)
class ExtinctionTable:
    """Molar extinction coefficients in 1/(M*mm) over wavelength in nm.

    Lookup interpolates linearly and raises outside the tabulated range.
    """

    name: str
    wavelengths: np.ndarray
    eps_hbo: np.ndarray
    eps_hbr: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float)
        hbo = np.asarray(self.eps_hbo, dtype=float)
        hbr = np.asarray(self.eps_hbr, dtype=float)
        if not np.all(np.diff(wl) > 0):
            raise BadParam("extinction wavelengths must be strictly increasing")
        if np.any(hbo <= 0) or np.any(hbr <= 0):
            raise BadParam("extinction coefficients must be positive")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "eps_hbo", hbo)
        object.__setattr__(self, "eps_hbr", hbr)

    def eps_matrix(self, wavelengths: Sequence[float]) -> np.ndarray:
        """(n_wavelengths, 2) matrix of [eps_HbO, eps_HbR] rows."""
        wl = np.asarray(wavelengths, dtype=float)
        lo, hi = self.wavelengths[0], self.wavelengths[-1]
        if np.any(wl < lo) or np.any(wl > hi):
            raise BadParam(
                f"wavelengths {wl} outside tabulated range [{lo}, {hi}] nm"
            )
        return np.column_stack(
            [np.interp(wl, self.wavelengths, self.eps_hbo),
             np.interp(wl, self.wavelengths, self.eps_hbr)]
        )


def load_extinction_csv(source) -> ExtinctionTable:
    """Load a wavelength_nm,eps_hbo_per_M_mm,eps_hbr_per_M_mm CSV.

    ``source`` may be a path, an open file or an iterable of lines.
    """
    if hasattr(source, "read") or isinstance(source, (list, tuple)):
        rows = list(csv.reader(source))
    else:
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
    header = rows[0]
    if header != ["wavelength_nm", "eps_hbo_per_M_mm", "eps_hbr_per_M_mm"]:
        raise BadParam(f"unexpected extinction CSV header: {header}")
    data = np.asarray([[float(x) for x in r] for r in rows[1:] if r])
    return ExtinctionTable("csv", data[:, 0], data[:, 1], data[:, 2])


def _builtin_prahl() -> ExtinctionTable:
    text = resources.files("dotkit.data").joinpath("prahl_extinction.csv").read_text()
    table = load_extinction_csv(text.splitlines())
    return ExtinctionTable("prahl", table.wavelengths, table.eps_hbo, table.eps_hbr)


_TABLES: dict[str, ExtinctionTable] = {}


def get_extinction(spectrum) -> ExtinctionTable:
    """Resolve a table name ('prahl') or pass an ExtinctionTable through."""
    if isinstance(spectrum, ExtinctionTable):
        return spectrum
    if spectrum not in _TABLES:
        if spectrum != "prahl":
            raise BadParam(f"unknown extinction spectrum '{spectrum}'")
        _TABLES["prahl"] = _builtin_prahl()
    return _TABLES[spectrum]


def dpf_vector(dpf, wavelengths: Sequence[float]) -> np.ndarray:
    """Per-wavelength differential pathlength factors (> 0)."""
    wl = np.asarray(wavelengths, dtype=float)
    if isinstance(dpf, Mapping):
        vec = np.asarray([float(dpf[w]) for w in wl])
    elif np.isscalar(dpf):
        vec = np.full(len(wl), float(dpf))
    else:
        vec = np.asarray(dpf, dtype=float)
        if vec.shape != wl.shape:
            raise BadParam(f"dpf has shape {vec.shape}, expected {wl.shape}")
    if np.any(vec <= 0):
        raise BadParam("dpf values must be positive")
    return vec


# --- intensity <-> optical density --------------------------------------------


def int2od(amp: LabeledTensor) -> LabeledTensor:
    """Optical density: -ln(amp / mean_t(amp)).

    Amplitudes must be strictly positive; use :func:`clamp_amp` explicitly
    if a recording contains non-positive samples.
    """
    if np.any(amp.data <= 0) or np.any(~np.isfinite(amp.data)):
        raise NonPositiveAmplitude(
            "amplitudes must be strictly positive and finite before int2od"
        )
    ax = amp.axis("time")
    mean = amp.data.mean(axis=ax, keepdims=True)
    od = -np.log(amp.data / mean)
    return amp.with_data(od, unit="unitless")


def od2int(od: LabeledTensor) -> LabeledTensor:
    """Inverse of :func:`int2od` up to the stored mean: exp(-od)."""
    return od.with_data(np.exp(-od.data), unit="unitless")


def clamp_amp(amp: LabeledTensor, rel_floor: float = 1e-6) -> LabeledTensor:
    """Clamp non-positive amplitudes to rel_floor * mean(|amp|) per channel.

    Never applied implicitly; int2od treats non-positive input as an error.
    """
    ax = amp.axis("time")
    floor = rel_floor * np.abs(amp.data).mean(axis=ax, keepdims=True)
    floor = np.maximum(floor, rel_floor)
    return amp.with_data(np.maximum(amp.data, floor))


# --- mBLL ---------------------------------------------------------------------


def _conversion_system(ts: LabeledTensor, geo3d: LabeledPoints, dpf, spectrum):
    ext = get_extinction(spectrum)
    wavelengths = ts.coord_values("wavelength").astype(float)
    eps = ext.eps_matrix(wavelengths)  # (n_wl, 2) in 1/(M*mm)
    if np.linalg.matrix_rank(eps) < len(CHROMOPHORES):
        raise SingularExtinction(
            f"extinction matrix rank-deficient at wavelengths {wavelengths}"
        )
    dpf_vec = dpf_vector(dpf, wavelengths)
    dist = channel_distances(ts, geo3d)
    dist_mm = dist.data * parse_unit(dist.unit).conversion_factor(parse_unit("mm"))
    return eps, dpf_vec, dist_mm


def od2conc(od: LabeledTensor, geo3d: LabeledPoints, dpf,
            spectrum="prahl") -> LabeledTensor:
    """Concentration changes (uM) from optical densities.

    Solves the Beer-Lambert system per channel and time point by least
    squares over wavelengths; the wavelength dim is replaced by chromo.
    """
    eps, dpf_vec, dist_mm = _conversion_system(od, geo3d, dpf, spectrum)

    wl_ax = od.axis("wavelength")
    ch_ax = od.axis("channel")
    data = np.moveaxis(od.data, (ch_ax, wl_ax), (0, 1))
    lead_shape = data.shape[2:]
    flat = data.reshape(data.shape[0], data.shape[1], -1)

    n_ch = flat.shape[0]
    conc = np.empty((n_ch, len(CHROMOPHORES), flat.shape[2]))
    pinv = np.linalg.pinv(eps)  # (2, n_wl)
    for c in range(n_ch):
        scaled = flat[c] / (dist_mm[c] * dpf_vec[:, None])
        conc[c] = pinv @ scaled
    conc = conc.reshape((n_ch, len(CHROMOPHORES)) + lead_shape)
    conc = np.moveaxis(conc, (0, 1), (ch_ax, wl_ax)) * 1e6  # M -> uM

    dims = tuple("chromo" if d == "wavelength" else d for d in od.dims)
    coords = {n: c for n, c in od.coords.items() if c[0] != "wavelength"}
    coords["chromo"] = ("chromo", list(CHROMOPHORES))
    return LabeledTensor(dims, conc, coords, "uM")


def conc2od(conc: LabeledTensor, geo3d: LabeledPoints, dpf,
            spectrum="prahl", wavelengths: Sequence[float] | None = None,
            ) -> LabeledTensor:
    """Optical densities from concentration changes (inverse of od2conc)."""
    if wavelengths is None:
        if "wavelength" in conc.coords:
            wavelengths = conc.coord_values("wavelength").astype(float)
        else:
            raise BadParam("conc2od needs target wavelengths")
    wavelengths = np.asarray(wavelengths, dtype=float)

    probe = LabeledTensor(
        tuple("wavelength" if d == "chromo" else d for d in conc.dims),
        np.repeat(np.take(conc.data, [0], axis=conc.axis("chromo")),
                  len(wavelengths), axis=conc.axis("chromo")),
        {**{n: c for n, c in conc.coords.items() if c[0] != "chromo"},
         "wavelength": ("wavelength", wavelengths)},
        "unitless",
    )
    eps, dpf_vec, dist_mm = _conversion_system(probe, geo3d, dpf, spectrum)

    factor = parse_unit(conc.unit).conversion_factor(parse_unit("M"))
    ch_ax = conc.axis("channel")
    cr_ax = conc.axis("chromo")
    data = np.moveaxis(conc.data * factor, (ch_ax, cr_ax), (0, 1))
    lead_shape = data.shape[2:]
    flat = data.reshape(data.shape[0], data.shape[1], -1)

    od = np.empty((flat.shape[0], len(wavelengths), flat.shape[2]))
    for c in range(flat.shape[0]):
        od[c] = (eps @ flat[c]) * (dist_mm[c] * dpf_vec[:, None])
    od = od.reshape((flat.shape[0], len(wavelengths)) + lead_shape)
    od = np.moveaxis(od, (0, 1), (ch_ax, cr_ax))

    dims = tuple("wavelength" if d == "chromo" else d for d in conc.dims)
    coords = {n: c for n, c in conc.coords.items() if c[0] != "chromo"}
    coords["wavelength"] = ("wavelength", wavelengths)
    return LabeledTensor(dims, od, coords, "unitless")


# --- channel split and global component ---------------------------------------


def split_long_short(ts: LabeledTensor, geo3d: LabeledPoints,
                     distance_threshold) -> tuple[LabeledTensor, LabeledTensor]:
    """Partition channels by source-detector distance; ties go to long."""
    if isinstance(distance_threshold, Quantity):
        thresh = distance_threshold
    else:
        thresh = Quantity(float(distance_threshold), "mm")
    dist = channel_distances(ts, geo3d)
    thresh_mag = thresh.to(dist.unit).magnitude
    is_long = dist.data >= thresh_mag
    long_ts = ts.take("channel", np.flatnonzero(is_long))
    short_ts = ts.take("channel", np.flatnonzero(~is_long))
    return long_ts, short_ts


def global_component_subtract(ts: LabeledTensor, weights: LabeledTensor | None = None,
                              k: int = 0):
    """Subtract each channel's least-squares projection on the weighted
    global mean signal.

    The global component g(t) is the weights-weighted channel average,
    computed separately per wavelength/chromo plane.  Only ``k=0`` (mean
    regressor) is implemented; k > 0 is rejected.

    Returns ``(residual, global_component)``.
    """
    if k != 0:
        raise NotImplementedError("only k=0 (mean regressor) is supported")
    other_dims = [d for d in ts.dims if d not in ("channel", "time")]
    plane_dim = other_dims[0] if other_dims else None

    arr = ts.transpose(*(
        ("channel", plane_dim, "time") if plane_dim else ("channel", "time")
    )).data
    if plane_dim is None:
        arr = arr[:, None, :]

    if weights is None:
        w = np.ones(arr.shape[:2])
    else:
        wt = weights
        if plane_dim and plane_dim in wt.dims:
            w = wt.transpose("channel", plane_dim).data
        else:
            w = np.repeat(wt.data[:, None], arr.shape[1], axis=1)
    if np.any(w < 0) or np.all(w == 0):
        raise ZeroWeights("weights must be non-negative and not all zero")
    wsum = w.sum(axis=0)
    if np.any(wsum == 0):
        raise ZeroWeights("weights sum to zero in at least one plane")

    g = (w[:, :, None] * arr).sum(axis=0) / wsum[:, None]  # (plane, time)

    gg = (g * g).sum(axis=-1)  # (plane,)
    resid = np.empty_like(arr)
    for p in range(arr.shape[1]):
        if gg[p] == 0:
            resid[:, p, :] = arr[:, p, :]
            continue
        beta = arr[:, p, :] @ g[p] / gg[p]  # (channel,)
        resid[:, p, :] = arr[:, p, :] - beta[:, None] * g[p]

    if plane_dim is None:
        resid_t = LabeledTensor(("channel", "time"), resid[:, 0, :],
                                ts.coords, ts.unit)
        g_t = LabeledTensor(("time",), g[0],
                            {n: ("time", v) for n, v in ts.coords_on("time").items()},
                            ts.unit)
        out = resid_t.transpose(*ts.dims)
        return out, g_t

    resid_t = LabeledTensor(("channel", plane_dim, "time"), resid,
                            ts.coords, ts.unit).transpose(*ts.dims)
    g_coords = {n: ("time", v) for n, v in ts.coords_on("time").items()}
    g_coords.update({n: (plane_dim, v) for n, v in ts.coords_on(plane_dim).items()})
    g_t = LabeledTensor((plane_dim, "time"), g, g_coords, ts.unit)
    return resid_t, g_t
