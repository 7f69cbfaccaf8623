"""Surface-based DOT image reconstruction.

Tikhonov inversion of a channel x vertex x wavelength sensitivity matrix
with measurement and spatially variant regularization, optional Gaussian
spatial basis functions, direct or wavelength-wise (mua2conc) chromophore
recovery, forward projection, parcel averaging and mesh geodesics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import (
    BadSeed,
    ChannelMismatch,
    DimMismatch,
    EmptySurface,
    NoParcelCoord,
    SchemaError,
    SingularSystem,
)
from .preproc import CHROMOPHORES, get_extinction
from .tensor import LabeledTensor
from .units import parse_unit


@dataclass(frozen=True)
class TriSurface:
    """Triangulated surface with vertices in mm and optional vertex labels."""

    vertices: np.ndarray  # (N, 3)
    faces: np.ndarray  # (M, 3) vertex indices
    crs: str = "ras"
    unit: str = "mm"
    vertex_coords: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        faces = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise SchemaError(f"vertices must be (N, 3), got {verts.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise SchemaError(f"faces must be (M, 3), got {faces.shape}")
        if faces.size and faces.max() >= len(verts):
            raise SchemaError("face index exceeds vertex count")
        parse_unit(self.unit)
        verts.flags.writeable = False
        faces.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(
            self, "vertex_coords",
            {k: np.asarray(v) for k, v in self.vertex_coords.items()},
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class SensitivityMatrix:
    """Forward operator A: channel x vertex x wavelength, unit mm.

    Vertex coords carry ``is_brain`` (bool) and optionally ``parcel``
    labels; channel coords carry channel/source/detector labels.
    """

    values: LabeledTensor
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        t = self.values
        if t.dims != ("channel", "vertex", "wavelength"):
            raise SchemaError(
                f"sensitivity dims must be (channel, vertex, wavelength), "
                f"got {t.dims}"
            )
        if np.any(t.data < 0):
            raise SchemaError("sensitivity matrix must be non-negative")
        if "is_brain" not in t.coords:
            t = t.assign_coords(
                is_brain=("vertex", np.ones(t.sizes["vertex"], dtype=bool))
            )
            object.__setattr__(self, "values", t)
            object.__setattr__(
                self, "warnings",
                tuple(self.warnings) + ("missing is_brain coord; assuming all "
                                        "vertices are brain",),
            )

    @property
    def channels(self) -> np.ndarray:
        return self.values.coord_values("channel")

    @property
    def wavelengths(self) -> np.ndarray:
        return self.values.coord_values("wavelength").astype(float)

    @property
    def is_brain(self) -> np.ndarray:
        return self.values.coord_values("is_brain").astype(bool)

    def select_brain(self) -> "SensitivityMatrix":
        keep = np.flatnonzero(self.is_brain)
        return SensitivityMatrix(self.values.take("vertex", keep), self.warnings)

    def select_channels(self, labels) -> "SensitivityMatrix":
        have = list(self.values.coord_values("channel"))
        idx = [have.index(l) for l in labels]
        return SensitivityMatrix(self.values.take("channel", np.asarray(idx)),
                                 self.warnings)


# --- mesh geodesics -------------------------------------------------------------


def _edge_graph(surface: TriSurface):
    faces = surface.faces
    verts = surface.vertices
    ii = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]])
    jj = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]])
    # deduplicate: an edge shared by several faces must enter once
    edges = np.unique(np.sort(np.column_stack([ii, jj]), axis=1), axis=0)
    ii, jj = edges[:, 0], edges[:, 1]
    ww = np.linalg.norm(verts[ii] - verts[jj], axis=1)
    n = surface.n_vertices
    graph = coo_matrix((np.concatenate([ww, ww]),
                        (np.concatenate([ii, jj]), np.concatenate([jj, ii]))),
                       shape=(n, n)).tocsr()
    return graph


def geodesic_distance(surface: TriSurface, seed_vertex: int) -> np.ndarray:
    """Dijkstra shortest-path distance (mm) from a seed to every vertex.

    The graph is the mesh edge graph weighted by Euclidean edge length;
    unreachable vertices get +inf.
    """
    if surface.n_vertices == 0:
        raise EmptySurface("surface has no vertices")
    seed_vertex = int(seed_vertex)
    if not 0 <= seed_vertex < surface.n_vertices:
        raise BadSeed(
            f"seed {seed_vertex} out of range [0, {surface.n_vertices})"
        )
    graph = _edge_graph(surface)
    dist = dijkstra(graph, directed=False, indices=seed_vertex)
    return np.asarray(dist)


def icosphere(subdivisions: int = 3, radius_mm: float = 80.0) -> TriSurface:
    """Synthetic sphere mesh (subdivided icosahedron) for validation runs."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.asarray([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    index = {v: i for i, v in enumerate(verts)}

    def midpoint(a, b):
        m = tuple((np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0)
        m = tuple(np.asarray(m) / np.linalg.norm(m))
        if m not in index:
            index[m] = len(verts)
            verts.append(m)
        return index[m]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    v = np.asarray(verts) * radius_mm
    return TriSurface(v, np.asarray(faces), crs="synthetic", unit="mm")


# --- Gaussian spatial basis ------------------------------------------------------


@dataclass(frozen=True)
class SpatialBasis:
    """Gaussian kernels on geodesic distance, one column per kernel."""

    weights: np.ndarray  # (n_vertex, n_basis)
    centers: np.ndarray  # vertex indices into the stacked vertex dim
    sigma_mm: np.ndarray  # per basis
    surface: np.ndarray  # 'brain' | 'scalp' per basis


def _farthest_point_centers(surface: TriSurface, spacing_mm: float, graph=None):
    if surface.n_vertices == 0:
        raise EmptySurface("cannot place basis centers on an empty surface")
    graph = _edge_graph(surface) if graph is None else graph
    centers = [0]
    dist = dijkstra(graph, directed=False, indices=0)
    while True:
        far = int(np.argmax(dist))
        if not np.isfinite(dist[far]) or dist[far] < spacing_mm:
            break
        centers.append(far)
        dist = np.minimum(dist, dijkstra(graph, directed=False, indices=far))
    return centers


def _surface_kernels(surface: TriSurface, spacing_mm: float, sigma_mm: float):
    graph = _edge_graph(surface)
    centers = _farthest_point_centers(surface, spacing_mm, graph)
    dists = dijkstra(graph, directed=False, indices=centers)  # (n_centers, n_vtx)
    weights = np.exp(-(dists**2) / (2.0 * sigma_mm**2))
    weights[dists > 3.0 * sigma_mm] = 0.0  # truncate at 3 sigma
    return np.asarray(centers), weights.T  # (n_vtx, n_centers)


def build_spatial_basis(surface_brain: TriSurface,
                        surface_scalp: TriSurface | None = None,
                        spacing_mm: float = 10.0,
                        sigma_mm: float = 10.0,
                        scalp_spacing_mm: float | None = None,
                        scalp_sigma_mm: float | None = None) -> SpatialBasis:
    """Place Gaussian kernels via farthest-point sampling on each surface.

    The stacked vertex dimension is [brain vertices; scalp vertices];
    kernels are restricted to their own surface.  The 'dense' preset uses
    10 mm spacing / 10 mm sigma on the brain and 20/20 on the scalp.
    """
    scalp_spacing_mm = 2 * spacing_mm if scalp_spacing_mm is None else scalp_spacing_mm
    scalp_sigma_mm = 2 * sigma_mm if scalp_sigma_mm is None else scalp_sigma_mm

    c_b, w_b = _surface_kernels(surface_brain, spacing_mm, sigma_mm)
    n_brain = surface_brain.n_vertices
    if surface_scalp is None:
        return SpatialBasis(w_b, c_b, np.full(len(c_b), float(sigma_mm)),
                            np.asarray(["brain"] * len(c_b)))

    c_s, w_s = _surface_kernels(surface_scalp, scalp_spacing_mm, scalp_sigma_mm)
    n_scalp = surface_scalp.n_vertices
    weights = np.zeros((n_brain + n_scalp, len(c_b) + len(c_s)))
    weights[:n_brain, : len(c_b)] = w_b
    weights[n_brain:, len(c_b):] = w_s
    centers = np.concatenate([c_b, c_s + n_brain])
    sigmas = np.concatenate([np.full(len(c_b), float(sigma_mm)),
                             np.full(len(c_s), float(scalp_sigma_mm))])
    surfs = np.asarray(["brain"] * len(c_b) + ["scalp"] * len(c_s))
    return SpatialBasis(weights, centers, sigmas, surfs)


def normalize_partition_of_unity(basis: SpatialBasis) -> SpatialBasis:
    """Rescale kernels per vertex so covered vertices sum to one."""
    sums = basis.weights.sum(axis=1, keepdims=True)
    weights = np.divide(basis.weights, sums, out=np.zeros_like(basis.weights),
                        where=sums > 0)
    return SpatialBasis(weights, basis.centers, basis.sigma_mm, basis.surface)


# --- inverse operator ------------------------------------------------------------


@dataclass(frozen=True)
class ImageReconConfig:
    recon_mode: str = "mua2conc"  # or "direct"
    brain_only: bool = False
    alpha_meas: float = 0.01
    alpha_spatial: float | None = None
    apply_c_meas: bool = False
    c_meas: np.ndarray | None = None  # per (channel, wavelength) variance
    spatial_basis: SpatialBasis | None = None

    def __post_init__(self):
        if self.recon_mode not in ("direct", "mua2conc"):
            raise SchemaError(f"unknown recon_mode '{self.recon_mode}'")
        if self.alpha_meas <= 0:
            raise SchemaError("alpha_meas must be > 0")
        if self.alpha_spatial is not None and self.alpha_spatial < 0:
            raise SchemaError("alpha_spatial must be >= 0 or None")


def _solve_spd(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve M x = rhs for SPD M; eigenvalue-floored fallback."""
    try:
        cho = sla.cho_factor(m, lower=True)
        return sla.cho_solve(cho, rhs)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(m)
    floor = 1e-12 * evals.max()
    if evals.max() <= 0:
        raise SingularSystem("regularized measurement matrix is not SPD")
    evals = np.maximum(evals, floor)
    return evecs @ ((evecs.T @ rhs) / evals[:, None])


def _tikhonov_inverse(a: np.ndarray, alpha_meas: float,
                      alpha_spatial: float | None,
                      c_meas: np.ndarray | None) -> np.ndarray:
    """W such that x = W y solves the regularized normal equations."""
    if alpha_spatial is not None:
        col_norm2 = (a**2).sum(axis=0)
        ell = np.sqrt(col_norm2 + alpha_spatial * col_norm2.max())
        ell[ell == 0] = np.sqrt(alpha_spatial * col_norm2.max()) or 1.0
        a_tilde = a / ell
    else:
        ell = np.ones(a.shape[1])
        a_tilde = a
    gram = a_tilde @ a_tilde.T
    reg = alpha_meas * gram.diagonal().max()
    if c_meas is not None:
        m = gram + reg * np.diag(c_meas)
    else:
        m = gram + reg * np.eye(a.shape[0])
    z = _solve_spd(m, a_tilde)  # (n_meas, n_cols) = M^-1 A~
    return z.T / ell[:, None]  # diag(1/ell) A~^T M^-1


@dataclass(frozen=True)
class InverseOperator:
    """Precomputed reconstruction operator mapping OD to images."""

    config: ImageReconConfig
    channels: tuple[str, ...]
    wavelengths: tuple[float, ...]
    n_vertices: int
    is_brain: np.ndarray
    parcel: np.ndarray | None
    eps: np.ndarray  # (n_wl, n_chromo) extinction matrix in 1/(M*mm)
    w_direct: np.ndarray | None = None  # (2*n_vertex, n_ch*n_wl)
    w_mua: tuple[np.ndarray, ...] | None = None  # per wavelength (n_vertex, n_ch)


def assemble_inverse_operator(sens: SensitivityMatrix,
                              config: ImageReconConfig,
                              spectrum="prahl") -> InverseOperator:
    """Build the Tikhonov inverse operator for a sensitivity matrix.

    direct mode stacks wavelength rows and chromophore columns with
    extinction weights; mua2conc mode inverts each wavelength block and
    defers the chromophore solve to reconstruction time.  Regularization
    strengths scale with the largest diagonal entries so the alpha values
    transfer between datasets.
    """
    t = sens.values
    a = t.data  # (n_ch, n_vtx, n_wl)
    n_ch, n_vtx, n_wl = a.shape
    ext = get_extinction(spectrum)
    eps = ext.eps_matrix(sens.wavelengths)  # (n_wl, 2)

    basis = config.spatial_basis
    if basis is not None and basis.weights.shape[0] != n_vtx:
        raise DimMismatch(
            f"spatial basis covers {basis.weights.shape[0]} vertices, "
            f"sensitivity has {n_vtx}"
        )

    parcel = None
    if "parcel" in t.coords:
        parcel = t.coord_values("parcel")

    common = dict(
        config=config,
        channels=tuple(str(c) for c in t.coord_values("channel")),
        wavelengths=tuple(float(w) for w in sens.wavelengths),
        n_vertices=n_vtx,
        is_brain=sens.is_brain,
        parcel=parcel,
        eps=eps,
    )

    if config.recon_mode == "direct":
        n_chromo = eps.shape[1]
        stacked = np.zeros((n_wl * n_ch, n_chromo * n_vtx))
        for i_wl in range(n_wl):
            for i_c in range(n_chromo):
                stacked[i_wl * n_ch:(i_wl + 1) * n_ch,
                        i_c * n_vtx:(i_c + 1) * n_vtx] = eps[i_wl, i_c] * a[:, :, i_wl]
        if basis is not None:
            bb = basis.weights
            stacked = np.hstack(
                [stacked[:, i_c * n_vtx:(i_c + 1) * n_vtx] @ bb
                 for i_c in range(n_chromo)]
            )
        c_meas = config.c_meas if config.apply_c_meas else None
        w = _tikhonov_inverse(stacked, config.alpha_meas, config.alpha_spatial,
                              c_meas)
        if basis is not None:
            bb = basis.weights
            n_k = bb.shape[1]
            w = np.vstack([bb @ w[i_c * n_k:(i_c + 1) * n_k]
                           for i_c in range(n_chromo)])
        return InverseOperator(**common, w_direct=w)

    # mua2conc: one operator per wavelength
    ws = []
    for i_wl in range(n_wl):
        block = a[:, :, i_wl]
        if basis is not None:
            block = block @ basis.weights
        if config.apply_c_meas and config.c_meas is not None:
            c_meas = np.asarray(config.c_meas).reshape(n_ch, n_wl)[:, i_wl]
        else:
            c_meas = None
        w = _tikhonov_inverse(block, config.alpha_meas, config.alpha_spatial,
                              c_meas)
        if basis is not None:
            w = basis.weights @ w
        ws.append(w)
    return InverseOperator(**common, w_mua=tuple(ws))


def reconstruct(inv_op: InverseOperator, y: LabeledTensor) -> LabeledTensor:
    """Apply the inverse operator to an OD series.

    ``y`` must have channel and wavelength dims matching the operator; all
    other dims (time, reltime, trial_type, ...) pass through untouched.
    The result has dims (chromo, vertex, *extras) in uM; ``brain_only``
    restricts the vertex dim to brain vertices.
    """
    if "channel" not in y.dims or "wavelength" not in y.dims:
        raise ChannelMismatch("input needs channel and wavelength dims")
    y_channels = tuple(str(c) for c in y.coord_values("channel"))
    if y_channels != inv_op.channels:
        raise ChannelMismatch(
            f"input channels ({len(y_channels)}) do not match the operator "
            f"({len(inv_op.channels)})"
        )
    y_wl = tuple(float(w) for w in y.coord_values("wavelength"))
    if y_wl != inv_op.wavelengths:
        raise ChannelMismatch("wavelengths do not match the operator")

    extra_dims = [d for d in y.dims if d not in ("channel", "wavelength")]
    ordered = y.transpose("wavelength", "channel", *extra_dims)
    n_wl = len(inv_op.wavelengths)
    n_ch = len(inv_op.channels)
    flat = ordered.data.reshape(n_wl, n_ch, -1)
    n_samples = flat.shape[-1]

    n_vtx = inv_op.n_vertices
    if inv_op.config.recon_mode == "direct":
        stacked = flat.reshape(n_wl * n_ch, n_samples)
        x = inv_op.w_direct @ stacked  # (2*n_vtx, n_samples), in M
        img = x.reshape(2, n_vtx, n_samples)
    else:
        mua = np.stack([inv_op.w_mua[i] @ flat[i] for i in range(n_wl)])
        pinv_eps = np.linalg.pinv(inv_op.eps)  # (2, n_wl)
        img = np.einsum("cw,wvs->cvs", pinv_eps, mua)

    img = img * 1e6  # M -> uM

    keep = np.flatnonzero(inv_op.is_brain) if inv_op.config.brain_only \
        else np.arange(n_vtx)
    img = img[:, keep, :]

    extra_shape = tuple(y.sizes[d] for d in extra_dims)
    img = img.reshape((2, len(keep)) + extra_shape)

    coords: dict = {"chromo": ("chromo", list(CHROMOPHORES)),
                    "is_brain": ("vertex", inv_op.is_brain[keep])}
    if inv_op.parcel is not None:
        coords["parcel"] = ("vertex", inv_op.parcel[keep])
    for name, (dim, values) in y.coords.items():
        if dim in extra_dims:
            coords[name] = (dim, values)
    return LabeledTensor(("chromo", "vertex") + tuple(extra_dims), img,
                         coords, "uM")


def forward_project(sens: SensitivityMatrix, image: LabeledTensor,
                    spectrum="prahl") -> LabeledTensor:
    """Project a chromophore image (M) to channel-space OD.

    y(ch, wl, .) = sum_v A[ch, v, wl] * sum_c eps_c(wl) * x(v, c, .)
    """
    if "vertex" not in image.dims or "chromo" not in image.dims:
        raise DimMismatch("image needs vertex and chromo dims")
    t = sens.values
    n_vtx = t.sizes["vertex"]
    if image.sizes["vertex"] != n_vtx:
        raise DimMismatch(
            f"image has {image.sizes['vertex']} vertices, sensitivity has "
            f"{n_vtx}"
        )
    eps = get_extinction(spectrum).eps_matrix(sens.wavelengths)  # (n_wl, 2)

    factor = parse_unit(image.unit).conversion_factor(parse_unit("M"))
    extra_dims = [d for d in image.dims if d not in ("vertex", "chromo")]
    ordered = image.transpose("vertex", "chromo", *extra_dims)
    flat = ordered.data.reshape(n_vtx, 2, -1) * factor

    mua = np.einsum("wc,vcs->wvs", eps, flat)  # (n_wl, n_vtx, samples), 1/mm
    od = np.einsum("cvw,wvs->wcs", t.data, mua)  # (n_wl, n_ch, samples)

    extra_shape = tuple(image.sizes[d] for d in extra_dims)
    od = od.reshape((len(sens.wavelengths), t.sizes["channel"]) + extra_shape)

    coords: dict = {"wavelength": ("wavelength", sens.wavelengths)}
    for name, values in t.coords_on("channel").items():
        coords[name] = ("channel", values)
    for name, (dim, values) in image.coords.items():
        if dim in extra_dims:
            coords[name] = (dim, values)
    return LabeledTensor(("wavelength", "channel") + tuple(extra_dims), od,
                         coords, "unitless")


def parcel_average(image: LabeledTensor) -> LabeledTensor:
    """Mean over vertices sharing a parcel label; parcels sorted
    lexicographically."""
    if "parcel" not in image.coords or image.coord_dim("parcel") != "vertex":
        raise NoParcelCoord("image lacks a parcel coord on its vertex dim")
    labels = np.asarray([str(p) for p in image.coord_values("parcel")])
    order = sorted(set(labels))
    ax = image.axis("vertex")
    groups = [
        np.compress(labels == p, image.data, axis=ax).mean(axis=ax)
        for p in order
    ]
    data = np.stack(groups, axis=ax)
    dims = tuple("parcel" if d == "vertex" else d for d in image.dims)
    coords = {n: c for n, c in image.coords.items() if c[0] != "vertex"}
    coords["parcel"] = ("parcel", order)
    return LabeledTensor(dims, data, coords, image.unit)
