"""Regularized CCA family with temporal embedding, pattern recovery and
graph-Laplacian construction.

The solver is an alternating soft-thresholded power iteration on the
whitened cross-covariance (Parkhomenko-style).  ElasticNet regularization
contains plain, sparse and ridge CCA as special cases; a structure matrix
replaces the L2 identity penalty for structured sparsity, and PLS is the
identity-covariance limit.  Multiple components follow a rank-one
deflation of the whitened operator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadReg,
    DegenerateCs,
    FeatureMismatch,
    NonConvergence,
    ShapeMismatch,
    ShiftOutOfRange,
)
from .tensor import LabeledTensor


def _as_pair(value) -> tuple[float, float]:
    if np.isscalar(value):
        return (float(value), float(value))
    pair = tuple(float(v) for v in value)
    if len(pair) != 2:
        raise BadReg("regularization must be a scalar or a (x, y) pair")
    return pair


@dataclass(frozen=True)
class CCAParams:
    """Configuration of a CCA-family fit."""

    n_components: int | None = None
    l1_reg: tuple[float, float] | float = 0.0
    l2_reg: tuple[float, float] | float = 0.0
    pls: bool = False
    Lx: np.ndarray | None = None
    Ly: np.ndarray | None = None
    max_iter: int = 1000
    tol: float = 1e-6
    scale: bool = True
    model_name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "l1_reg", _as_pair(self.l1_reg))
        object.__setattr__(self, "l2_reg", _as_pair(self.l2_reg))
        if any(l < 0 or l >= 0.5 for l in self.l1_reg):
            raise BadReg("l1 penalties must lie in [0, 0.5)")
        if any(l < 0 for l in self.l2_reg):
            raise BadReg("l2 penalties must be >= 0")

    @property
    def name(self) -> str:
        if self.model_name:
            return self.model_name
        if self.pls:
            return "SparsePLS" if any(self.l1_reg) else "PLS"
        structured = self.Lx is not None or self.Ly is not None
        if structured:
            return "StructuredSparseCCA"
        has_l1 = any(self.l1_reg)
        has_l2 = any(self.l2_reg)
        if has_l1 and has_l2:
            return "ElasticNetCCA"
        if has_l1:
            return "SparseCCA"
        if has_l2:
            return "RidgeCCA"
        return "CCA"


@dataclass(frozen=True)
class CCAModel:
    """Fitted projections with the train normalization statistics."""

    params: CCAParams
    sample_dim: str
    featurex: tuple[str, ...]
    featurey: tuple[str, ...]
    wx: np.ndarray  # (n_featurex, n_components)
    wy: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    correlations: np.ndarray  # per component, on the training data
    warnings: tuple[str, ...] = ()

    @property
    def latent_x(self) -> str:
        return f"{self.params.name}_X"

    @property
    def latent_y(self) -> str:
        return f"{self.params.name}_Y"

    @property
    def n_components(self) -> int:
        return self.wx.shape[1]


def _soft_threshold(v: np.ndarray, lam: float) -> np.ndarray:
    if lam <= 0:
        return v
    cut = lam * np.abs(v).max()
    return np.sign(v) * np.maximum(np.abs(v) - cut, 0.0)


def _inv_sqrt(m: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(m)
    floor = max(evals.max(), 0.0) * 1e-10 + 1e-300
    evals = np.maximum(evals, floor)
    return (evecs / np.sqrt(evals)) @ evecs.T


def _feature_matrix(t: LabeledTensor, sample_dim: str):
    if len(t.dims) != 2 or sample_dim not in t.dims:
        raise ShapeMismatch(
            f"expected 2-d (sample x feature) input with dim '{sample_dim}'"
        )
    feature_dim = next(d for d in t.dims if d != sample_dim)
    ordered = t.transpose(sample_dim, feature_dim)
    if feature_dim in ordered.coords:
        names = tuple(str(v) for v in ordered.coord_values(feature_dim))
    else:
        names = tuple(str(i) for i in range(ordered.sizes[feature_dim]))
    return ordered.data, names, feature_dim


def _canonical_sign(w: np.ndarray) -> np.ndarray:
    out = w.copy()
    for k in range(out.shape[1]):
        i = np.argmax(np.abs(out[:, k]))
        if out[i, k] < 0:
            out[:, k] = -out[:, k]
    return out


def fit_cca(x: LabeledTensor, y: LabeledTensor, params: CCAParams,
            sample_dim: str = "time") -> CCAModel:
    """Fit the CCA family model on a pair of (sample x feature) tensors.

    Both inputs must share the sample dimension name and length.  Data are
    centered (and unit-scaled when ``params.scale``) with statistics that
    the model stores for later transforms.
    """
    xv, x_names, _ = _feature_matrix(x, sample_dim)
    yv, y_names, _ = _feature_matrix(y, sample_dim)
    if xv.shape[0] != yv.shape[0]:
        raise ShapeMismatch(
            f"sample counts differ: {xv.shape[0]} vs {yv.shape[0]}"
        )
    n = xv.shape[0]
    px, py = xv.shape[1], yv.shape[1]
    n_comp = params.n_components or min(px, py)
    if n_comp > min(px, py):
        raise ShapeMismatch(
            f"n_components={n_comp} exceeds min(featureX, featureY)="
            f"{min(px, py)}"
        )

    x_mean = xv.mean(axis=0)
    y_mean = yv.mean(axis=0)
    if params.scale:
        x_scale = xv.std(axis=0)
        y_scale = yv.std(axis=0)
        x_scale = np.where(x_scale == 0, 1.0, x_scale)
        y_scale = np.where(y_scale == 0, 1.0, y_scale)
    else:
        x_scale = np.ones(px)
        y_scale = np.ones(py)
    xs = (xv - x_mean) / x_scale
    ys = (yv - y_mean) / y_scale

    cxy = xs.T @ ys / (n - 1)
    if params.pls:
        mx = np.eye(px)
        my = np.eye(py)
    else:
        rx = params.Lx if params.Lx is not None else np.eye(px)
        ry = params.Ly if params.Ly is not None else np.eye(py)
        mx = xs.T @ xs / (n - 1) + params.l2_reg[0] * np.asarray(rx)
        my = ys.T @ ys / (n - 1) + params.l2_reg[1] * np.asarray(ry)

    mx_isqrt = _inv_sqrt(mx)
    my_isqrt = _inv_sqrt(my)
    k = mx_isqrt @ cxy @ my_isqrt

    wx = np.zeros((px, n_comp))
    wy = np.zeros((py, n_comp))
    corr = np.zeros(n_comp)
    warnings: list[str] = []
    found = 0
    for comp in range(n_comp):
        uu, ss, vv = np.linalg.svd(k, full_matrices=False)
        u = uu[:, 0]
        v = vv[0]
        converged = ss[0] == 0
        for _ in range(params.max_iter):
            u_new = _soft_threshold(k @ v, params.l1_reg[0])
            nu = np.linalg.norm(u_new)
            if nu == 0:
                u_new = None
                break
            u_new /= nu
            v_new = _soft_threshold(k.T @ u_new, params.l1_reg[1])
            nv = np.linalg.norm(v_new)
            if nv == 0:
                u_new = None
                break
            v_new /= nv
            delta = np.linalg.norm(u_new - u) + np.linalg.norm(v_new - v)
            u, v = u_new, v_new
            if delta < params.tol:
                converged = True
                break
        if u_new is None:
            warnings.append(
                f"component {comp} collapsed to zero under the l1 penalty"
            )
            break
        if not converged:
            raise NonConvergence(
                f"component {comp} did not converge within "
                f"{params.max_iter} iterations", component=comp,
            )
        wx_k = mx_isqrt @ u
        wy_k = my_isqrt @ v
        sx = xs @ wx_k
        sy = ys @ wy_k
        denom = sx.std() * sy.std()
        corr[comp] = float(np.corrcoef(sx, sy)[0, 1]) if denom > 0 else 0.0
        wx[:, comp] = wx_k
        wy[:, comp] = wy_k
        found = comp + 1
        k = k - (u @ k @ v) * np.outer(u, v)

    wx = _canonical_sign(wx[:, :found])
    wy = _canonical_sign(wy[:, :found])
    return CCAModel(
        params=params, sample_dim=sample_dim,
        featurex=x_names, featurey=y_names,
        wx=wx, wy=wy,
        x_mean=x_mean, x_scale=x_scale, y_mean=y_mean, y_scale=y_scale,
        correlations=np.abs(corr[:found]),
        warnings=tuple(warnings),
    )


def _project(model: CCAModel, t: LabeledTensor, which: str) -> LabeledTensor:
    names = model.featurex if which == "x" else model.featurey
    mean = model.x_mean if which == "x" else model.y_mean
    scale = model.x_scale if which == "x" else model.y_scale
    w = model.wx if which == "x" else model.wy
    latent = model.latent_x if which == "x" else model.latent_y

    data, got_names, _ = _feature_matrix(t, model.sample_dim)
    if got_names != names:
        raise FeatureMismatch(
            "transform input features do not match the training features"
        )
    scores = ((data - mean) / scale) @ w
    prefix = "Sx" if which == "x" else "Sy"
    coords = {latent: (latent,
                       [f"{prefix}{i + 1}" for i in range(w.shape[1])])}
    for cname, values in t.coords_on(model.sample_dim).items():
        coords[cname] = (model.sample_dim, values)
    return LabeledTensor((model.sample_dim, latent), scores, coords,
                         "unitless")


def transform_cca(model: CCAModel, x: LabeledTensor, y: LabeledTensor):
    """Project new data with the stored statistics and weights."""
    return _project(model, x, "x"), _project(model, y, "y")


# --- temporal embedding ------------------------------------------------------------


@dataclass(frozen=True)
class TCCAModel:
    """CCA on a time-embedded fast modality."""

    base: CCAModel
    time_shifts: tuple[float, ...]
    shift_samples: tuple[int, ...]
    optimal_shift: tuple[float, ...]  # per component, in seconds
    shift_source: bool
    fs: float

    @property
    def wx(self) -> np.ndarray:
        """(n_shifts, n_features, n_components) view of the x weights."""
        n_shift = len(self.time_shifts)
        n_feat = len(self.base.featurex) // n_shift
        return self.base.wx.reshape(n_shift, n_feat, self.base.n_components)

    @property
    def wy(self) -> np.ndarray:
        return self.base.wy


def _embed(data: np.ndarray, shift_samples) -> np.ndarray:
    """Concatenate advance-shifted, zero-padded copies along features."""
    n, p = data.shape
    blocks = []
    for s in shift_samples:
        block = np.zeros_like(data)
        if s < n:
            block[: n - s] = data[s:]
        blocks.append(block)
    return np.hstack(blocks)


def fit_tcca(x: LabeledTensor, y: LabeledTensor, params: CCAParams,
             time_shifts, shift_source: bool = True,
             sample_dim: str = "time") -> TCCAModel:
    """Fit CCA on x embedded with time-shifted copies along features.

    ``time_shifts`` are non-negative lags in seconds; a zero lag is added
    when missing and the list is sorted.  The optimal shift per component
    is the lag whose weight slab, applied to the correspondingly shifted
    training data, correlates best with the reconstructed y source.
    """
    xv, x_names, feature_dim = _feature_matrix(x, sample_dim)
    time = x.coord_values(sample_dim)
    if len(time) < 2:
        raise ShapeMismatch("need at least two samples")
    fs = 1.0 / float(np.median(np.diff(time)))

    shifts = sorted(set(float(s) for s in np.atleast_1d(time_shifts)))
    if any(s < 0 for s in shifts):
        raise ShiftOutOfRange("time shifts must be non-negative")
    if 0.0 not in shifts:
        shifts = [0.0] + shifts
    duration = float(time[-1] - time[0])
    if max(shifts) >= duration:
        raise ShiftOutOfRange(
            f"largest shift {max(shifts)} s exceeds the data span"
        )
    shift_samples = [int(round(s * fs)) for s in shifts]

    embedded = _embed(xv, shift_samples)
    emb_names = [f"{name}+{s:g}s" for s in shifts for name in x_names]
    coords = {feature_dim: (feature_dim, emb_names),
              "time_shift": (feature_dim,
                             np.repeat(shifts, len(x_names)))}
    for cname, values in x.coords_on(sample_dim).items():
        coords[cname] = (sample_dim, values)
    x_emb = LabeledTensor((sample_dim, feature_dim), embedded, coords)

    name = params.model_name or ("t" + replace(params, model_name=None).name)
    base = fit_cca(x_emb, y, replace(params, model_name=name), sample_dim)

    # per-component lag choice on the training data
    yv, _, _ = _feature_matrix(y, sample_dim)
    ys = (yv - base.y_mean) / base.y_scale
    xs = (embedded - base.x_mean) / base.x_scale
    n_feat = len(x_names)
    optimal = []
    for comp in range(base.n_components):
        sy = ys @ base.wy[:, comp]
        best, best_corr = shifts[0], -np.inf
        for i_s, s in enumerate(shifts):
            slab = xs[:, i_s * n_feat:(i_s + 1) * n_feat]
            sx = slab @ base.wx[i_s * n_feat:(i_s + 1) * n_feat, comp]
            if sx.std() == 0 or sy.std() == 0:
                continue
            c = abs(np.corrcoef(sx, sy)[0, 1])
            if c > best_corr:
                best, best_corr = s, c
        optimal.append(best)

    return TCCAModel(base=base, time_shifts=tuple(shifts),
                     shift_samples=tuple(shift_samples),
                     optimal_shift=tuple(optimal),
                     shift_source=shift_source, fs=fs)


def transform_tcca(model: TCCAModel, x: LabeledTensor, y: LabeledTensor):
    """Embed, project and (when shift_source) drop the zero-padded tail.

    The removed tail is round(max optimal_shift * fs) samples long, so the
    transformed sample count is N - round(optimal_shift * fs).
    """
    sample_dim = model.base.sample_dim
    xv, x_names, feature_dim = _feature_matrix(x, sample_dim)
    expected = tuple(n.split("+")[0] for n in
                     model.base.featurex[: len(model.base.featurex)
                                         // len(model.time_shifts)])
    if x_names != expected:
        raise FeatureMismatch(
            "transform input features do not match the training features"
        )
    embedded = _embed(xv, model.shift_samples)
    coords = {feature_dim: (feature_dim, list(model.base.featurex))}
    for cname, values in x.coords_on(sample_dim).items():
        coords[cname] = (sample_dim, values)
    x_emb = LabeledTensor((sample_dim, feature_dim), embedded, coords)
    sx, sy = transform_cca(model.base, x_emb, y)
    if model.shift_source and model.optimal_shift:
        drop = int(round(max(model.optimal_shift) * model.fs))
        if drop > 0:
            keep = np.arange(sx.sizes[sample_dim] - drop)
            sx = sx.take(sample_dim, keep)
            sy = sy.take(sample_dim, keep)
    return sx, sy


# --- pattern recovery and graph structure -------------------------------------------


def spatial_pattern_from_weights(x: LabeledTensor, w: np.ndarray,
                                 sample_dim: str = "time") -> np.ndarray:
    """Forward-model patterns from backward weights: A = C W pinv(W^T C W)."""
    data, _, _ = _feature_matrix(x, sample_dim)
    centered = data - data.mean(axis=0)
    n = data.shape[0]
    c = centered.T @ centered / (n - 1)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    cs = w.T @ c @ w
    if not np.any(np.abs(cs) > 0):
        raise DegenerateCs("latent source covariance is zero")
    return c @ w @ np.linalg.pinv(cs)


def build_graph_laplacian(positions, eps: float):
    """Binary nearest-neighbor graph Laplacian L = D - Adj.

    Nodes i, j connect with unit weight iff ||p_i - p_j|| < eps; the
    degree matrix holds the adjacency row sums, so eps = 0 yields L = 0.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    n = len(pos)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    adj = (dist < eps).astype(float)
    np.fill_diagonal(adj, 0.0)
    lap = np.diag(adj.sum(axis=1)) - adj
    return lap, adj
