"""General linear model for channel-space fNIRS series: Y = G beta + E.

Temporal basis functions, a design-matrix builder distinguishing common
and channel-wise regressors, OLS and AR-prewhitened GLS fits, prediction,
contrast t-tests with AUC contrasts, Benjamini-Hochberg FDR and HRF
extraction with uncertainty bands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import stats as sstats

from .errors import (
    BadParam,
    DimMismatch,
    EmptyStim,
    NonPSDCov,
    NoShortChannels,
    RankDeficient,
)
from .frequency import _as_seconds, sampling_rate
from .stim import StimTable
from .tensor import LabeledTensor


# --- temporal basis functions ---------------------------------------------------


@dataclass(frozen=True)
class GaussianKernels:
    """Equidistant Gaussian kernels spanning [-t_pre, t_post].

    Yields floor((t_pre + t_post) / t_delta) components with centers
    -t_pre + k * t_delta, each peak-normalized to 1.  These kernels are
    not convolved over the stimulus duration.
    """

    t_pre: float
    t_post: float
    t_delta: float
    t_std: float

    def __post_init__(self):
        for name in ("t_pre", "t_post", "t_delta", "t_std"):
            object.__setattr__(self, name, _as_seconds(getattr(self, name)))
        if self.t_delta <= 0 or self.t_std <= 0:
            raise BadParam("t_delta and t_std must be positive")

    @property
    def n_components(self) -> int:
        return int(np.floor((self.t_pre + self.t_post) / self.t_delta))

    @property
    def convolve_over_duration(self) -> bool:
        return False

    def extract_window(self) -> tuple[float, float]:
        return (-self.t_pre, self.t_post)

    def evaluate(self, reltime: np.ndarray) -> np.ndarray:
        """(n_reltime, n_components) kernel matrix."""
        reltime = np.asarray(reltime, dtype=float)
        centers = -self.t_pre + np.arange(self.n_components) * self.t_delta
        out = np.exp(-((reltime[:, None] - centers[None, :]) ** 2)
                     / (2.0 * self.t_std**2))
        peaks = out.max(axis=0)
        peaks[peaks == 0] = 1.0
        return out / peaks


@dataclass(frozen=True)
class Gamma:
    """Single gamma-shaped response h(u) = (u/sigma)^2 exp(-u/sigma), u>=0.

    The kernel is box-convolved over the stimulus duration (the T
    parameter, or the event duration when T is zero) and peak-normalized.
    """

    tau: float
    sigma: float
    T: float = 0.0

    def __post_init__(self):
        for name in ("tau", "sigma", "T"):
            object.__setattr__(self, name, _as_seconds(getattr(self, name)))
        if self.sigma <= 0:
            raise BadParam("sigma must be positive")

    @property
    def n_components(self) -> int:
        return 1

    @property
    def convolve_over_duration(self) -> bool:
        return True

    def extract_window(self) -> tuple[float, float]:
        return (0.0, self.tau + self.T + 8.0 * self.sigma)

    def evaluate(self, reltime: np.ndarray, duration: float = 0.0) -> np.ndarray:
        """(n_reltime, 1) kernel, convolved over the box and renormalized."""
        reltime = np.asarray(reltime, dtype=float)
        width = self.T if self.T > 0 else duration
        if len(reltime) > 1:
            dt = float(np.median(np.diff(reltime)))
        else:
            dt = 1.0

        def raw(u):
            u = u - self.tau
            h = np.where(u >= 0, (u / self.sigma) ** 2 * np.exp(-u / self.sigma),
                         0.0)
            return h

        if width > dt:
            n_box = max(int(round(width / dt)), 1)
            # evaluate on an extended grid, then box-average
            ext = reltime[:, None] - dt * np.arange(n_box)[None, :]
            h = raw(ext).mean(axis=1)
        else:
            h = raw(reltime)
        peak = h.max()
        if peak > 0:
            h = h / peak
        return h[:, None]


# --- design matrix ----------------------------------------------------------------


@dataclass(frozen=True)
class DesignMatrix:
    """Regressors for the GLM, split into common and channel-wise parts.

    ``common`` has dims (time, regressor, <plane>) where plane is chromo
    or wavelength; each entry of ``channel_wise`` adds a channel dim.
    Regressor labels follow 'HRF <trial_type> <NN>', 'Drift <type> <N>'
    and 'short'.
    """

    common: LabeledTensor | None = None
    channel_wise: tuple[LabeledTensor, ...] = ()

    @property
    def plane_dim(self) -> str:
        t = self.common if self.common is not None else self.channel_wise[0]
        return t.dims[2]

    @property
    def regressors(self) -> list[str]:
        labels: list[str] = []
        if self.common is not None:
            labels += [str(r) for r in self.common.coord_values("regressor")]
        for t in self.channel_wise:
            labels += [str(r) for r in t.coord_values("regressor")]
        return labels

    @property
    def n_regressors(self) -> int:
        return len(self.regressors)

    def time(self) -> np.ndarray:
        t = self.common if self.common is not None else self.channel_wise[0]
        return t.coord_values("time")

    def __and__(self, other: "DesignMatrix") -> "DesignMatrix":
        if other.common is None and not other.channel_wise:
            return self
        if self.common is None and not self.channel_wise:
            return other
        dup = set(self.regressors) & set(other.regressors)
        if dup:
            raise BadParam(f"duplicate regressor labels: {sorted(dup)}")
        if not np.array_equal(self.time(), other.time()):
            raise DimMismatch("combined design matrices must share a time grid")
        if self.common is None:
            common = other.common
        elif other.common is None:
            common = self.common
        else:
            from .tensor import concat_tensors

            common = concat_tensors([self.common, other.common], "regressor")
        return DesignMatrix(common, self.channel_wise + other.channel_wise)


def _plane_of(ts: LabeledTensor) -> str:
    for cand in ("chromo", "wavelength"):
        if cand in ts.dims:
            return cand
    raise DimMismatch("time series needs a chromo or wavelength dim")


def _common_matrix(ts: LabeledTensor, labels, values: np.ndarray) -> LabeledTensor:
    """Wrap an (n_time, n_reg) array as a common design-matrix tensor."""
    plane = _plane_of(ts)
    n_plane = ts.sizes[plane]
    data = np.repeat(values[:, :, None], n_plane, axis=2)
    coords = {
        "regressor": ("regressor", list(labels)),
        plane: (plane, ts.coord_values(plane)),
    }
    for name, vals in ts.coords_on("time").items():
        coords[name] = ("time", vals)
    return LabeledTensor(("time", "regressor", plane), data, coords, "unitless")


def hrf_regressors(ts: LabeledTensor, stim: StimTable, basis) -> DesignMatrix:
    """One regressor per trial type and basis component.

    r_j(t) = sum over events of value * b_j(t - onset); gamma kernels are
    additionally box-convolved over the stimulus duration and
    re-normalized, Gaussian kernels are placed as they are.
    """
    if len(stim) == 0:
        raise EmptyStim("stimulus table is empty")
    time = ts.coord_values("time")
    trial_types = sorted(set(e.trial_type for e in stim))
    columns = []
    labels = []
    for tt in trial_types:
        events = [e for e in stim if e.trial_type == tt]
        acc = np.zeros((len(time), basis.n_components))
        for e in events:
            if basis.convolve_over_duration:
                k = basis.evaluate(time - e.onset, duration=e.duration)
            else:
                k = basis.evaluate(time - e.onset)
            acc += e.value * k
        for j in range(basis.n_components):
            columns.append(acc[:, j])
            labels.append(f"HRF {tt} {j:02d}")
    return DesignMatrix(_common_matrix(ts, labels, np.column_stack(columns)))


def hrf_extract_regressors(ts: LabeledTensor, stim: StimTable,
                           basis) -> DesignMatrix:
    """Single-trial design matrix spanning one trial, without convolution."""
    if len(stim) == 0:
        raise EmptyStim("stimulus table is empty")
    fs = sampling_rate(ts)
    lo, hi = basis.extract_window()
    reltime = np.arange(round(lo * fs), round(hi * fs) + 1) / fs
    trial_types = sorted(set(e.trial_type for e in stim))
    if basis.convolve_over_duration:
        kernel = basis.evaluate(reltime, duration=0.0)
    else:
        kernel = basis.evaluate(reltime)
    columns = []
    labels = []
    for tt in trial_types:
        for j in range(basis.n_components):
            columns.append(kernel[:, j])
            labels.append(f"HRF {tt} {j:02d}")
    plane = _plane_of(ts)
    n_plane = ts.sizes[plane]
    values = np.column_stack(columns)
    data = np.repeat(values[:, :, None], n_plane, axis=2)
    coords = {
        "regressor": ("regressor", labels),
        "time": ("time", reltime),
        plane: (plane, ts.coord_values(plane)),
    }
    return DesignMatrix(LabeledTensor(("time", "regressor", plane), data,
                                      coords, "unitless"))


def drift_cosine_regressors(ts: LabeledTensor, fmax) -> DesignMatrix:
    """Cosine drift basis d_k(t) = cos(pi k t / T), k = 0 .. K-1.

    K = floor(2 * T * fmax), at least 1 (the constant term).
    """
    from .frequency import _as_hz

    fmax = _as_hz(fmax)
    if fmax < 0:
        raise BadParam("fmax must be >= 0")
    time = ts.coord_values("time")
    t_total = float(time[-1] - time[0])
    if t_total <= 0:
        raise BadParam("time grid must span a positive duration")
    k = max(1, int(np.floor(2.0 * t_total * fmax)))
    t_rel = time - time[0]
    values = np.column_stack(
        [np.cos(np.pi * i * t_rel / t_total) for i in range(k)]
    )
    labels = [f"Drift Cos {i}" for i in range(k)]
    return DesignMatrix(_common_matrix(ts, labels, values))


def drift_poly_regressors(ts: LabeledTensor, order: int) -> DesignMatrix:
    """Polynomial drift t^k, k = 0 .. order, scaled to max-abs 1."""
    if order < 0:
        raise BadParam("poly order must be >= 0")
    time = ts.coord_values("time")
    t_rel = time - time[0]
    cols = []
    for k in range(order + 1):
        col = t_rel**k
        maxabs = np.abs(col).max()
        cols.append(col / maxabs if maxabs > 0 else col)
    labels = [f"Drift {i}" for i in range(order + 1)]
    return DesignMatrix(_common_matrix(ts, labels, np.column_stack(cols)))


def short_channel_regressor(short_ts: LabeledTensor) -> DesignMatrix:
    """Average of the short channels, z-scored per chromo; label 'short'."""
    if "channel" not in short_ts.dims or short_ts.sizes["channel"] == 0:
        raise NoShortChannels("no short channels available")
    plane = _plane_of(short_ts)
    mean = short_ts.reduce("channel", "mean").transpose("time", plane)
    arr = mean.data
    mu = arr.mean(axis=0, keepdims=True)
    sd = arr.std(axis=0, keepdims=True)
    if np.any(sd == 0):
        raise BadParam("short-channel average has zero variance")
    z = (arr - mu) / sd
    coords = {
        "regressor": ("regressor", ["short"]),
        plane: (plane, short_ts.coord_values(plane)),
    }
    for name, vals in short_ts.coords_on("time").items():
        coords[name] = ("time", vals)
    return DesignMatrix(LabeledTensor(("time", "regressor", plane),
                                      z[:, None, :], coords, "unitless"))


# --- fitting ----------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    """Per (channel, chromo) coefficients with uncertainty information."""

    params: LabeledTensor  # (channel, chromo, regressor)
    cov: LabeledTensor  # (channel, chromo, regressor, regressor2)
    dof: LabeledTensor  # (channel, chromo)
    sigma2: LabeledTensor  # (channel, chromo)
    noise_model: str

    @property
    def regressors(self) -> list[str]:
        return [str(r) for r in self.params.coord_values("regressor")]


def _design_for_channel(dm: DesignMatrix, i_plane: int, channel: str):
    blocks = []
    labels = []
    if dm.common is not None:
        t = dm.common.transpose("time", "regressor", dm.plane_dim)
        blocks.append(t.data[:, :, i_plane])
        labels += [str(r) for r in dm.common.coord_values("regressor")]
    for cw in dm.channel_wise:
        chans = [str(c) for c in cw.coord_values("channel")]
        if channel not in chans:
            raise BadParam(
                f"channel-wise regressors lack an entry for channel "
                f"'{channel}'"
            )
        idx = chans.index(channel)
        t = cw.transpose("time", "regressor", dm.plane_dim, "channel")
        blocks.append(t.data[:, :, i_plane, idx])
        labels += [str(r) for r in cw.coord_values("regressor")]
    return np.hstack(blocks), labels


def _check_rank(g: np.ndarray, labels) -> int:
    _, r, piv = sla.qr(g, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(g.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < g.shape[1]:
        bad = [labels[i] for i in piv[rank:]]
        raise RankDeficient(
            f"design matrix is rank deficient; offending regressors: {bad}",
            labels=bad,
        )
    return rank


def _yule_walker(resid: np.ndarray, order: int) -> np.ndarray:
    n = len(resid)
    r = np.asarray([
        (resid[: n - k] * resid[k:]).sum() / n for k in range(order + 1)
    ])
    if r[0] == 0:
        return np.zeros(order)
    return sla.solve_toeplitz((r[:-1], r[:-1]), r[1:])


def _prewhiten(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Apply the AR filter [1, -phi_1 .. -phi_p] along axis 0 (valid part)."""
    p = len(phi)
    out = x[p:].copy()
    for i, c in enumerate(phi, start=1):
        out -= c * x[p - i: len(x) - i]
    return out


def fit(ts: LabeledTensor, dm: DesignMatrix, noise_model: str = "ols",
        ar_order: int = 2) -> FitResult:
    """Fit the GLM independently per channel and chromophore.

    ``ols`` solves the normal equations; ``ar_gls`` fits an AR(p) model to
    the OLS residuals by Yule-Walker, prewhitens Y and G with it and
    refits (degrees of freedom drop by p).
    """
    if noise_model not in ("ols", "ar_gls"):
        raise BadParam(f"unknown noise model '{noise_model}'")
    plane = _plane_of(ts)
    ordered = ts.transpose("channel", plane, "time")
    channels = [str(c) for c in ts.coord_values("channel")]
    planes = ts.coord_values(plane)
    n_ch, n_plane, n_time = ordered.shape

    labels0 = dm.regressors
    n_reg = len(labels0)
    params = np.zeros((n_ch, n_plane, n_reg))
    cov = np.zeros((n_ch, n_plane, n_reg, n_reg))
    dof = np.zeros((n_ch, n_plane))
    sigma2 = np.zeros((n_ch, n_plane))

    for i_ch, ch in enumerate(channels):
        for i_pl in range(n_plane):
            g, labels = _design_for_channel(dm, i_pl, ch)
            if labels != labels0:
                raise BadParam("regressor order differs across channels")
            y = ordered.data[i_ch, i_pl]
            rank = _check_rank(g, labels)

            beta, sse = _ols(g, y)
            if noise_model == "ar_gls":
                resid = y - g @ beta
                phi = _yule_walker(resid, ar_order)
                gw = _prewhiten(g, phi)
                yw = _prewhiten(y, phi)
                rank = _check_rank(gw, labels)
                beta, sse = _ols(gw, yw)
                n_eff = len(yw)
                gtg = gw.T @ gw
            else:
                n_eff = n_time
                gtg = g.T @ g
            d = n_eff - rank
            if d < 1:
                raise BadParam("not enough samples for the model size")
            s2 = sse / d
            params[i_ch, i_pl] = beta
            cov[i_ch, i_pl] = s2 * np.linalg.inv(gtg)
            dof[i_ch, i_pl] = d
            sigma2[i_ch, i_pl] = s2

    ch_coords = {n: ("channel", v) for n, v in ts.coords_on("channel").items()}
    base = {**ch_coords, plane: (plane, planes),
            "regressor": ("regressor", labels0)}
    return FitResult(
        params=LabeledTensor(("channel", plane, "regressor"), params, base,
                             ts.unit),
        cov=LabeledTensor(
            ("channel", plane, "regressor", "regressor2"), cov,
            {**base, "regressor2": ("regressor2", labels0)},
            f"({ts.unit})^2" if ts.unit != "unitless" else "unitless",
        ),
        dof=LabeledTensor(("channel", plane), dof, {**ch_coords,
                                                    plane: (plane, planes)}),
        sigma2=LabeledTensor(("channel", plane), sigma2,
                             {**ch_coords, plane: (plane, planes)}),
        noise_model=noise_model,
    )


def _ols(g: np.ndarray, y: np.ndarray):
    beta, *_ = np.linalg.lstsq(g, y, rcond=None)
    resid = y - g @ beta
    return beta, float(resid @ resid)


def predict(ts: LabeledTensor, params: LabeledTensor,
            dm: DesignMatrix) -> LabeledTensor:
    """Predict G_subset beta_subset; selecting all regressors reproduces
    the fitted values.

    ``params`` may carry any subset of the design matrix's regressors;
    an empty subset predicts zeros.
    """
    plane = _plane_of(ts)
    channels = [str(c) for c in ts.coord_values("channel")]
    time = dm.time()
    n_time = len(time)
    sel = [str(r) for r in params.coord_values("regressor")] \
        if "regressor" in params.coords else []
    p_ordered = params.transpose("channel", plane, "regressor") if sel else None

    out = np.zeros((len(channels), ts.sizes[plane], n_time))
    for i_ch, ch in enumerate(channels):
        for i_pl in range(ts.sizes[plane]):
            if not sel:
                continue
            g, labels = _design_for_channel(dm, i_pl, ch)
            idx = [labels.index(r) for r in sel]
            out[i_ch, i_pl] = g[:, idx] @ p_ordered.data[i_ch, i_pl]

    coords = {n: ("channel", v) for n, v in ts.coords_on("channel").items()}
    coords[plane] = (plane, ts.coord_values(plane))
    coords["time"] = ("time", time)
    result = LabeledTensor(("channel", plane, "time"), out, coords, ts.unit)
    return result.transpose(*[d for d in ts.dims if d in result.dims]) \
        if set(ts.dims) == set(result.dims) else result


# --- hypotheses --------------------------------------------------------------------


def auc_contrast(dm: DesignMatrix, stim: StimTable, cond1: str, cond2: str,
                 tmin: float, tmax: float) -> np.ndarray:
    """Contrast vector from time-windowed regressor areas.

    HRF regressors of ``cond1`` get +trapezoid(regressor * window mask),
    those of ``cond2`` the negative; all other entries are zero.  The
    windows are [onset+tmin, onset+tmax] of the matching events.
    """
    common = dm.common.transpose("time", "regressor", dm.plane_dim)
    time = common.coord_values("time")
    mask1 = np.zeros(len(time))
    mask2 = np.zeros(len(time))
    for e in stim:
        t1, t2 = e.onset + tmin, e.onset + tmax
        if e.trial_type.startswith(cond1):
            mask1[(t1 <= time) & (time <= t2)] = 1.0
        if e.trial_type.startswith(cond2):
            mask2[(t1 <= time) & (time <= t2)] = 1.0

    labels = dm.regressors
    contrast = np.zeros(len(labels))
    reg_labels = [str(r) for r in common.coord_values("regressor")]
    for i, lbl in enumerate(labels):
        if lbl not in reg_labels:
            continue
        col = common.data[:, reg_labels.index(lbl), 0]
        if lbl.startswith(f"HRF {cond1}"):
            contrast[i] = np.trapezoid(col * mask1, time)
        elif lbl.startswith(f"HRF {cond2}"):
            contrast[i] = -np.trapezoid(col * mask2, time)
    return contrast


@dataclass(frozen=True)
class ContrastResult:
    """t-test results per channel, chromophore and hypothesis."""

    estimate: LabeledTensor
    stderr: LabeledTensor
    statistic: LabeledTensor
    p_value: LabeledTensor


def t_test(fit_result: FitResult, contrasts) -> ContrastResult:
    """Two-sided t-tests of c^T beta = 0 for each contrast vector."""
    contrasts = np.atleast_2d(np.asarray(contrasts, dtype=float))
    n_hypo = contrasts.shape[0]
    params = fit_result.params
    n_ch, n_pl, n_reg = params.shape
    if contrasts.shape[1] != n_reg:
        raise DimMismatch(
            f"contrast length {contrasts.shape[1]} != {n_reg} regressors"
        )
    est = np.einsum("hr,cpr->cph", contrasts, params.data)
    var = np.einsum("hr,cprs,hs->cph", contrasts, fit_result.cov.data,
                    contrasts)
    stderr = np.sqrt(np.maximum(var, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(stderr > 0, est / stderr, np.inf * np.sign(est))
    dof = fit_result.dof.data[:, :, None]
    p = 2.0 * sstats.t.sf(np.abs(stat), dof)

    plane = params.dims[1]
    coords = {n: ("channel", v)
              for n, v in params.coords_on("channel").items()}
    coords[plane] = (plane, params.coord_values(plane))
    coords["hypothesis"] = ("hypothesis", np.arange(n_hypo))
    dims = ("channel", plane, "hypothesis")
    return ContrastResult(
        estimate=LabeledTensor(dims, est, coords, params.unit),
        stderr=LabeledTensor(dims, stderr, coords, params.unit),
        statistic=LabeledTensor(dims, stat, coords, "unitless"),
        p_value=LabeledTensor(dims, p, coords, "unitless"),
    )


def fdr_bh(p_values, alpha: float = 0.05):
    """Benjamini-Hochberg step-up FDR control.

    Returns (reject flags, q-values) with q_i = min over j >= i of
    p_(j) * m / j, clipped to 1.
    """
    p = np.asarray(p_values, dtype=float).ravel()
    m = len(p)
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    q_sorted = np.minimum(q_sorted, 1.0)
    q = np.empty(m)
    q[order] = q_sorted
    return q <= alpha, q


def r_squared(ts: LabeledTensor, predicted: LabeledTensor) -> LabeledTensor:
    """Coefficient of determination per channel/chromo: 1 - SSres/SStot."""
    resid = ts.data - predicted.transpose(*ts.dims).data
    ax = ts.axis("time")
    ss_res = (resid**2).sum(axis=ax)
    centered = ts.data - ts.data.mean(axis=ax, keepdims=True)
    ss_tot = (centered**2).sum(axis=ax)
    dims = tuple(d for d in ts.dims if d != "time")
    coords = {n: c for n, c in ts.coords.items() if c[0] != "time"}
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 - ss_res / ss_tot
    return LabeledTensor(dims, r2, coords, "unitless")


def median_abs_residuals(ts: LabeledTensor,
                         predicted: LabeledTensor) -> LabeledTensor:
    """MAR = median over time of |predicted - measured|."""
    resid = np.abs(ts.data - predicted.transpose(*ts.dims).data)
    ax = ts.axis("time")
    dims = tuple(d for d in ts.dims if d != "time")
    coords = {n: c for n, c in ts.coords.items() if c[0] != "time"}
    return LabeledTensor(dims, np.median(resid, axis=ax), coords, ts.unit)


def predict_with_uncertainty(ts: LabeledTensor, fit_result: FitResult,
                             dm_extract: DesignMatrix, regressor_selector,
                             n_samples: int = 100, seed: int = 0):
    """Sample parameters from N(beta, cov), zero the unselected entries and
    predict each draw on the extraction design matrix.

    ``regressor_selector`` is a boolean mask aligned with the fit's
    regressors or a predicate on labels.  Returns (mean, std) tensors over
    the extraction time grid.
    """
    labels = fit_result.regressors
    if callable(regressor_selector):
        selected = np.asarray([bool(regressor_selector(l)) for l in labels])
    else:
        selected = np.asarray(regressor_selector, dtype=bool)
        if selected.shape != (len(labels),):
            raise DimMismatch("selector must align with the fit's regressors")
    if not selected.any():
        pass  # all-zero curves are a valid degenerate case

    extract_labels = dm_extract.regressors
    use = [l for l in extract_labels if l in labels]
    col_of = {l: i for i, l in enumerate(labels)}

    params = fit_result.params
    plane = params.dims[1]
    n_ch, n_pl, n_reg = params.shape
    time = dm_extract.time()
    rng = np.random.default_rng(seed)

    mean_out = np.zeros((n_ch, n_pl, len(time)))
    std_out = np.zeros((n_ch, n_pl, len(time)))
    channels = [str(c) for c in params.coord_values("channel")]
    for i_ch, ch in enumerate(channels):
        for i_pl in range(n_pl):
            cov = fit_result.cov.data[i_ch, i_pl]
            beta = params.data[i_ch, i_pl]
            draws = _mvn_draws(beta, cov, n_samples, rng)
            draws[:, ~selected] = 0.0
            g, glabels = _design_for_channel(dm_extract, i_pl, ch)
            idx = [glabels.index(l) for l in use]
            cols = [col_of[l] for l in use]
            curves = draws[:, cols] @ g[:, idx].T
            mean_out[i_ch, i_pl] = curves.mean(axis=0)
            std_out[i_ch, i_pl] = curves.std(axis=0)

    coords = {n: ("channel", v) for n, v in params.coords_on("channel").items()}
    coords[plane] = (plane, params.coord_values(plane))
    coords["time"] = ("time", time)
    dims = ("channel", plane, "time")
    return (LabeledTensor(dims, mean_out, coords, ts.unit),
            LabeledTensor(dims, std_out, coords, ts.unit))


def write_fit_csv(fit_result: FitResult, path) -> None:
    """Fit table as CSV: channel,chromo,regressor,beta,stderr."""
    import csv

    params = fit_result.params
    plane = params.dims[1]
    channels = params.coord_values("channel")
    planes = params.coord_values(plane)
    labels = fit_result.regressors
    stderr = np.sqrt(np.einsum("...ii->...i", fit_result.cov.data))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["channel", "chromo", "regressor", "beta", "stderr"])
        for i_ch, ch in enumerate(channels):
            for i_pl, pl in enumerate(planes):
                for i_r, reg in enumerate(labels):
                    writer.writerow([
                        str(ch), str(pl), reg,
                        repr(float(params.data[i_ch, i_pl, i_r])),
                        repr(float(stderr[i_ch, i_pl, i_r])),
                    ])


def write_contrast_csv(result: ContrastResult, path,
                       alpha: float = 0.05) -> None:
    """Contrast table as CSV: channel,chromo,hypothesis,estimate,stat,p,q.

    q-values apply Benjamini-Hochberg over channels, separately per
    chromophore and hypothesis.
    """
    import csv

    est = result.estimate
    plane = est.dims[1]
    channels = est.coord_values("channel")
    planes = est.coord_values(plane)
    n_hypo = est.sizes["hypothesis"]
    q = np.empty_like(result.p_value.data)
    for i_pl in range(len(planes)):
        for i_h in range(n_hypo):
            _, q[:, i_pl, i_h] = fdr_bh(result.p_value.data[:, i_pl, i_h],
                                        alpha)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["channel", "chromo", "hypothesis", "estimate",
                         "stat", "p", "q"])
        for i_ch, ch in enumerate(channels):
            for i_pl, pl in enumerate(planes):
                for i_h in range(n_hypo):
                    writer.writerow([
                        str(ch), str(pl), i_h,
                        repr(float(est.data[i_ch, i_pl, i_h])),
                        repr(float(result.statistic.data[i_ch, i_pl, i_h])),
                        repr(float(result.p_value.data[i_ch, i_pl, i_h])),
                        repr(float(q[i_ch, i_pl, i_h])),
                    ])


def _mvn_draws(mean: np.ndarray, cov: np.ndarray, n: int, rng) -> np.ndarray:
    if np.allclose(cov, 0.0):
        return np.tile(mean, (n, 1))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(cov) / cov.shape[0]
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NonPSDCov("covariance matrix is not PSD") from exc
    z = rng.standard_normal((n, cov.shape[0]))
    return mean[None, :] + z @ chol.T
