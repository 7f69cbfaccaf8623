"""Config-driven batch pipeline: load a recording, run registered steps in
order and persist declared outputs plus a run report.

Configs are YAML (a strict maps/lists/scalars subset, JSON works too):

    input: path/to/container
    output: path/to/results
    seed: 7
    steps:
      - {op: int2od, in: amp, out: od}
      - {op: tddr, in: od, out: od_tddr}
      - {op: od2conc, in: [od_tddr, geo3d], params: {dpf: 6}, out: conc}

Step inputs are either initial names (amp, stim, geo3d, A, or anything in
the input container) or outputs of earlier steps; validation happens
before any step runs.  Identical config + seed + inputs produce
byte-identical output containers.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time as _time
from pathlib import Path

import numpy as np
import yaml

from . import epochs as _epochs
from . import glm as _glm
from . import imgrecon as _ir
from . import motion as _motion
from . import preproc as _preproc
from . import quality as _quality
from .errors import ConfigError, DotkitError, StepError
from .frequency import freq_filter
from .io import (
    read_container,
    read_sensitivity,
    write_container,
    _tensor_payload,
)
from .recording import Recording
from .tensor import LabeledTensor
from .units import Quantity, parse_quantity


def _coerce_param(value):
    """Turn '22.5 mm'-style strings into quantities, recurse containers."""
    if isinstance(value, str):
        if re.match(r"^\s*[-+0-9.eE]+\s*[A-Za-zµ/*^()·]+\s*$", value):
            try:
                return parse_quantity(value)
            except DotkitError:
                return value
        return value
    if isinstance(value, dict):
        return {k: _coerce_param(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_coerce_param(v) for v in value]
    return value


# --- step registry ----------------------------------------------------------------
#
# Each op is a function (namespace_objects, params, seed) -> list of outputs.

def _op_int2od(ins, params, seed):
    return [_preproc.int2od(ins[0])]


def _op_od2int(ins, params, seed):
    return [_preproc.od2int(ins[0])]


def _op_tddr(ins, params, seed):
    return [_motion.tddr(ins[0])]


def _op_spline_correct(ins, params, seed):
    return [_motion.spline_correct(ins[0], ins[1])]


def _op_freq_filter(ins, params, seed):
    return [freq_filter(ins[0], params.get("fmin", 0.0),
                        params.get("fmax", 0.0),
                        int(params.get("butter_order", 4)))]


def _op_od2conc(ins, params, seed):
    return [_preproc.od2conc(ins[0], ins[1], params.get("dpf", 6.0),
                             params.get("spectrum", "prahl"))]


def _op_split_long_short(ins, params, seed):
    long_ts, short_ts = _preproc.split_long_short(
        ins[0], ins[1], params.get("distance_threshold", Quantity(22.5, "mm"))
    )
    return [long_ts, short_ts]


def _op_global_subtract(ins, params, seed):
    weights = ins[1] if len(ins) > 1 else None
    resid, g = _preproc.global_component_subtract(ins[0], weights,
                                                  int(params.get("k", 0)))
    return [resid, g]


def _op_snr(ins, params, seed):
    metric, mask = _quality.snr(ins[0], float(params.get("threshold", 2.0)))
    return [metric, mask]


def _op_sci(ins, params, seed):
    metric, mask = _quality.sci(ins[0], params.get("window_length", 10.0),
                                float(params.get("threshold", 0.75)))
    return [metric.values, mask]


def _op_psp(ins, params, seed):
    metric, mask = _quality.psp(ins[0], params.get("window_length", 10.0),
                                float(params.get("threshold", 0.03)))
    return [metric.values, mask]


def _op_gvtd(ins, params, seed):
    metric, mask = _quality.gvtd(ins[0], params.get("threshold"))
    return [metric, mask]


def _op_combine_masks(ins, params, seed):
    return [_quality.combine_masks(list(ins), params.get("op", "and"))]


def _op_prune_channels(ins, params, seed):
    pruned, dropped = _quality.prune_channels(
        ins[0], list(ins[1:]), params.get("flag", "all")
    )
    return [pruned]


def _op_to_epochs(ins, params, seed):
    return [_epochs.to_epochs(ins[0], ins[1], params["trial_types"],
                              params.get("before", 5.0),
                              params.get("after", 30.0))]


def _op_baseline_correct(ins, params, seed):
    return [_epochs.baseline_correct(ins[0])]


def _op_block_average(ins, params, seed):
    return [_epochs.block_average(ins[0])]


def _basis_from_params(params):
    spec = dict(params.get("basis", {"kind": "gamma"}))
    kind = spec.pop("kind", "gamma")
    spec = {k: (v.to("s").magnitude if isinstance(v, Quantity) else v)
            for k, v in spec.items()}
    if kind == "gamma":
        return _glm.Gamma(spec.get("tau", 0.0), spec.get("sigma", 3.0),
                          spec.get("T", 5.0))
    if kind == "gaussian_kernels":
        return _glm.GaussianKernels(spec.get("t_pre", 2.0),
                                    spec.get("t_post", 15.0),
                                    spec.get("t_delta", 1.5),
                                    spec.get("t_std", 2.0))
    raise ConfigError(f"unknown basis kind '{kind}'")


def _op_fit_glm(ins, params, seed):
    ts, stim = ins[0], ins[1]
    dm = _glm.hrf_regressors(ts, stim, _basis_from_params(params))
    drift = params.get("drift", {"kind": "poly", "order": 1})
    if drift.get("kind", "poly") == "poly":
        dm = dm & _glm.drift_poly_regressors(ts, int(drift.get("order", 1)))
    else:
        dm = dm & _glm.drift_cosine_regressors(ts, drift.get("fmax", 0.02))
    if len(ins) > 2:
        dm = dm & _glm.short_channel_regressor(ins[2])
    fit = _glm.fit(ts, dm, params.get("noise_model", "ols"),
                   int(params.get("ar_order", 2)))
    stderr = np.sqrt(np.einsum("...ii->...i", fit.cov.data))
    stderr_t = fit.params.with_data(stderr)
    return [fit.params, stderr_t]


def _op_reconstruct(ins, params, seed):
    od, sens = ins[0], ins[1]
    cfg = _ir.ImageReconConfig(
        recon_mode=params.get("recon_mode", "mua2conc"),
        brain_only=bool(params.get("brain_only", False)),
        alpha_meas=float(params.get("alpha_meas", 0.01)),
        alpha_spatial=params.get("alpha_spatial"),
    )
    # restrict the sensitivity to the channels present in the data
    sens = sens.select_channels([str(c) for c in od.coord_values("channel")])
    op = _ir.assemble_inverse_operator(sens, cfg,
                                       params.get("spectrum", "prahl"))
    return [_ir.reconstruct(op, od)]


def _op_parcel_average(ins, params, seed):
    return [_ir.parcel_average(ins[0])]


_REGISTRY = {
    "int2od": (_op_int2od, 1, 1),
    "od2int": (_op_od2int, 1, 1),
    "tddr": (_op_tddr, 1, 1),
    "spline_correct": (_op_spline_correct, 2, 1),
    "freq_filter": (_op_freq_filter, 1, 1),
    "od2conc": (_op_od2conc, 2, 1),
    "split_long_short": (_op_split_long_short, 2, 2),
    "global_component_subtract": (_op_global_subtract, (1, 2), 2),
    "snr": (_op_snr, 1, 2),
    "sci": (_op_sci, 1, 2),
    "psp": (_op_psp, 1, 2),
    "gvtd": (_op_gvtd, 1, 2),
    "combine_masks": (_op_combine_masks, (1, 99), 1),
    "prune_channels": (_op_prune_channels, (2, 99), 1),
    "to_epochs": (_op_to_epochs, 2, 1),
    "baseline_correct": (_op_baseline_correct, 1, 1),
    "block_average": (_op_block_average, 1, 1),
    "fit_glm": (_op_fit_glm, (2, 3), 2),
    "reconstruct": (_op_reconstruct, 2, 1),
    "parcel_average": (_op_parcel_average, 1, 1),
}


def registered_ops() -> list[str]:
    return sorted(_REGISTRY)


def _as_name_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    return [str(v) for v in value]


class PipelineConfig:
    """Validated pipeline configuration."""

    def __init__(self, raw: dict, config_dir: Path | None = None):
        if not isinstance(raw, dict):
            raise ConfigError("pipeline config must be a mapping")
        self.input = raw.get("input")
        self.output = raw.get("output")
        self.seed = int(raw.get("seed", 0))
        steps = raw.get("steps", [])
        if not isinstance(steps, list):
            raise ConfigError("'steps' must be a list")
        self.steps = []
        seen_outputs: set[str] = set()
        initial = {"amp", "stim", "geo3d", "A"}
        for i, step in enumerate(steps):
            if not isinstance(step, dict) or "op" not in step:
                raise ConfigError(f"step {i} must be a mapping with an 'op'")
            op = step["op"]
            if op not in _REGISTRY:
                raise ConfigError(f"step {i}: unknown op '{op}'")
            ins = _as_name_list(step.get("in"))
            outs = _as_name_list(step.get("out"))
            fn, n_in, n_out = _REGISTRY[op]
            lo, hi = (n_in, n_in) if isinstance(n_in, int) else n_in
            if not lo <= len(ins) <= hi:
                raise ConfigError(
                    f"step {i} ({op}): expected {n_in} inputs, got {len(ins)}"
                )
            if len(outs) > n_out or not outs:
                raise ConfigError(
                    f"step {i} ({op}): up to {n_out} outputs, got {len(outs)}"
                )
            for name in ins:
                if name not in initial and name not in seen_outputs:
                    raise ConfigError(
                        f"step {i} ({op}): input '{name}' is neither an "
                        "initial name nor a previous output"
                    )
            for name in outs:
                if name in seen_outputs or name in initial:
                    raise ConfigError(
                        f"step {i} ({op}): output '{name}' already defined"
                    )
            seen_outputs.update(outs)
            params = _coerce_param(step.get("params", {}) or {})
            self.steps.append({"op": op, "in": ins, "out": outs,
                               "params": params})

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls(raw, path.parent)


def _emit_csv_reports(rec: Recording, output_path: Path) -> None:
    """Write a beta CSV next to the container when a GLM step ran."""
    import csv

    for name, stderr_name in [("beta", "beta_stderr")]:
        if name not in rec.derived or stderr_name not in rec.derived:
            continue
        beta = rec.derived[name]
        stderr = rec.derived[stderr_name]
        plane = beta.dims[1]
        with open(output_path / f"{name}.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["channel", "chromo", "regressor", "beta",
                             "stderr"])
            for i_ch, ch in enumerate(beta.coord_values("channel")):
                for i_pl, pl in enumerate(beta.coord_values(plane)):
                    for i_r, reg in enumerate(
                            beta.coord_values("regressor")):
                        writer.writerow([
                            str(ch), str(pl), str(reg),
                            repr(float(beta.data[i_ch, i_pl, i_r])),
                            repr(float(stderr.data[i_ch, i_pl, i_r])),
                        ])


def _load_namespace(input_path) -> tuple[dict, Recording]:
    rec = read_container(input_path)
    namespace: dict = dict(rec.timeseries)
    namespace["stim"] = rec.stim
    if rec.geo3d is not None:
        namespace["geo3d"] = rec.geo3d
    sens_path = Path(input_path) / "sensitivity"
    if sens_path.exists():
        namespace["A"] = read_sensitivity(sens_path)
    return namespace, rec


def run_pipeline(config: PipelineConfig, input_path=None, output_path=None,
                 seed: int | None = None, dry_run: bool = False) -> dict:
    """Execute the pipeline; returns the run report as a dict.

    Raises ConfigError before any step runs and StepError (naming the
    step) when one fails.
    """
    input_path = input_path or config.input
    output_path = output_path or config.output
    seed = config.seed if seed is None else int(seed)
    if input_path is None or output_path is None:
        raise ConfigError("input and output paths are required")
    if dry_run:
        return {"steps": [{"op": s["op"], "out": s["out"]}
                          for s in config.steps],
                "dry_run": True, "seed": seed}

    namespace, _ = _load_namespace(input_path)
    report_steps = []
    out_rec = Recording(meta={"seed": str(seed)})
    for i, step in enumerate(config.steps):
        t0 = _time.perf_counter()
        try:
            ins = [namespace[name] for name in step["in"]]
            results = _REGISTRY[step["op"]][0](ins, step["params"], seed)
        except DotkitError as exc:
            raise StepError(f"step {i} ({step['op']}): {exc}",
                            step=step["op"]) from exc
        except KeyError as exc:
            raise StepError(f"step {i} ({step['op']}): missing input {exc}",
                            step=step["op"]) from exc
        wall = _time.perf_counter() - t0
        hashes = {}
        for name, value in zip(step["out"], results):
            namespace[name] = value
            if isinstance(value, LabeledTensor):
                if "time" in value.dims:
                    out_rec.timeseries[name] = value
                else:
                    out_rec.derived[name] = value
                hashes[name] = hashlib.sha256(
                    _tensor_payload(value)).hexdigest()
        report_steps.append({"op": step["op"], "out": step["out"],
                             "wall_time_s": wall, "sha256": hashes})

    write_container(out_rec, output_path)
    _emit_csv_reports(out_rec, Path(output_path))
    report = {
        "steps": report_steps,
        "seed": seed,
        "threads": int(os.environ.get("DOTKIT_THREADS", "1")),
    }
    report_path = Path(output_path) / "run_report.json"
    report_path.write_text(json.dumps(report, sort_keys=True, indent=1),
                           encoding="utf-8")
    return report
