"""Command line interface: pipeline runner plus simulation and quality
subcommands.

    dotkit run CONFIG --input DIR --output DIR [--seed N] [--dry-run]
    dotkit simulate toy --out DIR [--seed N] [--gamma G] [--dt S]
    dotkit simulate inject --input DIR --sensitivity DIR --surface DIR
           --output DIR [--seed-vertex K] [--reconstruct] [--metrics CSV]
    dotkit quality report --input DIR --out CSV

Exit codes: 0 success, 2 configuration error, 3 step failure.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import imgrecon as _ir
from . import quality as _quality
from . import sim as _sim
from .errors import ConfigError, DotkitError, StepError
from .glm import Gamma
from .io import (
    read_container,
    read_sensitivity,
    read_surface,
    write_container,
)
from .pipeline import PipelineConfig, run_pipeline
from .recording import Recording
from .tensor import LabeledTensor
from .toy import ToyConfig, simulate_bimodal_toy, snr_db
from .units import Quantity


def _cmd_run(args) -> int:
    config = PipelineConfig.from_file(args.config)
    report = run_pipeline(config, input_path=args.input,
                          output_path=args.output, seed=args.seed,
                          dry_run=args.dry_run)
    for step in report["steps"]:
        label = "validated" if report.get("dry_run") else "ran"
        print(f"{label} {step['op']} -> {', '.join(step['out'])}")
    return 0


def _cmd_quality_report(args) -> int:
    rec = read_container(args.input)
    if "amp" not in rec.timeseries:
        raise ConfigError("input container holds no 'amp' series")
    amp = rec["amp"]
    sci_metric, sci_mask = _quality.sci(amp, args.window_length,
                                        args.sci_threshold)
    psp_metric, psp_mask = _quality.psp(amp, args.window_length,
                                        args.psp_threshold)
    combined = _quality.combine_masks([sci_mask, psp_mask], "and")
    rows = []
    for metric_name, mask in [("sci", sci_mask), ("psp", psp_mask),
                              ("combined", combined)]:
        frac = _quality.clean_fraction(mask)
        for ch, value in zip(frac.coord_values("channel"), frac.data):
            rows.append([str(ch), metric_name, repr(float(value))])
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["channel", "metric", "clean_fraction"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_simulate_toy(args) -> int:
    cfg = ToyConfig(gamma=args.gamma, dT=args.dt)
    ds = simulate_bimodal_toy(cfg, seed=args.seed)
    print(f"SNR: {snr_db(cfg.gamma):.2f}")
    rec = Recording(
        timeseries={"x": ds.x, "x_power": ds.x_power, "y": ds.y},
        meta={"seed": str(args.seed), "gamma": repr(cfg.gamma),
              "dT": repr(cfg.dT)},
    )
    rec.derived["sy"] = LabeledTensor(
        ("source", "time"), ds.sy,
        {"time": ("time", ds.y.coord_values("time"))},
    )
    rec.derived["mixing_y"] = LabeledTensor(("channel", "source"), ds.ay)
    write_container(rec, args.out)
    print(f"wrote toy dataset to {args.out}")
    return 0


def _cmd_simulate_inject(args) -> int:
    rec = read_container(args.input)
    if "amp" not in rec.timeseries:
        raise ConfigError("input container holds no 'amp' series")
    sens = read_sensitivity(args.sensitivity)
    brain = read_surface(args.surface)

    from .preproc import int2od

    od = int2od(rec["amp"])
    sens = sens.select_channels([str(c) for c in od.coord_values("channel")])
    sens_brain = sens.select_brain()

    seed_vertex = args.seed_vertex
    image = _sim.build_spatial_activation(
        brain, seed_vertex, Quantity(args.spatial_scale_cm, "cm"),
        Quantity(args.intensity_um, "uM"), args.hbr_scale,
    )
    spatial_img = LabeledTensor(
        ("trial_type", "vertex", "chromo"), image.data[None, :, :],
        {"trial_type": ("trial_type", ["Stim"]),
         "chromo": ("chromo", ["HbO", "HbR"])},
        "M",
    )
    spatial_chan = _ir.forward_project(sens_brain, spatial_img)
    spatial_chan = spatial_chan.transpose("trial_type", "wavelength",
                                          "channel")

    stim = _sim.build_stim_df(
        float(od.coord_values("time")[-1]), ["Stim"],
        10.0, 20.0, 10.0, 10.0, seed=args.seed,
    )
    syn = _sim.build_synthetic_hrf_timeseries(
        od, stim, Gamma(0.0, 3.0, 3.0), spatial_chan
    )
    injectable = syn.reduce("trial_type", "sum").transpose(*od.dims)
    augmented = od.with_data(od.data + injectable.data)

    out = Recording(timeseries={"od": augmented}, geo3d=rec.geo3d, stim=stim,
                    meta={"seed": str(args.seed),
                          "seed_vertex": str(seed_vertex)})
    write_container(out, args.output)
    print(f"wrote augmented container to {args.output}")

    if args.reconstruct:
        from .epochs import baseline_correct, block_average, to_epochs

        epochs = to_epochs(augmented, stim, ["Stim"], before=5.0, after=15.0)
        avg = block_average(baseline_correct(epochs))
        cfg = _ir.ImageReconConfig(recon_mode="mua2conc", brain_only=True,
                                   alpha_meas=0.01)
        op = _ir.assemble_inverse_operator(sens, cfg)
        img = _ir.reconstruct(op, avg)
        # peak HbO response over the post-stimulus window
        rel = img.coord_values("reltime")
        post = img.take("reltime", np.flatnonzero(rel > 0))
        response = post.data[0].mean(axis=-1)  # HbO, averaged over reltime
        hbo_peak = int(np.argmax(np.abs(response[:, 0])))
        dist = _ir.geodesic_distance(brain, seed_vertex)[hbo_peak]
        with open(args.metrics, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["metric", "value"])
            writer.writerow(["seed_vertex", seed_vertex])
            writer.writerow(["recovered_vertex", hbo_peak])
            writer.writerow(["geodesic_error_mm", repr(float(dist))])
        print(f"wrote metrics to {args.metrics} "
              f"(geodesic error {dist:.1f} mm)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dotkit",
        description="fNIRS/DOT batch analysis toolbox",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a pipeline config")
    p_run.add_argument("config")
    p_run.add_argument("--input", default=None)
    p_run.add_argument("--output", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--dry-run", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_sim = sub.add_parser("simulate", help="simulation subcommands")
    sim_sub = p_sim.add_subparsers(dest="sim_command", required=True)

    p_toy = sim_sub.add_parser("toy", help="generate a bimodal toy dataset")
    p_toy.add_argument("--out", required=True)
    p_toy.add_argument("--seed", type=int, default=137)
    p_toy.add_argument("--gamma", type=float, default=0.6)
    p_toy.add_argument("--dt", type=float, default=0.0)
    p_toy.set_defaults(func=_cmd_simulate_toy)

    p_inj = sim_sub.add_parser("inject",
                               help="inject a synthetic activation")
    p_inj.add_argument("--input", required=True)
    p_inj.add_argument("--sensitivity", required=True)
    p_inj.add_argument("--surface", required=True)
    p_inj.add_argument("--output", required=True)
    p_inj.add_argument("--seed", type=int, default=0)
    p_inj.add_argument("--seed-vertex", type=int, default=0)
    p_inj.add_argument("--spatial-scale-cm", type=float, default=2.0)
    p_inj.add_argument("--intensity-um", type=float, default=1.0)
    p_inj.add_argument("--hbr-scale", type=float, default=-0.4)
    p_inj.add_argument("--reconstruct", action="store_true")
    p_inj.add_argument("--metrics", default="inject_metrics.csv")
    p_inj.set_defaults(func=_cmd_simulate_inject)

    p_q = sub.add_parser("quality", help="quality subcommands")
    q_sub = p_q.add_subparsers(dest="quality_command", required=True)
    p_qr = q_sub.add_parser("report", help="channel quality CSV report")
    p_qr.add_argument("--input", required=True)
    p_qr.add_argument("--out", required=True)
    p_qr.add_argument("--window-length", type=float, default=10.0)
    p_qr.add_argument("--sci-threshold", type=float, default=0.75)
    p_qr.add_argument("--psp-threshold", type=float, default=0.03)
    p_qr.set_defaults(func=_cmd_quality_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StepError as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        return 3
    except DotkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
