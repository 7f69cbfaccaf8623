import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from dotkit import cli
from dotkit.errors import ConfigError, StepError
from dotkit.io import read_container, write_container, write_sensitivity, \
    write_surface
from dotkit.pipeline import PipelineConfig, run_pipeline
from dotkit.recording import LabeledPoints, PointType, Recording
from dotkit.stim import StimEvent, StimTable
from dotkit.tensor import LabeledTensor

from test_io import sample_recording


def fixture_recording(n_ch=4, n_t=900, fs=5.0, seed=0):
    """Positive amplitudes with an injected response and probe geometry."""
    rng = np.random.default_rng(seed)
    time = np.arange(n_t) / fs
    channels = [f"S{i}D{i}" for i in range(1, n_ch + 1)]
    data = 1.0 + 0.005 * rng.normal(size=(n_ch, 2, n_t))
    data += 0.01 * np.sin(2 * np.pi * 0.08 * time)
    positions = {}
    for i in range(1, n_ch + 1):
        positions[f"S{i}"] = [10.0 * i, 0.0, 0.0]
        positions[f"D{i}"] = [10.0 * i + (30.0 if i % 2 else 15.0), 0.0, 0.0]
    labels = list(positions)
    geo = LabeledPoints(
        tuple(labels),
        tuple(PointType.SOURCE if l.startswith("S") else PointType.DETECTOR
              for l in labels),
        "digitized",
        np.asarray([positions[l] for l in labels]),
        "mm",
    )
    amp = LabeledTensor(
        ("channel", "wavelength", "time"), data,
        {"time": ("time", time),
         "channel": ("channel", channels),
         "source": ("channel", [f"S{i}" for i in range(1, n_ch + 1)]),
         "detector": ("channel", [f"D{i}" for i in range(1, n_ch + 1)]),
         "wavelength": ("wavelength", [760.0, 850.0])},
        "V",
    )
    stim = StimTable([StimEvent(o, 5.0, 1.0, "A")
                      for o in (30.0, 80.0, 130.0)])
    return Recording(timeseries={"amp": amp}, geo3d=geo, stim=stim)


RECIPE = {
    "seed": 7,
    "steps": [
        {"op": "int2od", "in": "amp", "out": "od"},
        {"op": "tddr", "in": "od", "out": "od_tddr"},
        {"op": "od2conc", "in": ["od_tddr", "geo3d"],
         "params": {"dpf": 6.0}, "out": "conc"},
        {"op": "fit_glm", "in": ["conc", "stim"],
         "params": {"basis": {"kind": "gamma", "tau": 0.0, "sigma": 3.0,
                              "T": 5.0},
                    "drift": {"kind": "poly", "order": 1}},
         "out": ["beta", "beta_stderr"]},
    ],
}


def dir_hashes(path: Path) -> dict:
    out = {}
    for p in sorted(Path(path).iterdir()):
        if p.name == "run_report.json":
            continue  # wall times differ between runs
        out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestConfigValidation:
    def test_unknown_op(self):
        with pytest.raises(ConfigError):
            PipelineConfig({"steps": [{"op": "frobnicate", "in": "amp",
                                       "out": "x"}]})

    def test_undefined_input(self):
        with pytest.raises(ConfigError):
            PipelineConfig({"steps": [{"op": "tddr", "in": "nope",
                                       "out": "x"}]})

    def test_duplicate_output(self):
        with pytest.raises(ConfigError):
            PipelineConfig({"steps": [
                {"op": "int2od", "in": "amp", "out": "od"},
                {"op": "tddr", "in": "od", "out": "od"},
            ]})

    def test_quantity_params_parsed(self):
        cfg = PipelineConfig({"steps": [
            {"op": "split_long_short", "in": ["amp", "geo3d"],
             "params": {"distance_threshold": "22.5 mm"},
             "out": ["long", "short"]},
        ]})
        from dotkit.units import Quantity

        thresh = cfg.steps[0]["params"]["distance_threshold"]
        assert isinstance(thresh, Quantity)
        assert thresh.magnitude == 22.5 and thresh.unit == "mm"


class TestRunPipeline:
    def test_empty_steps(self, tmp_path):
        write_container(fixture_recording(), tmp_path / "in")
        cfg = PipelineConfig({"steps": []})
        report = run_pipeline(cfg, tmp_path / "in", tmp_path / "out")
        assert report["steps"] == []
        assert (tmp_path / "out" / "run_report.json").exists()

    def test_standard_recipe(self, tmp_path):
        write_container(fixture_recording(), tmp_path / "in")
        cfg = PipelineConfig(RECIPE)
        report = run_pipeline(cfg, tmp_path / "in", tmp_path / "out")
        assert [s["op"] for s in report["steps"]] == \
            ["int2od", "tddr", "od2conc", "fit_glm"]
        out = read_container(tmp_path / "out")
        assert "conc" in out.timeseries
        assert "beta" in out.derived
        beta = out.derived["beta"]
        assert beta.dims == ("channel", "chromo", "regressor")
        labels = [str(r) for r in beta.coord_values("regressor")]
        assert "HRF A 00" in labels and "Drift 0" in labels
        # the recipe also emits a beta CSV report
        csv_lines = (tmp_path / "out" / "beta.csv").read_text() \
            .strip().splitlines()
        assert csv_lines[0] == "channel,chromo,regressor,beta,stderr"
        assert len(csv_lines) == 1 + 4 * 2 * len(labels)

    def test_deterministic_reruns(self, tmp_path):
        write_container(fixture_recording(), tmp_path / "in")
        cfg = PipelineConfig(RECIPE)
        run_pipeline(cfg, tmp_path / "in", tmp_path / "out1")
        run_pipeline(cfg, tmp_path / "in", tmp_path / "out2")
        assert dir_hashes(tmp_path / "out1") == dir_hashes(tmp_path / "out2")

    def test_dry_run_touches_nothing(self, tmp_path):
        write_container(fixture_recording(), tmp_path / "in")
        cfg = PipelineConfig(RECIPE)
        report = run_pipeline(cfg, tmp_path / "in", tmp_path / "out",
                              dry_run=True)
        assert report["dry_run"] is True
        assert not (tmp_path / "out").exists()

    def test_step_error_names_step(self, tmp_path):
        rec = fixture_recording()
        data = rec["amp"].data.copy()
        data[0, 0, 5] = -1.0  # break int2od
        rec["amp"] = rec["amp"].with_data(data)
        write_container(rec, tmp_path / "in")
        cfg = PipelineConfig(RECIPE)
        with pytest.raises(StepError) as err:
            run_pipeline(cfg, tmp_path / "in", tmp_path / "out")
        assert err.value.step == "int2od"


class TestCli:
    def test_run_exit_codes(self, tmp_path):
        write_container(fixture_recording(), tmp_path / "in")
        config_path = tmp_path / "cfg.yaml"
        config_path.write_text(yaml.safe_dump(RECIPE))
        rc = cli.main(["run", str(config_path),
                       "--input", str(tmp_path / "in"),
                       "--output", str(tmp_path / "out")])
        assert rc == 0
        bad = dict(RECIPE, steps=[{"op": "nope", "in": "amp", "out": "x"}])
        bad_path = tmp_path / "bad.yaml"
        bad_path.write_text(yaml.safe_dump(bad))
        rc = cli.main(["run", str(bad_path),
                       "--input", str(tmp_path / "in"),
                       "--output", str(tmp_path / "out2")])
        assert rc == 2

    def test_json_config_accepted(self, tmp_path):
        write_container(fixture_recording(), tmp_path / "in")
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(RECIPE))
        rc = cli.main(["run", str(config_path),
                       "--input", str(tmp_path / "in"),
                       "--output", str(tmp_path / "out")])
        assert rc == 0

    def test_quality_report(self, tmp_path):
        rec = fixture_recording(n_t=1200)
        write_container(rec, tmp_path / "in")
        out_csv = tmp_path / "quality.csv"
        rc = cli.main(["quality", "report", "--input", str(tmp_path / "in"),
                       "--out", str(out_csv)])
        assert rc == 0
        lines = out_csv.read_text().strip().splitlines()
        assert lines[0] == "channel,metric,clean_fraction"
        assert len(lines) == 1 + 3 * 4  # three metrics x four channels

    def test_simulate_toy(self, tmp_path, capsys):
        rc = cli.main(["simulate", "toy", "--out", str(tmp_path / "toy"),
                       "--seed", "137"])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "SNR: -4.44" in printed
        back = read_container(tmp_path / "toy")
        assert "y" in back.timeseries and "sy" in back.derived

    def test_simulate_inject_round_trip(self, tmp_path):
        from dotkit.imgrecon import SensitivityMatrix, icosphere
        from dotkit.io import write_sensitivity, write_surface

        brain = icosphere(2, 60.0)
        n_vtx = brain.n_vertices
        rng = np.random.default_rng(3)
        n_ch = 48
        centers = brain.vertices[rng.choice(n_vtx, n_ch, replace=False)]
        prof = np.empty((n_ch, n_vtx, 2))
        for i in range(n_ch):
            d = np.linalg.norm(brain.vertices - centers[i], axis=1)
            prof[i, :, 0] = prof[i, :, 1] = np.exp(-(d**2) / (2 * 25.0**2))
        sens = SensitivityMatrix(LabeledTensor(
            ("channel", "vertex", "wavelength"), prof,
            {"channel": ("channel", [f"S{i}D{i}" for i in range(1, n_ch + 1)]),
             "source": ("channel", [f"S{i}" for i in range(1, n_ch + 1)]),
             "detector": ("channel", [f"D{i}" for i in range(1, n_ch + 1)]),
             "wavelength": ("wavelength", [760.0, 850.0]),
             "is_brain": ("vertex", [True] * n_vtx)},
            "mm",
        ))
        write_sensitivity(sens, tmp_path / "A")
        write_surface(brain, tmp_path / "brain")

        # resting recording matching those channels
        time = np.arange(3000) / 5.0
        amp = LabeledTensor(
            ("channel", "wavelength", "time"),
            1.0 + 0.0003 * rng.normal(size=(n_ch, 2, len(time))),
            {"time": ("time", time),
             "channel": ("channel", [f"S{i}D{i}" for i in range(1, n_ch + 1)]),
             "source": ("channel", [f"S{i}" for i in range(1, n_ch + 1)]),
             "detector": ("channel", [f"D{i}" for i in range(1, n_ch + 1)]),
             "wavelength": ("wavelength", [760.0, 850.0])},
            "V",
        )
        write_container(Recording(timeseries={"amp": amp}), tmp_path / "rest")

        metrics = tmp_path / "metrics.csv"
        rc = cli.main([
            "simulate", "inject",
            "--input", str(tmp_path / "rest"),
            "--sensitivity", str(tmp_path / "A"),
            "--surface", str(tmp_path / "brain"),
            "--output", str(tmp_path / "aug"),
            "--seed-vertex", "100",
            "--reconstruct",
            "--metrics", str(metrics),
        ])
        assert rc == 0
        aug = read_container(tmp_path / "aug")
        assert "od" in aug.timeseries and len(aug.stim) > 0
        rows = dict(
            line.split(",", 1)
            for line in metrics.read_text().strip().splitlines()[1:]
        )
        assert float(rows["geodesic_error_mm"]) < 30.0
