import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from dotkit import io as dio
from dotkit.errors import ChecksumError, ManifestError, ParseError, UnknownTrialType
from dotkit.imgrecon import SensitivityMatrix, TriSurface, icosphere
from dotkit.recording import LabeledPoints, PointType, Recording
from dotkit.stim import StimEvent, StimTable, read_stim_csv, rename_events, \
    write_stim_csv
from dotkit.tensor import LabeledTensor


def sample_recording():
    rng = np.random.default_rng(42)
    n_t = 16
    amp = LabeledTensor(
        ("channel", "wavelength", "time"),
        rng.uniform(0.5, 1.5, (2, 2, n_t)),
        {
            "time": ("time", np.arange(n_t) / 10.0),
            "samples": ("time", np.arange(n_t)),
            "channel": ("channel", ["S1D1", "S1D2"]),
            "source": ("channel", ["S1", "S1"]),
            "detector": ("channel", ["D1", "D2"]),
            "wavelength": ("wavelength", [760.0, 850.0]),
        },
        "V",
    )
    geo = LabeledPoints(
        ("S1", "D1", "D2", "Nz"),
        (PointType.SOURCE, PointType.DETECTOR, PointType.DETECTOR,
         PointType.LANDMARK),
        "digitized",
        rng.normal(size=(4, 3)),
        "mm",
    )
    stim = StimTable([
        StimEvent(1.0, 0.5, 1.0, "A"),
        StimEvent(2.5, 0.5, 2.0, "B", ("S1D1",)),
    ])
    mask = amp.with_data((amp.data > 1.0).astype(float), unit="unitless")
    aux = LabeledTensor(("time",), rng.normal(size=n_t),
                        {"time": ("time", np.arange(n_t) / 10.0)}, "V")
    return Recording(
        timeseries={"amp": amp},
        geo3d=geo,
        stim=stim,
        aux_ts={"accel": aux},
        masks={"snr": mask},
        meta={"subject": "S001", "device": "synthetic"},
    )


def dir_digest(path: Path) -> dict:
    out = {}
    for p in sorted(path.iterdir()):
        out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestContainer:
    def test_empty_recording(self, tmp_path):
        target = tmp_path / "empty"
        dio.write_container(Recording(), target)
        manifest = json.loads((target / "manifest.json").read_text())
        assert manifest["arrays"] == []
        assert (target / "stim.csv").read_bytes() == \
            b"onset,duration,value,trial_type\r\n"
        back = dio.read_container(target)
        assert len(back.timeseries) == 0 and len(back.stim) == 0

    def test_f64_file_size(self, tmp_path):
        rec = Recording(timeseries={"x": LabeledTensor(
            ("a", "time"), np.arange(6.0).reshape(2, 3),
            {"time": ("time", [0.0, 1.0, 2.0])})})
        dio.write_container(rec, tmp_path / "c")
        assert (tmp_path / "c" / "ts__x.f64").stat().st_size == 48

    def test_round_trip_bytes(self, tmp_path):
        rec = sample_recording()
        a = tmp_path / "a"
        b = tmp_path / "b"
        dio.write_container(rec, a)
        back = dio.read_container(a)
        dio.write_container(back, b)
        assert dir_digest(a) == dir_digest(b)

    def test_round_trip_values_and_coords(self, tmp_path):
        rec = sample_recording()
        dio.write_container(rec, tmp_path / "c")
        back = dio.read_container(tmp_path / "c")
        amp = back["amp"]
        assert np.array_equal(amp.data, rec["amp"].data)
        assert list(amp.coord_values("channel")) == ["S1D1", "S1D2"]
        assert list(amp.coord_values("source")) == ["S1", "S1"]
        assert amp.unit == "V"
        assert back.geo3d.crs == "digitized"
        assert back.geo3d.point_types[3] is PointType.LANDMARK
        assert np.array_equal(back.geo3d.positions, rec.geo3d.positions)
        assert back.meta == rec.meta
        assert back.stim[1].channels == ("S1D1",)
        assert np.array_equal(back.masks["snr"].data, rec.masks["snr"].data)

    def test_checksum_error(self, tmp_path):
        dio.write_container(sample_recording(), tmp_path / "c")
        victim = tmp_path / "c" / "ts__amp.f64"
        payload = bytearray(victim.read_bytes())
        payload[0] ^= 0xFF
        victim.write_bytes(bytes(payload))
        with pytest.raises(ChecksumError):
            dio.read_container(tmp_path / "c")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            dio.read_container(tmp_path / "nope")

    def test_overwrite_is_atomic_replace(self, tmp_path):
        rec = sample_recording()
        dio.write_container(rec, tmp_path / "c")
        rec2 = Recording(meta={"k": "v"})
        dio.write_container(rec2, tmp_path / "c")
        back = dio.read_container(tmp_path / "c")
        assert back.meta == {"k": "v"} and len(back.timeseries) == 0


class TestStimCsv:
    def test_round_trip(self, tmp_path):
        stim = StimTable([
            StimEvent(0.5, 1.0, 1.0, "FTapping/Left"),
            StimEvent(2.25, 0.5, 0.75, "Rest", ("S1D1", "S2D2")),
        ])
        write_stim_csv(stim, tmp_path / "stim.csv")
        back = read_stim_csv(tmp_path / "stim.csv")
        assert back.events == stim.events

    def test_rename_events(self):
        stim = StimTable([StimEvent(0.0, 1.0, 1.0, str(i % 5 + 1))
                          for i in range(20)])
        renamed = rename_events(stim, {"2": "FTapping/Left"})
        assert renamed[1].trial_type == "FTapping/Left"
        assert renamed[0].trial_type == "1"
        assert [e.onset for e in renamed] == [e.onset for e in stim]

    def test_rename_empty_mapping_identity(self):
        stim = StimTable([StimEvent(0.0, 1.0, 1.0, "x")])
        assert rename_events(stim, {}).events == stim.events

    def test_rename_strict_unknown(self):
        stim = StimTable([StimEvent(0.0, 1.0, 1.0, "x")])
        with pytest.raises(UnknownTrialType):
            rename_events(stim, {"y": "z"}, strict=True)

    def test_prefix_count_after_rename(self):
        # 65 rest-like, 16+16 tapping, 17+16 squeezing
        counts = {"1": 65, "2": 16, "3": 16, "4": 17, "5": 16}
        events = []
        t = 0.0
        for code, n in counts.items():
            for _ in range(n):
                events.append(StimEvent(t, 10.0, 1.0, code))
                t += 15.0
        stim = rename_events(StimTable(events), {
            "1": "Rest", "2": "FTapping/Left", "3": "FTapping/Right",
            "4": "BallSqueezing/Left", "5": "BallSqueezing/Right",
        })
        assert len(stim.select_prefix("BallSqueezing")) == 33

    def test_parse_error(self, tmp_path):
        (tmp_path / "bad.csv").write_text("onset,duration\n1,2\n")
        with pytest.raises(ParseError):
            read_stim_csv(tmp_path / "bad.csv")


class TestSensitivityIo:
    def make(self, n_ch=2, n_vtx=4, with_brain=True):
        coords = {
            "channel": ("channel", [f"S{i}D{i}" for i in range(1, n_ch + 1)]),
            "wavelength": ("wavelength", [760.0, 850.0]),
        }
        if with_brain:
            coords["is_brain"] = ("vertex", [True] * (n_vtx - 1) + [False])
            coords["parcel"] = ("vertex", [f"p{i}" for i in range(n_vtx)])
        t = LabeledTensor(("channel", "vertex", "wavelength"),
                          np.random.default_rng(0).random((n_ch, n_vtx, 2)),
                          coords, "mm")
        return SensitivityMatrix(t)

    def test_round_trip(self, tmp_path):
        sens = self.make()
        dio.write_sensitivity(sens, tmp_path / "A")
        back = dio.read_sensitivity(tmp_path / "A")
        assert np.array_equal(back.values.data, sens.values.data)
        assert list(back.values.coord_values("parcel")) == \
            [f"p{i}" for i in range(4)]
        assert back.is_brain.tolist() == [True, True, True, False]

    def test_missing_is_brain_warns(self, tmp_path):
        sens = self.make(with_brain=False)
        dio.write_sensitivity(sens, tmp_path / "A")
        back = dio.read_sensitivity(tmp_path / "A")
        assert back.is_brain.all()

    def test_peek_without_data(self, tmp_path):
        # an S1-shaped header parses without reading the (absent) data file
        entry = {
            "coords": [],
            "data_file": "sensitivity.f64",
            "dims": [{"name": "channel", "size": 100},
                     {"name": "vertex", "size": 25052},
                     {"name": "wavelength", "size": 2}],
            "name": "sensitivity",
            "sha256": "0" * 64,
            "unit": "mm",
        }
        (tmp_path / "A").mkdir()
        (tmp_path / "A" / "manifest.json").write_text(json.dumps(
            {"arrays": [entry], "meta": {}, "schema_version": "1"},
            sort_keys=True))
        shape = dio.peek_sensitivity(tmp_path / "A")
        assert shape == {"channel": 100, "vertex": 25052, "wavelength": 2}


class TestSurfaceIo:
    def test_round_trip(self, tmp_path):
        surf = icosphere(1, 30.0)
        parcels = np.asarray([f"region{i % 3}" for i in range(surf.n_vertices)],
                             dtype=object)
        surf = TriSurface(surf.vertices, surf.faces, crs="synthetic",
                          unit="mm", vertex_coords={"parcel": parcels})
        dio.write_surface(surf, tmp_path / "brain")
        back = dio.read_surface(tmp_path / "brain")
        assert np.array_equal(back.vertices, surf.vertices)
        assert np.array_equal(back.faces, surf.faces)
        assert back.crs == "synthetic"
        assert list(back.vertex_coords["parcel"]) == list(parcels)
