import json
import logging
from pathlib import Path

import numpy as np
import pytest

from experiments import Artifact, ResultBundle, document, grid_table, table
from geometry_channel import SystemConfig
from harness import ScenarioError, emit, load_scenario, main, parse_scenario
from numerics import Axis, ContractError, Grid2D

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _write(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data), encoding="utf-8")
    return path


class TestParseScenario:
    def test_empty_object_gives_defaults(self):
        scn = parse_scenario({})
        assert scn.system == SystemConfig()
        assert scn.sensing.gamma_s_db == 20.0
        assert scn.waveform.sizes == (8, 7)
        assert scn.experiment == "full-pipeline"

    def test_degrees_become_radians(self):
        scn = parse_scenario({"scene": {"points": [{"R": 30.0, "theta_deg": 90.0, "phi_deg": 45.0}]}})
        assert scn.scene.points[0].theta == pytest.approx(1.5707963267948966)
        assert scn.scene.G == 1

    def test_odd_array_size(self):
        with pytest.raises(ScenarioError) as excinfo:
            parse_scenario({"system": {"N_t": 15}})
        assert excinfo.value.path == "system"
        assert "N_t" in str(excinfo.value)

    def test_wrong_type_reports_field_path(self):
        with pytest.raises(ScenarioError) as excinfo:
            parse_scenario({"sensing": {"frames": "many"}})
        assert excinfo.value.path == "sensing.frames"

    def test_missing_point_coordinate(self):
        with pytest.raises(ScenarioError) as excinfo:
            parse_scenario({"scene": {"points": [{"theta_deg": 10.0, "phi_deg": 20.0}]}})
        assert excinfo.value.path == "scene.points[0].R"

    @pytest.mark.parametrize("raw,path", [
        ({"sensing": {"G_hat": 16}}, "sensing.G_hat"),
        ({"sensing": {"R_max": 400.0}}, "sensing.R_max"),
        ({"sensing": {"rho": 0.0}}, "sensing.rho"),
        ({"seed": -1}, "seed"),
        ({"experiment": "everything"}, "experiment"),
        ({"waveform": {"sizes": [8]}}, "waveform.sizes"),
        ({"waveform": {"sizes": [9, 7]}}, "waveform"),
        ({"experiments": {"N_t_values": [4, 5]}}, "experiments.N_t_values"),
        ({"sensing": {"v_max": 400.0}}, "sensing.v_max"),
        ({"sensing": {"n_points": 16}}, "sensing.n_points"),
        ({"sensing": {"n_points": "two"}}, "sensing.n_points"),
        ({"experiments": {"resolution_frames": 0}}, "experiments.resolution_frames"),
    ])
    def test_validation_paths(self, raw, path):
        with pytest.raises(ScenarioError) as excinfo:
            parse_scenario(raw)
        assert excinfo.value.path == path

    def test_optional_fields_accept_null(self):
        scn = parse_scenario({"sensing": {"v_min": None, "v_max": 100.0, "n_points": 2}})
        assert scn.sensing.v_min is None
        assert scn.sensing.v_max == 100.0
        assert scn.sensing.n_points == 2
        axis = scn.sensing.velocity_axis(scn.system)
        assert axis.stop == 100.0
        assert -scn.system.velocity_limit() < axis.start < 0.0

    def test_unknown_field_warns(self, caplog):
        caplog.set_level(logging.WARNING, logger="harness")
        scn = parse_scenario({"sensing": {"frames": 8, "colour": "blue"}})
        assert scn.sensing.frames == 8
        assert "sensing.colour" in caplog.text


class TestLoadScenario:
    def test_shipped_scenarios_are_valid(self):
        files = sorted(SCENARIOS.glob("*.json"))
        assert len(files) == 7
        experiments = {load_scenario(f).experiment for f in files}
        assert len(experiments) == 7

    def test_syntax_error_names_line(self, tmp_path):
        path = _write(tmp_path, '{\n  "seed": ,\n}')
        with pytest.raises(ScenarioError, match="line 2"):
            load_scenario(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(tmp_path / "absent.json")


class TestEmit:
    def _bundle(self):
        bundle = ResultBundle("demo", metadata={"seed": 1})
        bundle.add(table("curve", ["x", "y"], [(0, 0.5), (1, float("nan"))]))
        grid = Grid2D(Axis("theta_deg", 0.0, 1.0, 1.0), Axis("phi_deg", 10.0, 12.0, 1.0),
                      np.arange(6.0).reshape(2, 3))
        bundle.add(grid_table("spectrum", grid))
        bundle.add(document("summary", {"asr": 1.25, "converged": True}))
        return bundle

    def test_empty_bundle(self, tmp_path):
        manifest = emit(ResultBundle("empty"), tmp_path)
        assert [f["path"] for f in manifest["files"]] == ["empty/metadata.json"]
        assert (tmp_path / "empty" / "manifest.json").exists()

    def test_deterministic(self, tmp_path):
        first = emit(self._bundle(), tmp_path / "a")
        second = emit(self._bundle(), tmp_path / "b")
        assert first == second

    def test_grid_csv_layout(self, tmp_path):
        emit(self._bundle(), tmp_path)
        lines = (tmp_path / "demo" / "spectrum.csv").read_text().splitlines()
        assert lines[0] == "theta_deg\\phi_deg,10,11,12"
        assert lines[1] == "0,0,1,2"
        assert (tmp_path / "demo" / "curve.csv").read_text().splitlines()[2] == "1,nan"

    def test_duplicate_artifact(self):
        bundle = self._bundle()
        with pytest.raises(ContractError):
            bundle.add(Artifact("curve", "csv", (["x"], [])))


class TestCli:
    def test_validate(self, tmp_path):
        assert main(["validate", "--scenario", str(SCENARIOS / "full_pipeline.json")]) == 0
        bad = _write(tmp_path, {"system": {"N_t": 15}})
        assert main(["validate", "--scenario", str(bad)]) == 2

    def test_run_is_reproducible(self, tmp_path):
        scenario = _write(tmp_path, {"experiment": "steering-comparison",
                                     "experiments": {"steering_step_deg": 2.0}})
        hashes = []
        for out in ("one", "two"):
            assert main(["-q", "run", "--scenario", str(scenario), "--out", str(tmp_path / out)]) == 0
            manifest = json.loads((tmp_path / out / "steering-comparison" / "manifest.json").read_text())
            hashes.append({f["path"]: f["sha256"] for f in manifest["files"] if f["numeric"]})
        assert hashes[0] == hashes[1]
        assert "steering-comparison/beampatterns.csv" in hashes[0]

    def test_seed_override_out_of_range(self, tmp_path):
        scenario = _write(tmp_path, {"experiment": "steering-comparison"})
        assert main(["run", "--scenario", str(scenario), "--out", str(tmp_path), "--seed", "-5"]) == 2
