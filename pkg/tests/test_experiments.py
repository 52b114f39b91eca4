import math

import numpy as np
import pytest

from emusic import DomainPeaks, Estimate, PointEstimate
from experiments import (
    ExperimentSettings,
    RngStreams,
    Scenario,
    WaveformSettings,
    associate,
    beampattern,
    build_links,
    db_to_linear,
    dbm_to_watts,
    identity_report,
    jamming_power,
    optimize,
    run_experiment,
    simulate_echoes,
)
from geometry_channel import SystemConfig, sensing_channel
from numerics import ContractError
from optimizer import run_ao


def _estimate_at(points, theta_shift_deg=0.0):
    return Estimate(points=[PointEstimate(p.theta + math.radians(theta_shift_deg), p.phi, p.R, DomainPeaks())
                            for p in points])


def test_unit_conversions():
    assert db_to_linear(20.0) == pytest.approx(100.0)
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(-90.0) == pytest.approx(1e-12)


class TestScenario:
    def test_defaults(self):
        scn = Scenario()
        assert scn.K == 2
        assert scn.scene.G == 3
        config = scn.ao_config(max_iter=5)
        assert config.P_t == pytest.approx(1.0)
        assert config.gamma_s == pytest.approx(100.0)
        assert config.max_iter == 5

    def test_unknown_experiment(self):
        with pytest.raises(ContractError):
            Scenario(experiment="everything")

    def test_sizes_must_match_users(self):
        with pytest.raises(ContractError):
            Scenario(waveform=WaveformSettings(sizes=(8,)))


def test_rng_streams_are_labelled():
    streams = RngStreams(42)
    a = streams.get("echo/noise").standard_normal(4)
    np.testing.assert_array_equal(a, RngStreams(42).get("echo/noise").standard_normal(4))
    assert not np.allclose(a, streams.get("echo/data").standard_normal(4))


class TestAssociation:
    def test_exact_estimates_pair_up(self):
        scene = Scenario().scene
        rows, matched = associate(_estimate_at(reversed(scene.points)), scene, 2.0, 3.0)
        assert all(r["within_gates"] for r in rows)
        assert [r["jammer"] for r in rows] == [True, False, False]
        for g, point in enumerate(scene.points):
            assert matched[g].R == point.R

    def test_azimuth_compared_modulo_half_turn(self):
        scene = Scenario().scene
        rows, _ = associate(_estimate_at(scene.points, theta_shift_deg=180.0), scene, 2.0, 3.0)
        assert all(r["within_gates"] for r in rows)

    def test_out_of_gate_assignment_is_not_matched(self):
        scene = Scenario().scene
        estimates = _estimate_at(scene.points)
        far = estimates.points[0]
        estimates.points[0] = PointEstimate(far.theta + math.radians(10.0), far.phi, far.R, DomainPeaks())
        rows, matched = associate(estimates, scene, 2.0, 3.0)
        assert sorted(matched) == [1, 2]
        assert rows[0]["estimate"] is not None
        assert not rows[0]["within_gates"]
        assert rows[0]["errors"]["theta_deg"] == pytest.approx(10.0)

    def test_missing_detections(self):
        scene = Scenario().scene
        rows, matched = associate(Estimate(points=[]), scene, 2.0, 3.0)
        assert matched == {}
        assert not any(r["within_gates"] for r in rows)


def test_jamming_power_sets_jnr():
    scn = Scenario()
    rng = np.random.default_rng(3)
    H_J = rng.standard_normal((2, 4, 16, 1)) + 1j * rng.standard_normal((2, 4, 16, 1))
    P_J = jamming_power(H_J, scn.link)
    received = P_J * np.mean(np.sum(np.abs(H_J[0]) ** 2, axis=-1))
    assert received == pytest.approx(db_to_linear(scn.link.jnr_db) * scn.link.sigma2)


def test_high_ssnr_echoes_track_the_channel(small_cfg, geometry, single_point_scene):
    H, valid = simulate_echoes(small_cfg, geometry, single_point_scene, 60.0, 1e-18, RngStreams(0), frames=2)
    assert H.shape == (2, 4, 8)
    assert valid.all()
    truth = sensing_channel(small_cfg, geometry, single_point_scene, frame=1).H_s
    assert np.linalg.norm(H[1] - truth) / np.linalg.norm(truth) < 1e-2


class TestBeampattern:
    def test_miso_is_flat(self, small_cfg, geometry):
        thetas = np.radians(np.arange(0.0, 180.0, 5.0))
        np.testing.assert_allclose(beampattern("miso", small_cfg, geometry, 0.5, 0.3, thetas), 1.0)

    def test_oam_peaks_at_look_direction(self, small_cfg, geometry):
        thetas = np.radians(np.arange(0.0, 180.0, 1.0))
        pattern = beampattern("oam-mimo", small_cfg, geometry, math.radians(30.0), math.radians(40.0), thetas)
        assert int(np.argmax(pattern)) == 30
        assert pattern[30] == pytest.approx(1.0)


def test_small_link_optimization_beats_identity():
    scn = Scenario(system=SystemConfig(N_t=8, N_f=2, N_f_prime=2),
                   waveform=WaveformSettings(sizes=(3, 3)))
    design, truth = build_links(scn)
    alloc = scn.allocation()
    config = scn.ao_config(max_iter=5)
    result, evaluated = optimize(design, truth, alloc, config)
    assert evaluated.asr >= identity_report(truth, alloc, config).asr - 1e-9
    assert result.state.total_power() == pytest.approx(config.P_t, rel=1e-9)
    assert result.state.P_s.sum() > 0


def test_steering_comparison_bundle():
    scn = Scenario(experiment="steering-comparison", experiments=ExperimentSettings(steering_step_deg=1.0))
    bundle = run_experiment(scn)
    assert [a.name for a in bundle.artifacts] == ["beampatterns", "pseudospectra", "widths"]
    widths = bundle.artifacts[2].payload["kinds"]
    assert widths["miso"]["beampattern_ripple"] == pytest.approx(0.0, abs=1e-12)
    assert widths["oam-mimo"]["beampattern_half_height_width_deg"] < 90.0


def test_unknown_experiment_name():
    with pytest.raises(ContractError):
        run_experiment(Scenario(), "everything")


def _payload(bundle, name):
    return next(a.payload for a in bundle.artifacts if a.name == name)


def _assert_within_accuracy(rows):
    for row in rows:
        assert row["errors"] is not None, f"point {row['point']} not detected"
        assert row["errors"]["theta_deg"] <= 0.5
        assert row["errors"]["phi_deg"] <= 0.5
        assert row["errors"]["R_m"] <= 1.0


@pytest.mark.slow
class TestFullScaleScenarios:
    def test_sensing_accuracy_at_20_db(self):
        estimates = _payload(run_experiment(Scenario(experiment="sensing-accuracy")), "estimates")
        assert estimates["v_hat_mps"] == pytest.approx(3.0, abs=0.1)
        _assert_within_accuracy(estimates["points"])

    def test_enhanced_music_keeps_the_jammer(self):
        runs = _payload(run_experiment(Scenario(experiment="emusic-vs-music")), "comparison")["runs"]
        assert sorted(r["G_hat"] for r in runs) == [1, 1, 2, 2]
        for run in runs:
            if run["method"] == "emusic":
                assert run["missed"] == []
                _assert_within_accuracy(run["points"])
            else:
                assert not run["jammer_found"]

    def test_azimuth_resolution_grows_with_array(self):
        report = _payload(run_experiment(Scenario(experiment="resolution-vs-Nt")), "resolution")["N_t"]
        assert report["16"]["resolved"]
        assert not report["4"]["resolved"]

    def test_jamming_mitigation_ordering(self):
        scn = Scenario(experiment="jamming-mitigation", experiments=ExperimentSettings(power_sweep_dbm=(30.0,)))
        header, rows = _payload(run_experiment(scn), "asr_vs_power")
        asr = dict(zip(header, rows[0]))
        assert asr["proposed"] > asr["no_sensing"] > asr["identity"]

    def test_ao_settles_within_ten_iterations(self):
        scn = Scenario()
        assert (scn.system.N_t, scn.waveform.sizes) == (16, (8, 7))
        _, truth = build_links(scn)
        config = scn.ao_config()
        assert (config.tol, config.max_iter) == (1e-4, 100)
        result = run_ao(truth, scn.allocation(), config)
        assert result.converged
        assert result.iterations <= 10
        assert result.duality_gap <= 1e-6
