import math

import numpy as np
import pytest

from geometry_channel import (
    ConfigurationError,
    Misalignment,
    ScatterPoint,
    ScatterScene,
    SystemConfig,
    UcaGeometry,
    approx_distance,
    build_channel_set,
    comm_channel,
    element_positions,
    element_sum_gain,
    exact_distance,
    fast_time_gains,
    jammer_elements,
    jamming_channel,
    sensing_channel,
    sensing_mode_gain,
)
from numerics import ContractError


class TestSystemConfig:
    def test_derived_timing(self):
        cfg = SystemConfig()
        assert cfg.T == pytest.approx(5e-6)
        assert cfg.T_0 == pytest.approx(6.25e-6)
        assert cfg.T_s == pytest.approx(1e-4)
        assert cfg.max_velocity == pytest.approx(cfg.c * 200e3 / (2 * 2.4e9))

    def test_odd_array_rejected(self):
        with pytest.raises(ConfigurationError):
            SystemConfig(N_t=7)

    def test_oversampling_below_subcarriers_rejected(self):
        with pytest.raises(ConfigurationError):
            SystemConfig(N_f=16, N_f_prime=8)


class TestGeometry:
    def test_element_positions_on_circle(self):
        pos = element_positions(0.5, 8)
        np.testing.assert_allclose(np.linalg.norm(pos, axis=1), 0.5)
        np.testing.assert_allclose(pos[0], [0.5, 0.0, 0.0], atol=1e-15)

    def test_misaligned_user_keeps_radius(self):
        geom = UcaGeometry(
            user_radii=(0.4,),
            user_centers=((0.0, 0.0, 30.0),),
            user_misalignment=(Misalignment(math.radians(10.0), math.radians(5.0), (0.1, 0.0, 0.0)),),
        )
        pos = geom.user_elements(0, 8)
        center = np.array([0.1, 0.0, 30.0])
        np.testing.assert_allclose(np.linalg.norm(pos - center, axis=1), 0.4)

    def test_mismatched_user_lists(self):
        with pytest.raises(ConfigurationError):
            UcaGeometry(user_radii=(0.5,))

    def test_approx_distance_close_to_exact(self):
        point = ScatterPoint(40.0, math.radians(20.0), math.radians(35.0))
        alpha = 2 * np.pi * np.arange(8) / 8
        exact = exact_distance(point, (0.5, alpha))
        amplitude, correction = approx_distance(point, (0.5, alpha))
        np.testing.assert_allclose(exact, amplitude - correction, atol=0.01)

    def test_jammer_ring(self):
        point = ScatterPoint(39.0, math.radians(10.0), math.radians(50.0))
        elements = jammer_elements(point, N_J=3, radius=0.5)
        assert elements.shape == (3, 3)
        np.testing.assert_allclose(np.linalg.norm(elements - point.position(), axis=1), 0.5)
        assert jammer_elements(point).shape == (1, 3)


class TestScene:
    def test_elevation_outside_range(self):
        with pytest.raises(ConfigurationError):
            ScatterScene(points=(ScatterPoint(30.0, 0.1, 0.0),))

    def test_far_field_violation(self, small_cfg, geometry):
        scene = ScatterScene(points=(ScatterPoint(4.0, 0.1, 0.5),))
        with pytest.raises(ConfigurationError, match="far-field"):
            scene.validate_for(small_cfg, geometry)

    def test_too_many_points(self, geometry):
        cfg = SystemConfig(N_t=2, N_f=1, N_f_prime=1)
        scene = ScatterScene(points=tuple(ScatterPoint(30.0 + g, 0.1 * g, 0.5) for g in range(3)))
        with pytest.raises(ConfigurationError):
            scene.validate_for(cfg, geometry)

    def test_short_cyclic_prefix(self, geometry):
        cfg = SystemConfig(T_cp=1e-7)
        scene = ScatterScene(points=(ScatterPoint(39.0, 0.1, 0.5),))
        with pytest.raises(ConfigurationError, match="Cyclic prefix"):
            scene.validate_for(cfg, geometry)

    def test_fast_target(self, small_cfg, geometry):
        # T_s = 50 µs at N_t=8: Doppler aliases from c/(4 f_0 T_s) ≈ 624.6 m/s
        assert small_cfg.velocity_limit() == pytest.approx(299_792_458.0 / (4 * 2.4e9 * 5e-5))
        ScatterScene(points=(ScatterPoint(30.0, 0.1, 0.5),), v=20.0).validate_for(small_cfg, geometry)
        scene = ScatterScene(points=(ScatterPoint(30.0, 0.1, 0.5),), v=-700.0)
        with pytest.raises(ConfigurationError, match="aliases"):
            scene.validate_for(small_cfg, geometry)

    def test_velocity_limit_needs_positive_period(self, small_cfg):
        with pytest.raises(ConfigurationError):
            small_cfg.velocity_limit(0.0)
        assert small_cfg.velocity_limit(1e-9) == pytest.approx(small_cfg.max_velocity)


class TestSensingChannel:
    def test_element_sum_matches_bessel_model(self, geometry):
        cfg = SystemConfig(N_t=32, N_f=4, N_f_prime=4)
        point = ScatterPoint(40.0, math.radians(25.0), math.radians(10.0))
        for l in (-2, 0, 1, 3):
            analytic = sensing_mode_gain(cfg, geometry, point, 0, l)
            brute = element_sum_gain(cfg, geometry, point, 0, l)
            expected = analytic * (1j ** l) * np.exp(-1j * l * point.theta)
            assert brute == pytest.approx(expected, rel=1e-9)

    def test_mode_beyond_array(self, small_cfg, geometry):
        with pytest.raises(ContractError):
            sensing_mode_gain(small_cfg, geometry, ScatterPoint(30.0, 0.1, 0.5), 0, 5)

    def test_frame_advance_is_doppler_rotation(self, small_cfg, geometry, single_point_scene):
        H0 = sensing_channel(small_cfg, geometry, single_point_scene, frame=0).H_s
        H1 = sensing_channel(small_cfg, geometry, single_point_scene, frame=1).H_s
        f_d = single_point_scene.doppler(small_cfg)
        np.testing.assert_allclose(H1, H0 * np.exp(2j * np.pi * f_d * small_cfg.T_s), rtol=1e-9)

    def test_cross_section_scales_linearly(self, small_cfg, geometry, single_point_scene):
        H = sensing_channel(small_cfg, geometry, single_point_scene).H_s
        H2 = sensing_channel(small_cfg, geometry, single_point_scene, chi=[2.0 - 1.0j]).H_s
        np.testing.assert_allclose(H2, (2.0 - 1.0j) * H, rtol=1e-12)

    def test_static_target_fast_time_is_flat_on_carrier(self, small_cfg, geometry):
        scene = ScatterScene(points=(ScatterPoint(30.0, 0.4, 0.6),), v=0.0)
        H = sensing_channel(small_cfg, geometry, scene).H_s
        gains = fast_time_gains(small_cfg, geometry, scene, 0, 3)
        np.testing.assert_allclose(gains, H[0, 2], rtol=1e-12)

    def test_wrong_cross_section_count(self, small_cfg, geometry, single_point_scene):
        with pytest.raises(ContractError):
            sensing_channel(small_cfg, geometry, single_point_scene, chi=[1.0, 1.0])


class TestLinks:
    def test_comm_channel_free_space_magnitude(self, small_cfg, geometry):
        H = comm_channel(small_cfg, geometry, 0, 0)
        assert H.shape == (8, 8)
        lam = float(small_cfg.wavelength(0))
        mags = np.abs(H)
        assert mags.max() < lam / (4 * np.pi * 1.0)
        assert mags.min() > lam / (4 * np.pi * 4.5)

    def test_channel_set_shapes(self, small_cfg, geometry):
        scene = ScatterScene(points=(ScatterPoint(39.0, 0.2, 0.8), ScatterPoint(25.0, 0.5, 0.6)))
        channels = build_channel_set(small_cfg, geometry, scene)
        assert channels.H_comm.shape == (2, 4, 8, 8)
        assert channels.H_jam.shape == (2, 4, 8, 1)
        assert channels.H_s.shape == (4, 8)

    def test_jamming_follows_given_position(self, small_cfg, geometry):
        scene = ScatterScene(points=(ScatterPoint(39.0, 0.2, 0.8),))
        moved = ScatterPoint(45.0, 0.3, 0.7)
        a = build_channel_set(small_cfg, geometry, scene).H_jam
        b = build_channel_set(small_cfg, geometry, scene, moved).H_jam
        assert not np.allclose(a, b)
        c = build_channel_set(small_cfg, geometry, ScatterScene(points=(moved,))).H_jam
        np.testing.assert_allclose(b, c)

    def test_jammer_ring_gives_one_column_per_element(self, small_cfg, geometry):
        scene = ScatterScene(points=(ScatterPoint(39.0, 0.2, 0.8),), N_J=3, jammer_radius=0.5)
        H_J = jamming_channel(small_cfg, geometry, scene, 1, 2)
        assert H_J.shape == (8, 3)
        np.testing.assert_allclose(H_J, build_channel_set(small_cfg, geometry, scene).H_jam[1, 2])
        assert not np.allclose(H_J[:, 0], H_J[:, 1])
