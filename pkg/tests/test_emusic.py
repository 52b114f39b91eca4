import math

import numpy as np
import pytest

from emusic import (
    DomainPeaks,
    EmusicSettings,
    SnapshotSet,
    ValidityError,
    build_subspace,
    default_velocity_axis,
    estimate_scene,
    estimate_velocity,
    fuse_estimates,
    half_height_width,
    mdl_order,
    projector_ratio,
    pseudospectrum_oam,
    pseudospectrum_vectors,
    reweight_noise_subspace,
    sample_covariance,
    select_points,
    steering_freq,
    steering_oam,
    steering_variant,
    unambiguous_range,
)
from geometry_channel import SystemConfig, UcaGeometry, sensing_channel
from numerics import Axis, ContractError, DomainError, Peak, hermitian_eig


def _random_covariance(rng, dim=8, signals=3, noise=0.05):
    A = rng.standard_normal((dim, signals)) + 1j * rng.standard_normal((dim, signals))
    return A @ A.conj().T + noise * np.eye(dim)


class TestSubspace:
    def test_sample_covariance_hermitian(self, rng):
        X = rng.standard_normal((20, 5)) + 1j * rng.standard_normal((20, 5))
        R = sample_covariance(SnapshotSet(X))
        np.testing.assert_allclose(R, R.conj().T)
        assert np.all(np.linalg.eigvalsh(R) > -1e-12)

    def test_snapshot_lengths_must_agree(self):
        with pytest.raises(ContractError):
            SnapshotSet.from_vectors([np.ones(3), np.ones(4)])

    def test_enhanced_scales(self, rng):
        eig = hermitian_eig(_random_covariance(rng))
        model = reweight_noise_subspace(eig, 3, rho=0.5, nu=2.0)
        assert model.noise_subspace.shape == (8, 5)
        assert model.scales[-1] == pytest.approx(0.25)
        assert np.all(np.diff(model.scales) >= 0)

    def test_conventional_scales_are_unit(self, rng):
        eig = hermitian_eig(_random_covariance(rng))
        model = reweight_noise_subspace(eig, 3, rho=0.5, nu=2.0, enhanced=False)
        np.testing.assert_allclose(model.scales, 1.0)

    @pytest.mark.parametrize("rho,nu", [(0.0, 1.0), (1.5, 1.0), (0.5, 0.0)])
    def test_invalid_coefficients(self, rng, rho, nu):
        eig = hermitian_eig(_random_covariance(rng))
        with pytest.raises(ValidityError):
            reweight_noise_subspace(eig, 2, rho, nu)

    def test_signal_dimension_bounds(self, rng):
        eig = hermitian_eig(_random_covariance(rng))
        with pytest.raises(ContractError):
            reweight_noise_subspace(eig, 8)


class TestOrderSelection:
    @staticmethod
    def _eigenvalues(rng, sources, dim=8, n=1024):
        def cn(*shape):
            return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)

        A = cn(dim, sources) * 2.0
        X = A @ (cn(sources, n) * math.sqrt(10.0)) + cn(dim, n)
        return hermitian_eig(sample_covariance(SnapshotSet(X.T))).eigenvalues

    def test_counts_sources_above_noise(self, rng):
        assert mdl_order(self._eigenvalues(rng, 3), 1024) == 3

    def test_pure_noise_has_no_sources(self, rng):
        assert mdl_order(self._eigenvalues(rng, 0), 1024) == 0

    def test_needs_two_snapshots(self):
        with pytest.raises(ContractError):
            mdl_order([2.0, 1.0], 1)


@pytest.mark.parametrize("rho", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
def test_underestimated_order_suppressed(rng, rho, nu):
    for _ in range(200):
        ratio = projector_ratio(_random_covariance(rng, signals=4), G=4, G_hat=2, rho=rho, nu=nu)
        assert ratio.enhanced <= ratio.conventional


class TestSteering:
    def test_miso_is_flat(self, small_cfg, geometry):
        np.testing.assert_allclose(steering_variant("miso", small_cfg, geometry, 0, 0.3, 0.4), 1.0)

    def test_oam_mimo_matches_oam(self, small_cfg, geometry):
        np.testing.assert_allclose(steering_variant("oam-mimo", small_cfg, geometry, 1, 0.3, 0.4),
                                   steering_oam(small_cfg, geometry, 1, 0.3, 0.4))

    def test_unknown_kind(self, small_cfg, geometry):
        with pytest.raises(ContractError):
            steering_variant("phased", small_cfg, geometry, 0, 0.3, 0.4)

    def test_unambiguous_range(self):
        assert unambiguous_range(SystemConfig()) == pytest.approx(299_792_458.0 / 800e3)

    def test_range_beyond_limit(self, small_cfg, geometry):
        with pytest.raises(DomainError):
            steering_freq(small_cfg, geometry, 1, 0.5, 400.0)


class TestPseudospectrum:
    def test_single_source_peak(self, small_cfg, geometry):
        theta, phi = math.radians(40.0), math.radians(30.0)
        a = steering_oam(small_cfg, geometry, 0, theta, phi)
        R = np.outer(a, a.conj()) + 1e-3 * np.eye(small_cfg.N_t)
        subspace = reweight_noise_subspace(hermitian_eig(R), 1)
        grid = pseudospectrum_oam(subspace, small_cfg, geometry, 0,
                                  Axis("theta_deg", 0.0, 179.0, 1.0), Axis("phi_deg", 1.0, 89.0, 1.0))
        r, c = np.unravel_index(int(np.argmax(grid.values)), grid.values.shape)
        assert grid.coordinates(r, c) == pytest.approx((40.0, 30.0))

    def test_zero_steering_gives_zero(self, rng):
        subspace = build_subspace(rng.standard_normal((10, 4)) + 0j, 1)
        values = pseudospectrum_vectors(subspace, np.zeros((2, 4)))
        np.testing.assert_array_equal(values, 0.0)


def test_velocity_from_slow_time(small_cfg, rng):
    v, frames = 3.0, 16
    f_d = 2.0 * v * small_cfg.f_0 / small_cfg.c
    ramp = np.exp(2j * np.pi * f_d * small_cfg.T_s * np.arange(1, frames + 1))
    amplitudes = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    X = amplitudes[:, None] * ramp[None, :]
    X = X + 1e-6 * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
    assert estimate_velocity(X, small_cfg, period=small_cfg.T_s) == pytest.approx(v, abs=0.1)


def test_velocity_search_limited(small_cfg):
    # frame-rate samples at T_s = 50 µs wrap beyond ±624.6 m/s
    X = np.ones((4, 4))
    with pytest.raises(DomainError, match="alias-free"):
        estimate_velocity(X, small_cfg, period=small_cfg.T_s, v_axis=Axis("v", -700.0, 700.0, 1.0))
    estimate_velocity(X, small_cfg, period=small_cfg.T_s, v_axis=Axis("v", -600.0, 600.0, 1.0))


@pytest.mark.parametrize("use_frame_rate", [True, False])
def test_default_velocity_axis_stays_inside_limit(small_cfg, use_frame_rate):
    period = small_cfg.T_s if use_frame_rate else None
    limit = small_cfg.velocity_limit(small_cfg.T_s if use_frame_rate else small_cfg.T_0)
    axis = default_velocity_axis(small_cfg, period)
    assert axis.start == -axis.stop
    assert limit - axis.step < axis.stop < limit


def test_fast_target_on_default_axis(rng):
    cfg = SystemConfig()
    v, frames = -150.0, 16
    f_d = 2.0 * v * cfg.f_0 / cfg.c
    ramp = np.exp(2j * np.pi * f_d * cfg.T_s * np.arange(1, frames + 1))
    amplitudes = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    X = amplitudes[:, None] * ramp[None, :]
    X = X + 1e-3 * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
    assert estimate_velocity(X, cfg, period=cfg.T_s) == pytest.approx(v, abs=0.1)


class TestPointSelection:
    def test_bessel_copy_loses_to_new_point(self):
        cfg, geom = SystemConfig(), UcaGeometry()
        # φ = 47.77° moves the Bessel argument of φ = 38° by about π
        spots = {"strong": (30.0, 38.0), "copy": (30.0, 47.77), "weak": (10.0, 50.0)}
        vectors = {name: steering_oam(cfg, geom, 0, math.radians(t), math.radians(p))
                   for name, (t, p) in spots.items()}
        R = (np.outer(vectors["strong"], vectors["strong"].conj())
             + 0.05 * np.outer(vectors["weak"], vectors["weak"].conj())
             + 1e-4 * np.eye(cfg.N_t))
        subspace = reweight_noise_subspace(hermitian_eig(R), 1)
        candidates = [Peak(t, p, 1.0 - 0.1 * i, i, 0) for i, (t, p) in enumerate(spots.values())]
        chosen = select_points(subspace, cfg, geom, 0, candidates, 2)
        assert {(p.axis1, p.axis2) for p in chosen} == {spots["strong"], spots["weak"]}

    def test_count_caps_selection(self, small_cfg, geometry):
        a = steering_oam(small_cfg, geometry, 0, math.radians(40.0), math.radians(30.0))
        subspace = reweight_noise_subspace(hermitian_eig(np.outer(a, a.conj()) + 1e-3 * np.eye(8)), 1)
        candidates = [Peak(40.0, 30.0, 2.0, 0, 0), Peak(120.0, 60.0, 1.0, 1, 1)]
        assert select_points(subspace, small_cfg, geometry, 0, candidates, 1) == [candidates[0]]
        assert select_points(subspace, small_cfg, geometry, 0, [], 2) == []


def test_estimate_scene_noise_free(small_cfg, geometry, single_point_scene):
    frames = 8
    H = np.stack([sensing_channel(small_cfg, geometry, single_point_scene, frame=f).H_s for f in range(frames)])
    settings = EmusicSettings(
        G_hat=1,
        n_points=1,
        theta_axis=Axis("theta_deg", 0.0, 179.5, 0.5),
        phi_axis=Axis("phi_deg", 0.5, 89.5, 0.5),
        R_axis=Axis("R_m", 5.0, 60.0, 0.5),
    )
    result = estimate_scene(H, np.ones(H.shape, dtype=bool), small_cfg, geometry, settings)
    assert result.estimate.v_hat == pytest.approx(3.0, abs=0.1)
    best = result.estimate.detected()[0]
    assert math.degrees(best.theta) == pytest.approx(40.0, abs=1.0)
    assert math.degrees(best.phi) == pytest.approx(30.0, abs=1.0)
    assert best.R == pytest.approx(30.0, abs=1.0)


def test_estimate_scene_shape_check(small_cfg, geometry):
    with pytest.raises(ContractError):
        estimate_scene(np.ones((2, 3, 8)), True, small_cfg, geometry)


class TestHalfHeightWidth:
    def test_triangle(self):
        y = [0, 1, 2, 3, 4, 3, 2, 1, 0]
        assert half_height_width(y, np.arange(9.0)) == pytest.approx(4.0)

    def test_flat_profile_spans_axis(self):
        assert half_height_width(np.ones(5), np.linspace(0.0, 2.0, 5)) == pytest.approx(2.0)


class TestFusion:
    def test_domains_are_averaged(self):
        raw = DomainPeaks(theta_q=[0.1, 0.3, None], phi_q=[0.2], phi_is=[0.4], R_is=[30.0, 32.0])
        estimate = fuse_estimates([raw], v_hat=1.5, heights=[7.0])
        point = estimate.points[0]
        assert point.theta == pytest.approx(0.2)
        assert point.phi == pytest.approx(0.3)
        assert point.R == pytest.approx(31.0)
        assert point.detected and point.height == 7.0
        assert estimate.v_hat == 1.5

    def test_missing_range_is_not_detected(self):
        estimate = fuse_estimates([DomainPeaks(theta_q=[0.1], phi_q=[0.2])])
        assert math.isnan(estimate.points[0].R)
        assert estimate.detected() == []
