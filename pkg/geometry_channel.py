#!/usr/bin/env python3
"""
Scene geometry and channel synthesis.

Builds the mono-static OAM sensing channel (Bessel-modulated per-mode gains
with delay and Doppler phases), the per-user communication channels between
transmit and receive UCAs, and the jamming channels from the jammer array to
each user. The sensing channel uses the far-field distance approximation;
the communication and jamming channels use exact 3-D distances.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation

from numerics import ContractError, IsacError, bessel_j

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
FAR_FIELD_FACTOR = 10.0


class ConfigurationError(IsacError):
    """Physical configuration that the channel model cannot represent."""


@dataclass(frozen=True)
class SystemConfig:
    """OFDM and array dimensions shared by every module."""
    N_t: int = 16
    N_f: int = 16
    N_f_prime: int = 16
    delta_f: float = 200e3
    f_0: float = 2.4e9
    T_cp: float = 1.25e-6
    c: float = SPEED_OF_LIGHT
    beta: float = 1.0
    beta_J: Tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "beta_J", tuple(float(b) for b in self.beta_J))
        if self.N_t < 2 or self.N_t % 2:
            raise ConfigurationError(f"N_t must be even and at least 2, got {self.N_t}")
        if not self.N_f_prime >= self.N_f >= 1:
            raise ConfigurationError(
                f"Need N_f_prime ≥ N_f ≥ 1, got N_f={self.N_f}, N_f_prime={self.N_f_prime}"
            )
        if self.delta_f <= 0 or self.f_0 <= 0 or self.c <= 0:
            raise ConfigurationError("delta_f, f_0 and c must be positive")
        if self.T_cp < 0:
            raise ConfigurationError("T_cp must be non-negative")
        if self.beta < 0 or any(b < 0 for b in self.beta_J):
            raise ConfigurationError("Attenuation constants must be non-negative")

    @property
    def T(self) -> float:
        return 1.0 / self.delta_f

    @property
    def T_0(self) -> float:
        return self.T + self.T_cp

    @property
    def T_s(self) -> float:
        return self.N_t * self.T_0

    @property
    def B(self) -> float:
        return self.N_f * self.delta_f

    @property
    def max_velocity(self) -> float:
        """Radial speed at which the Doppler shift reaches half a subcarrier."""
        return self.c * self.delta_f / (2.0 * self.f_0)

    def velocity_limit(self, period: Optional[float] = None) -> float:
        """
        Largest radial speed a slow-time record sampled every ``period``
        (T_s, one sensing frame, by default) measures without aliasing,
        capped by the slow-motion bound ``max_velocity``.
        """
        period = self.T_s if period is None else period
        if not period > 0:
            raise ConfigurationError(f"Slow-time period must be positive, got {period}")
        return min(self.max_velocity, self.c / (4.0 * self.f_0 * period))

    @property
    def max_range(self) -> float:
        """Largest range whose round-trip delay still fits in the cyclic prefix."""
        return self.c * self.T_cp / 2.0

    def frequency(self, q):
        return self.f_0 + np.asarray(q) * self.delta_f

    def wavelength(self, q):
        return self.c / self.frequency(q)

    def beta_jam(self, k: int) -> float:
        if k >= len(self.beta_J):
            raise ConfigurationError(f"No jamming attenuation configured for user {k}")
        return self.beta_J[k]


def slot_modes(N_t: int) -> np.ndarray:
    """OAM order swept in sensing slot i_s = 1..N_t (l = −N_t/2 + i_s)."""
    return np.arange(1, N_t + 1) - N_t // 2


def spherical_to_cartesian(R, theta, phi) -> np.ndarray:
    """Polar angle ``phi`` is measured from the array axis (z)."""
    return np.array([
        R * math.sin(phi) * math.cos(theta),
        R * math.sin(phi) * math.sin(theta),
        R * math.cos(phi),
    ])


def element_positions(radius: float, N: int, center=(0.0, 0.0, 0.0),
                      rotation: Optional[Rotation] = None) -> np.ndarray:
    """3-D coordinates (N×3) of UCA elements at azimuth 2πn/N, n = 0..N−1."""
    alpha = 2.0 * np.pi * np.arange(N) / N
    local = np.stack([radius * np.cos(alpha), radius * np.sin(alpha), np.zeros(N)], axis=1)
    if rotation is not None:
        local = rotation.apply(local)
    return local + np.asarray(center, dtype=float)


@dataclass(frozen=True)
class Misalignment:
    """Rigid perturbation of a receive UCA: yaw about z, then pitch, then offset."""
    yaw: float = 0.0
    pitch: float = 0.0
    offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def rotation(self) -> Rotation:
        return Rotation.from_euler("zy", [self.yaw, self.pitch])

    @property
    def is_aligned(self) -> bool:
        return self.yaw == 0 and self.pitch == 0 and not any(self.offset)


def ring_centers(distance: float, polar: float, azimuths: Sequence[float]):
    return tuple(tuple(spherical_to_cartesian(distance, az, polar)) for az in azimuths)


def _default_user_centers():
    return ring_centers(2.5, math.radians(45.0), [math.radians(60.0), math.radians(200.0)])


def _default_misalignment():
    return (
        Misalignment(math.radians(3.0), math.radians(2.0), (0.2, -0.1, 0.0)),
        Misalignment(math.radians(-2.0), math.radians(4.0), (-0.15, 0.25, 0.0)),
    )


@dataclass(frozen=True)
class UcaGeometry:
    """Transmit/echo UCA radii and the per-user receive UCAs."""
    r_t: float = 0.5
    r_r: float = 0.25
    user_radii: Tuple[float, ...] = (0.5, 0.5)
    user_centers: Tuple[Tuple[float, float, float], ...] = field(default_factory=_default_user_centers)
    user_misalignment: Tuple[Misalignment, ...] = field(default_factory=_default_misalignment)

    def __post_init__(self):
        object.__setattr__(self, "user_radii", tuple(float(r) for r in self.user_radii))
        object.__setattr__(self, "user_centers", tuple(tuple(map(float, c)) for c in self.user_centers))
        object.__setattr__(self, "user_misalignment", tuple(self.user_misalignment))
        if self.r_t <= 0 or self.r_r <= 0 or any(r <= 0 for r in self.user_radii):
            raise ConfigurationError("All UCA radii must be positive")
        K = len(self.user_radii)
        if len(self.user_centers) != K or len(self.user_misalignment) != K:
            raise ConfigurationError(
                f"user_radii, user_centers and user_misalignment disagree on K "
                f"({K}, {len(self.user_centers)}, {len(self.user_misalignment)})"
            )

    @property
    def num_users(self) -> int:
        return len(self.user_radii)

    def transmit_elements(self, N_t: int) -> np.ndarray:
        return element_positions(self.r_t, N_t)

    def user_elements(self, k: int, N_t: int) -> np.ndarray:
        if not 0 <= k < self.num_users:
            raise ContractError(f"User index {k} out of range for K={self.num_users}")
        mis = self.user_misalignment[k]
        center = np.asarray(self.user_centers[k]) + np.asarray(mis.offset, dtype=float)
        rotation = None if mis.yaw == 0 and mis.pitch == 0 else mis.rotation()
        return element_positions(self.user_radii[k], N_t, center, rotation)


@dataclass(frozen=True)
class ScatterPoint:
    R: float
    theta: float
    phi: float
    chi: complex = 1.0

    def position(self) -> np.ndarray:
        return spherical_to_cartesian(self.R, self.theta, self.phi)

    def delay(self, c: float = SPEED_OF_LIGHT) -> float:
        return 2.0 * self.R / c


@dataclass(frozen=True)
class ScatterScene:
    """Reflect points of the jammer body plus its motion and array size."""
    points: Tuple[ScatterPoint, ...]
    v: float = 3.0
    jammer_index: int = 0
    N_J: int = 1
    jammer_radius: float = 0.0
    rcs_fluctuation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ConfigurationError("A scene needs at least one scatter point")
        for g, p in enumerate(self.points):
            if p.R <= 0:
                raise ConfigurationError(f"Point {g}: range must be positive")
            if not 0.0 <= p.theta < 2.0 * np.pi:
                raise ConfigurationError(f"Point {g}: azimuth {p.theta} outside [0, 2π)")
            if not 0.0 < p.phi < np.pi / 2:
                raise ConfigurationError(f"Point {g}: elevation {p.phi} outside (0, π/2)")
        if not 0 <= self.jammer_index < len(self.points):
            raise ConfigurationError(f"jammer_index {self.jammer_index} has no matching point")
        if self.N_J < 1:
            raise ConfigurationError("N_J must be at least 1")
        if self.N_J > 1 and self.jammer_radius <= 0:
            raise ConfigurationError("A multi-element jammer needs jammer_radius > 0")

    @property
    def G(self) -> int:
        return len(self.points)

    @property
    def jammer(self) -> ScatterPoint:
        return self.points[self.jammer_index]

    def doppler(self, cfg: SystemConfig) -> float:
        return 2.0 * self.v * cfg.f_0 / cfg.c

    def validate_for(self, cfg: SystemConfig, geom: UcaGeometry):
        """Check the far-field, cyclic-prefix and slow-motion validity conditions."""
        r_max = max(geom.r_t, geom.r_r)
        for g, p in enumerate(self.points):
            if p.R <= FAR_FIELD_FACTOR * r_max:
                raise ConfigurationError(
                    f"Point {g} at {p.R} m violates the far-field condition R > {FAR_FIELD_FACTOR * r_max} m"
                )
        if self.G > cfg.N_t:
            raise ConfigurationError(f"G={self.G} points exceed N_t={cfg.N_t} resolvable modes")
        tau_max = max(p.delay(cfg.c) for p in self.points)
        if cfg.T_cp < tau_max:
            raise ConfigurationError(
                f"Cyclic prefix {cfg.T_cp:.3e} s is shorter than the maximum delay {tau_max:.3e} s"
            )
        if abs(self.v) >= cfg.velocity_limit():
            raise ConfigurationError(
                f"|v|={abs(self.v)} m/s aliases at the frame rate (limit {cfg.velocity_limit():.2f} m/s)"
            )

    def with_points(self, points) -> "ScatterScene":
        return ScatterScene(tuple(points), self.v, min(self.jammer_index, len(points) - 1),
                            self.N_J, self.jammer_radius, self.rcs_fluctuation)


def _rtp(point):
    if hasattr(point, "R"):
        return float(point.R), float(point.theta), float(point.phi)
    R, theta, phi = point[:3]
    return float(R), float(theta), float(phi)


def exact_distance(point, element) -> float:
    """Distance from a (R, θ, φ) point to the UCA element (radius, azimuth)."""
    R, theta, phi = _rtp(point)
    if R <= 0:
        raise ContractError("Point range must be positive")
    r, alpha = element
    return np.sqrt(R * R + np.square(r) - 2.0 * R * np.asarray(r) * math.sin(phi) * np.cos(np.asarray(alpha) - theta))


def approx_distance(point, element):
    """
    Far-field split of the element distance.

    Returns ``(amplitude, correction)`` where the distance is approximately
    ``amplitude − correction``; the amplitude term carries the 1/d law and the
    correction carries the element-dependent phase.
    """
    R, theta, phi = _rtp(point)
    r, alpha = element
    amplitude = np.sqrt(R * R + np.square(r))
    correction = np.asarray(r) * R * math.sin(phi) * np.cos(np.asarray(alpha) - theta) / amplitude
    return amplitude, correction


def _mode_gain(cfg: SystemConfig, geom: UcaGeometry, point, q, l):
    R, theta, phi = _rtp(point)
    lam = cfg.wavelength(q)
    amp_t = math.hypot(R, geom.r_t)
    amp_r = math.hypot(R, geom.r_r)
    base = (cfg.beta * lam * cfg.N_t / (4.0 * np.pi * amp_t * amp_r)
            * np.exp(-2j * np.pi * (amp_t + amp_r) / lam))
    x_t = 2.0 * np.pi * geom.r_t * R * math.sin(phi) / (lam * amp_t)
    x_r = 2.0 * np.pi * geom.r_r * R * math.sin(phi) / (lam * amp_r)
    return base * np.exp(2j * theta * l) * bessel_j(l, x_t) * bessel_j(0, x_r)


def sensing_mode_gain(cfg: SystemConfig, geom: UcaGeometry, point, q: int, l: int) -> complex:
    """Bessel-modulated gain of OAM mode ``l`` reflected by one point on subcarrier ``q``."""
    if abs(l) > cfg.N_t // 2:
        raise ContractError(f"|l|={abs(l)} exceeds N_t/2={cfg.N_t // 2}")
    return complex(_mode_gain(cfg, geom, point, q, l))


def element_sum_gain(cfg: SystemConfig, geom: UcaGeometry, point, q: int, l: int) -> complex:
    """
    Element-level reference for one mode: the explicit double sum over
    transmit element n and echo element m, normalized by N_t, with unit RCS.

    For an array fine enough that J_{l±N_t} vanishes this equals
    ``sensing_mode_gain · j^l · e^{−jlθ}``.
    """
    lam = float(cfg.wavelength(q))
    alpha = 2.0 * np.pi * np.arange(cfg.N_t) / cfg.N_t
    amp_t, corr_t = approx_distance(point, (geom.r_t, alpha))
    amp_r, corr_r = approx_distance(point, (geom.r_r, alpha))
    base = (cfg.beta * lam / (4.0 * np.pi * amp_t * amp_r)
            * np.exp(-2j * np.pi * (amp_t + amp_r) / lam))
    h = base * np.exp(2j * np.pi * (corr_r[:, None] + corr_t[None, :]) / lam)
    return complex(np.sum(h * np.exp(1j * l * alpha)[None, :]) / cfg.N_t)


@dataclass
class SensingChannel:
    """Slot-domain sensing channel and its fast-time samples."""
    H_s: np.ndarray
    fast_time: np.ndarray  # (N_f, N_t, N_f_prime)


def sensing_channel(cfg: SystemConfig, geom: UcaGeometry, scene: ScatterScene,
                    frame: int = 0, chi: Optional[Sequence[complex]] = None) -> SensingChannel:
    """
    Echo channel H_s[q, i_s] summed over the scene's points.

    ``frame`` advances slow time by whole sensing frames of length T_s and
    ``chi`` overrides the per-point cross sections (used for RCS fluctuation).
    """
    scene.validate_for(cfg, geom)
    chis = [p.chi for p in scene.points] if chi is None else list(chi)
    if len(chis) != scene.G:
        raise ContractError(f"Expected {scene.G} cross sections, got {len(chis)}")

    q = np.arange(cfg.N_f)
    i_s = np.arange(1, cfg.N_t + 1)
    modes = slot_modes(cfg.N_t)
    f_d = scene.doppler(cfg)
    slow = i_s * cfg.T_0 + frame * cfg.T_s
    t = np.arange(cfg.N_f_prime) / (cfg.N_f_prime * cfg.delta_f)

    H_s = np.zeros((cfg.N_f, cfg.N_t), dtype=complex)
    fast = np.zeros((cfg.N_f, cfg.N_t, cfg.N_f_prime), dtype=complex)
    for point, chi_g in zip(scene.points, chis):
        tau = point.delay(cfg.c)
        A = _mode_gain(cfg, geom, point, q[:, None], modes[None, :])
        common = A * chi_g * np.exp(-2j * np.pi * cfg.f_0 * tau)
        H_s += (common * np.exp(2j * np.pi * f_d * slow)[None, :]
                * np.exp(-2j * np.pi * q * cfg.delta_f * tau)[:, None])

        tt = t[None, None, :] + slow[None, :, None]
        fast += (common[:, :, None] * np.exp(2j * np.pi * f_d * tt)
                 * np.exp(2j * np.pi * q[:, None, None] * cfg.delta_f
                          * (tt - tau + 2.0 * scene.v * tt / cfg.c)))

    logger.debug(f"🔍 sensing channel built for {scene.G} points, frame {frame}")
    return SensingChannel(H_s=H_s, fast_time=fast)


def fast_time_gains(cfg: SystemConfig, geom: UcaGeometry, scene: ScatterScene,
                    q: int, i_s: int) -> np.ndarray:
    """Discrete-time gains over q̈ = 0..N_f′−1 for subcarrier q and slot i_s."""
    if not 1 <= i_s <= cfg.N_t:
        raise ContractError(f"Slot {i_s} outside 1..{cfg.N_t}")
    return sensing_channel(cfg, geom, scene).fast_time[q, i_s - 1]


def _link_matrix(beta: float, lam: float, distances: np.ndarray) -> np.ndarray:
    return beta * lam / (4.0 * np.pi * distances) * np.exp(2j * np.pi * distances / lam)


def comm_channel(cfg: SystemConfig, geom: UcaGeometry, k: int, q: int) -> np.ndarray:
    """N_t×N_t channel from transmit element n (column) to user-k element u (row)."""
    rx = geom.user_elements(k, cfg.N_t)
    tx = geom.transmit_elements(cfg.N_t)
    return _link_matrix(cfg.beta, float(cfg.wavelength(q)), cdist(rx, tx))


def jammer_elements(position, N_J: int = 1, radius: float = 0.0) -> np.ndarray:
    """Jammer array: one element at the position, or a horizontal ring around it."""
    if isinstance(position, np.ndarray):
        center = position.astype(float)
    else:
        center = spherical_to_cartesian(*_rtp(position))
    if N_J == 1:
        return center[None, :]
    return element_positions(radius, N_J, center)


def jamming_channel(cfg: SystemConfig, geom: UcaGeometry, scene: ScatterScene, k: int, q: int,
                    jammer_position=None) -> np.ndarray:
    """
    N_t×N_J channel from jammer element n_j to user-k element u.

    ``jammer_position`` (anything with R/theta/phi) replaces the scene's true
    jammer location, e.g. by a sensing estimate.
    """
    position = scene.jammer if jammer_position is None else jammer_position
    jam = jammer_elements(position, scene.N_J, scene.jammer_radius)
    rx = geom.user_elements(k, cfg.N_t)
    return _link_matrix(cfg.beta_jam(k), float(cfg.wavelength(q)), cdist(rx, jam))


@dataclass
class ChannelSet:
    H_s: np.ndarray
    H_comm: np.ndarray  # (K, N_f, N_t, N_t)
    H_jam: np.ndarray   # (K, N_f, N_t, N_J)

    def __post_init__(self):
        for name in ("H_s", "H_comm", "H_jam"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigurationError(f"{name} contains non-finite entries")


def build_channel_set(cfg: SystemConfig, geom: UcaGeometry, scene: ScatterScene,
                      jammer_position=None) -> ChannelSet:
    """All channels of one scenario; the jamming channels follow ``jammer_position`` when given."""
    K = geom.num_users
    H_comm = np.stack([
        np.stack([comm_channel(cfg, geom, k, q) for q in range(cfg.N_f)]) for k in range(K)
    ])
    H_jam = np.stack([
        np.stack([jamming_channel(cfg, geom, scene, k, q, jammer_position) for q in range(cfg.N_f)])
        for k in range(K)
    ])
    H_s = sensing_channel(cfg, geom, scene).H_s
    logger.info(f"📊 Channels ready: K={K}, N_f={cfg.N_f}, N_t={cfg.N_t}, N_J={scene.N_J}")
    return ChannelSet(H_s=H_s, H_comm=H_comm, H_jam=H_jam)
