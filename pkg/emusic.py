#!/usr/bin/env python3
"""
Enhanced MUSIC (EMUSIC) estimation of scatter-point positions.

Covariances are built from echo snapshots, the noise subspace is reweighted
by (ρ μ_min / μ_i)^ν so that signal eigenvectors misfiled as noise (when the
assumed point count Ĝ is too small) lose their influence, and pseudospectra
are searched in the OAM domain for (θ, φ), in the frequency domain for
(φ, R) and over slow time for the radial velocity.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg, stats

from geometry_channel import SystemConfig, UcaGeometry, slot_modes
from numerics import (
    Axis,
    ContractError,
    DomainError,
    EigenDecomposition,
    Grid2D,
    IsacError,
    Peak,
    bessel_j,
    find_peaks,
    get_executor,
    hermitian_eig,
    worker_count,
)

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-18
EIGEN_FLOOR = 1e-15
MDL_EIGEN_FLOOR = 1e-12
STEERING_KINDS = ("oam-mimo", "oam-miso", "mimo", "miso")


class ValidityError(IsacError):
    """Reweighting coefficients outside the range where EMUSIC stays consistent."""


@dataclass(frozen=True)
class SnapshotSet:
    """𝒩 equal-length observation vectors from one domain ('oam', 'freq' or 'slow')."""
    vectors: np.ndarray
    domain: str = "oam"

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ContractError(f"Snapshots must be a non-empty (𝒩, dim) array, got {self.vectors.shape}")
        if self.domain not in ("oam", "freq", "slow"):
            raise ContractError(f"Unknown snapshot domain '{self.domain}'")

    @classmethod
    def from_vectors(cls, vectors: Sequence, domain: str = "oam") -> "SnapshotSet":
        vectors = [np.asarray(v, dtype=complex).ravel() for v in vectors]
        if not vectors:
            raise ContractError("At least one snapshot is required")
        lengths = {len(v) for v in vectors}
        if len(lengths) != 1:
            raise ContractError(f"Snapshot lengths disagree: {sorted(lengths)}")
        return cls(np.stack(vectors), domain)

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def sample_covariance(snapshots) -> np.ndarray:
    """R = (1/𝒩) Σ h h^H over the snapshot vectors."""
    if not isinstance(snapshots, SnapshotSet):
        snapshots = SnapshotSet.from_vectors(snapshots)
    X = snapshots.vectors
    R = X.T @ X.conj() / snapshots.count
    return 0.5 * (R + R.conj().T)


@dataclass(frozen=True)
class SubspaceModel:
    signal_dim: int
    noise_subspace: np.ndarray
    raw_eigen: Optional[EigenDecomposition] = None
    rho: float = 1.0
    nu: float = 1.0
    scales: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return int(self.noise_subspace.shape[0])

    def projector(self) -> np.ndarray:
        U = self.noise_subspace
        return U @ U.conj().T


def _check_coefficients(rho: float, nu: float):
    if not 0.0 < rho <= 1.0:
        raise ValidityError(f"rho must lie in (0, 1], got {rho}")
    if not nu > 0.0:
        raise ValidityError(f"nu must be positive, got {nu}")


def reweight_noise_subspace(eig: EigenDecomposition, G_hat: int, rho: float = 1.0,
                            nu: float = 1.0, enhanced: bool = True) -> SubspaceModel:
    """
    Noise subspace from the trailing dim − Ĝ eigenvectors.

    With ``enhanced`` each column is scaled by (ρ μ_min / μ_i)^ν; without it
    the plain MUSIC subspace (unit scales) is returned.
    """
    dim = eig.dim
    if not 1 <= G_hat < dim:
        raise ContractError(f"Ĝ={G_hat} must satisfy 1 ≤ Ĝ < {dim}")
    noise = eig.eigenvectors[:, G_hat:]
    if enhanced:
        _check_coefficients(rho, nu)
        floor = EIGEN_FLOOR * max(float(eig.eigenvalues[0]), np.finfo(float).tiny)
        mu = np.maximum(eig.eigenvalues[G_hat:], floor)
        scales = (rho * mu[-1] / mu) ** nu
    else:
        scales = np.ones(dim - G_hat)
    return SubspaceModel(
        signal_dim=G_hat,
        noise_subspace=noise * scales[None, :],
        raw_eigen=eig,
        rho=rho,
        nu=nu,
        scales=scales,
    )


def build_subspace(snapshots, G_hat: int, rho: float = 1.0, nu: float = 1.0,
                   enhanced: bool = True) -> SubspaceModel:
    return reweight_noise_subspace(hermitian_eig(sample_covariance(snapshots)), G_hat, rho, nu, enhanced)


def mdl_order(eigenvalues, n_snapshots: int) -> int:
    """
    Number of sources by minimum description length over the descending
    covariance eigenvalues of ``n_snapshots`` complex observations.

    For each candidate order k the trailing eigenvalues are tested for
    equality through the ratio of their geometric to arithmetic mean,
    penalized by ½ k (2M − k) ln 𝒩 free parameters.
    """
    if n_snapshots < 2:
        raise ContractError(f"MDL needs at least two snapshots, got {n_snapshots}")
    mu = np.asarray(eigenvalues, dtype=float)
    mu = np.maximum(mu, MDL_EIGEN_FLOOR * max(float(mu[0]), np.finfo(float).tiny))
    M = mu.size
    orders = np.arange(M)
    fit = np.array([-(M - k) * n_snapshots * np.log(stats.gmean(mu[k:]) / np.mean(mu[k:]))
                    for k in orders])
    penalty = 0.5 * orders * (2 * M - orders) * np.log(n_snapshots)
    return int(np.argmin(fit + penalty))


@dataclass(frozen=True)
class ProjectorRatio:
    enhanced: float
    conventional: float


def projector_ratio(R, G: int, G_hat: int, rho: float, nu: float) -> ProjectorRatio:
    """
    Mass of misclassified signal eigenvectors relative to true noise
    eigenvectors in the noise projector, with and without reweighting.
    """
    eig = hermitian_eig(R)
    if not 1 <= G_hat < G < eig.dim:
        raise ContractError(f"Need 1 ≤ Ĝ < G < dim, got Ĝ={G_hat}, G={G}, dim={eig.dim}")
    model = reweight_noise_subspace(eig, G_hat, rho, nu)
    s2 = model.scales ** 2
    miss = G - G_hat
    return ProjectorRatio(
        enhanced=float(s2[:miss].sum() / s2[miss:].sum()),
        conventional=float(miss / (eig.dim - G)),
    )


def _oam_amplitudes(cfg: SystemConfig, geom: UcaGeometry, q, phis) -> np.ndarray:
    """J_l(2π r_t sinφ / λ_q) for every φ (rows) and swept mode (columns)."""
    x = 2.0 * np.pi * geom.r_t * np.sin(np.atleast_1d(phis)) / float(cfg.wavelength(q))
    return bessel_j(slot_modes(cfg.N_t)[None, :], x[:, None])


def steering_oam(cfg: SystemConfig, geom: UcaGeometry, q: int, theta: float, phi: float) -> np.ndarray:
    """OAM-domain direction vector: entry i_s is e^{j2θl} J_l(2π r_t sinφ / λ_q)."""
    modes = slot_modes(cfg.N_t)
    return np.exp(2j * theta * modes) * _oam_amplitudes(cfg, geom, q, phi)[0]


def steering_variant(kind: str, cfg: SystemConfig, geom: UcaGeometry, q: int,
                     theta: float, phi: float) -> np.ndarray:
    """Direction vector of the proposed OAM receiver or one of its baselines."""
    modes = slot_modes(cfg.N_t)
    if kind == "oam-mimo":
        return steering_oam(cfg, geom, q, theta, phi)
    if kind == "oam-miso":
        return np.exp(1j * theta * modes) * _oam_amplitudes(cfg, geom, q, phi)[0]
    if kind == "mimo":
        alpha = 2.0 * np.pi * np.arange(cfg.N_t) / cfg.N_t
        lam = float(cfg.wavelength(q))
        return np.exp(-2j * np.pi * geom.r_r * math.sin(phi) * np.cos(alpha - theta) / lam)
    if kind == "miso":
        return np.ones(cfg.N_t, dtype=complex)
    raise ContractError(f"Unknown steering kind '{kind}', expected one of {STEERING_KINDS}")


def unambiguous_range(cfg: SystemConfig) -> float:
    """Largest range before the modelled phase ramp across subcarriers wraps."""
    # propagation and delay phases both advance with R, so the ramp is 4RΔf/c
    return cfg.c / (4.0 * cfg.delta_f)


def _freq_steering(cfg: SystemConfig, geom: UcaGeometry, l: int, phis, Rs) -> np.ndarray:
    """b over (φ, R, q) for mode ``l``."""
    phis = np.atleast_1d(np.asarray(phis, dtype=float))[:, None, None]
    Rs = np.atleast_1d(np.asarray(Rs, dtype=float))[None, :, None]
    q = np.arange(cfg.N_f)
    lam = cfg.wavelength(q)[None, None, :]
    freq = cfg.frequency(q)[None, None, :]
    amp_t = np.sqrt(Rs ** 2 + geom.r_t ** 2)
    amp_r = np.sqrt(Rs ** 2 + geom.r_r ** 2)
    x_t = 2.0 * np.pi * geom.r_t * Rs * np.sin(phis) / (lam * amp_t)
    x_r = 2.0 * np.pi * geom.r_r * Rs * np.sin(phis) / (lam * amp_r)
    return (lam / (amp_t * amp_r)
            * np.exp(-2j * np.pi * (amp_t + amp_r) / lam)
            * bessel_j(0, x_r) * bessel_j(l, x_t)
            * np.exp(-2j * np.pi * 2.0 * Rs * freq / cfg.c))


def _check_range(cfg: SystemConfig, R_max: float):
    limit = unambiguous_range(cfg)
    if R_max >= limit:
        raise DomainError(f"Range {R_max} m is beyond the unambiguous range {limit:.1f} m")


def steering_freq(cfg: SystemConfig, geom: UcaGeometry, l: int, phi: float, R: float) -> np.ndarray:
    """Frequency-domain direction vector of mode ``l`` for elevation φ and range R."""
    if not R > 0:
        raise ContractError("Range must be positive")
    _check_range(cfg, R)
    return _freq_steering(cfg, geom, l, phi, R)[0, 0]


def _spectrum_from_denominators(denom: np.ndarray, norm: np.ndarray, label: str) -> np.ndarray:
    """1 / (â^H Û Û^H â) with â the unit-norm steering; zero-norm steering gives 0."""
    zero = norm <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = np.where(zero, 1.0, denom / np.where(zero, 1.0, norm))
    clamped = normalized < DENOMINATOR_FLOOR
    if np.any(clamped & ~zero):
        logger.warning(f"⚠️  {int(np.count_nonzero(clamped & ~zero))} {label} cells saturated at the denominator floor")
    values = 1.0 / np.maximum(normalized, DENOMINATOR_FLOOR)
    if np.any(zero):
        logger.debug(f"🔍 {int(np.count_nonzero(zero))} {label} cells have zero-norm steering")
    return np.where(zero, 0.0, values)


def _split(values: np.ndarray):
    return [c for c in np.array_split(values, worker_count()) if c.size]


def pseudospectrum_vectors(subspace: SubspaceModel, steering: np.ndarray) -> np.ndarray:
    """Pseudospectrum at each row of ``steering`` (n × dim)."""
    steering = np.atleast_2d(steering)
    proj = steering @ subspace.noise_subspace.conj()
    denom = np.sum(np.abs(proj) ** 2, axis=1)
    norm = np.sum(np.abs(steering) ** 2, axis=1)
    return _spectrum_from_denominators(denom, norm, "steering")


def pseudospectrum_oam(subspace: SubspaceModel, cfg: SystemConfig, geom: UcaGeometry, q: int,
                       theta_axis: Axis, phi_axis: Axis) -> Grid2D:
    """P_q(θ, φ) on a grid whose axes are in degrees."""
    if subspace.dim != cfg.N_t:
        raise ContractError(f"OAM subspace has dimension {subspace.dim}, expected {cfg.N_t}")
    modes = slot_modes(cfg.N_t)
    amp = _oam_amplitudes(cfg, geom, q, np.radians(phi_axis.values()))
    norm = np.sum(amp ** 2, axis=1)[None, :]
    U = subspace.noise_subspace

    def denominators(thetas):
        phase = np.exp(2j * thetas[:, None] * modes[None, :])
        denom = np.zeros((thetas.size, amp.shape[0]))
        for k in range(U.shape[1]):
            denom += np.abs((phase * U[:, k].conj()[None, :]) @ amp.T) ** 2
        return denom

    chunks = _split(np.radians(theta_axis.values()))
    denom = np.vstack(list(get_executor().map(denominators, chunks)))
    return Grid2D(theta_axis, phi_axis, _spectrum_from_denominators(denom, norm, "OAM"))


def pseudospectrum_freq(subspace: SubspaceModel, cfg: SystemConfig, geom: UcaGeometry, l: int,
                        phi_axis: Axis, R_axis: Axis) -> Grid2D:
    """P_{i_s}(φ, R) for mode ``l``; φ in degrees, R in meters."""
    if subspace.dim != cfg.N_f:
        raise ContractError(f"Frequency subspace has dimension {subspace.dim}, expected {cfg.N_f}")
    _check_range(cfg, R_axis.stop)
    Rs = R_axis.values()
    U = subspace.noise_subspace

    def block(phis):
        b = _freq_steering(cfg, geom, l, phis, Rs)
        denom = np.sum(np.abs(b @ U.conj()) ** 2, axis=2)
        return denom, np.sum(np.abs(b) ** 2, axis=2)

    parts = list(get_executor().map(block, _split(np.radians(phi_axis.values()))))
    denom = np.vstack([p[0] for p in parts])
    norm = np.vstack([p[1] for p in parts])
    return Grid2D(phi_axis, R_axis, _spectrum_from_denominators(denom, norm, "frequency"))


def default_velocity_axis(cfg: SystemConfig, period: Optional[float] = None, step: float = 0.05) -> Axis:
    """Symmetric velocity grid just inside the alias-free span for ``period`` (T_0 by default)."""
    period = cfg.T_0 if period is None else period
    limit = math.floor(cfg.velocity_limit(period) / step - 1e-9) * step
    return Axis("v_mps", -limit, limit, step)


def velocity_spectrum(slow_time, cfg: SystemConfig, period: Optional[float] = None,
                      v_axis: Optional[Axis] = None, G_hat: int = 1, rho: float = 1.0,
                      nu: float = 1.0, enhanced: bool = True):
    """
    1-D EMUSIC spectrum over radial velocity.

    ``slow_time`` rows are snapshots, columns are samples spaced ``period``
    apart (one OFDM symbol T_0 by default). The search axis must stay inside
    ±c/(4 f_0 period), where the Doppler phase per sample wraps.
    """
    X = np.atleast_2d(np.asarray(slow_time, dtype=complex))
    if X.shape[1] < 2:
        raise ContractError("Velocity estimation needs at least two slow-time samples")
    period = cfg.T_0 if period is None else period
    v_axis = default_velocity_axis(cfg, period) if v_axis is None else v_axis
    limit = cfg.velocity_limit(period)
    if max(abs(v_axis.start), abs(v_axis.stop)) >= limit:
        raise DomainError(
            f"Velocity search [{v_axis.start:g}, {v_axis.stop:g}] m/s reaches the alias-free "
            f"limit {limit:.2f} m/s for a {period:.3e} s sample period"
        )
    subspace = build_subspace(SnapshotSet(X, "slow"), G_hat, rho, nu, enhanced)
    v = v_axis.values()
    t = period * np.arange(1, X.shape[1] + 1)
    steering = np.exp(2j * np.pi * (2.0 * v[:, None] * cfg.f_0 / cfg.c) * t[None, :])
    return v, pseudospectrum_vectors(subspace, steering)


def estimate_velocity(slow_time, cfg: SystemConfig, period: Optional[float] = None,
                      v_axis: Optional[Axis] = None, G_hat: int = 1, rho: float = 1.0,
                      nu: float = 1.0, enhanced: bool = True) -> float:
    v, spectrum = velocity_spectrum(slow_time, cfg, period, v_axis, G_hat, rho, nu, enhanced)
    return float(v[int(np.argmax(spectrum))])


@dataclass
class DomainPeaks:
    """Per-domain raw estimates of one point (radians, meters); None where no peak was gated."""
    theta_q: List[Optional[float]] = field(default_factory=list)
    phi_q: List[Optional[float]] = field(default_factory=list)
    phi_is: List[Optional[float]] = field(default_factory=list)
    R_is: List[Optional[float]] = field(default_factory=list)


@dataclass
class PointEstimate:
    theta: float
    phi: float
    R: float
    raw: DomainPeaks
    detected: bool = True
    height: float = 0.0

    def in_degrees(self) -> dict:
        return {
            "R_m": self.R,
            "theta_deg": math.degrees(self.theta),
            "phi_deg": math.degrees(self.phi),
            "detected": self.detected,
        }


@dataclass
class Estimate:
    points: List[PointEstimate]
    v_hat: Optional[float] = None

    def detected(self) -> List[PointEstimate]:
        return [p for p in self.points if p.detected]


def _mean(values) -> Optional[float]:
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None


def fuse_point(raw: DomainPeaks, height: float = 0.0) -> PointEstimate:
    """θ̂ averages the subcarrier values, φ̂ both domains together, R̂ the mode values."""
    theta = _mean(raw.theta_q)
    phi = _mean(list(raw.phi_q) + list(raw.phi_is))
    R = _mean(raw.R_is)
    detected = theta is not None and R is not None and _mean(raw.phi_q) is not None
    return PointEstimate(
        theta=theta if theta is not None else float("nan"),
        phi=phi if phi is not None else float("nan"),
        R=R if R is not None else float("nan"),
        raw=raw,
        detected=detected,
        height=height,
    )


def fuse_estimates(per_point: Sequence[DomainPeaks], v_hat: Optional[float] = None,
                   heights: Optional[Sequence[float]] = None) -> Estimate:
    heights = list(heights) if heights is not None else [0.0] * len(per_point)
    return Estimate(points=[fuse_point(raw, h) for raw, h in zip(per_point, heights)], v_hat=v_hat)


@dataclass
class EmusicSettings:
    G_hat: int = 3
    rho: float = 1.0
    nu: float = 1.0
    enhanced: bool = True
    theta_axis: Axis = field(default_factory=lambda: Axis("theta_deg", 0.0, 179.9, 0.1))
    phi_axis: Axis = field(default_factory=lambda: Axis("phi_deg", 0.1, 89.9, 0.1))
    R_axis: Axis = field(default_factory=lambda: Axis("R_m", 5.0, 180.0, 0.25))
    v_axis: Optional[Axis] = None
    phi_window_deg: float = 0.3
    angle_gate_deg: float = 2.0
    n_points: Optional[int] = None
    candidates_per_point: int = 3
    reference_subcarrier: int = 0


@dataclass
class SensingResult:
    estimate: Estimate
    reference_spectrum: Grid2D
    subspace: SubspaceModel
    velocity_axis: np.ndarray
    velocity_spectrum: np.ndarray
    range_spectra: dict = field(default_factory=dict)


def _window(axis: Axis, center: float, half_width: float, lo: float, hi: float) -> Axis:
    start = max(lo, center - half_width)
    stop = min(hi, center + half_width)
    # keep samples on the parent grid
    start = axis.start + math.ceil((start - axis.start) / axis.step - 1e-6) * axis.step
    return Axis(axis.name, start, max(start, stop), axis.step)


def _slow_time_snapshots(H: np.ndarray, valid: np.ndarray) -> np.ndarray:
    cells = np.all(valid, axis=0)
    return H[:, cells].T  # (cells, frames)


def angular_snapshots(H: np.ndarray, valid: np.ndarray, cfg: SystemConfig) -> SnapshotSet:
    """One N_t-mode snapshot per (frame, subcarrier) whose sweep is fully valid."""
    rows = np.all(np.broadcast_to(valid, H.shape), axis=2).reshape(-1)
    return SnapshotSet(H.reshape(-1, cfg.N_t)[rows], "oam")


def select_points(subspace: SubspaceModel, cfg: SystemConfig, geom: UcaGeometry, q: int,
                  candidates: Sequence[Peak], count: int) -> List[Peak]:
    """
    Pick ``count`` of the candidate peaks one at a time.

    Each round scores the remaining candidates by the pseudospectrum of their
    steering vectors with every accepted direction projected out, so a near
    copy of an accepted point (the Bessel pattern repeats almost exactly when
    its argument moves by π) falls behind a weaker but genuinely new point.
    The first pick is the highest peak.
    """
    vectors = [steering_oam(cfg, geom, q, math.radians(p.axis1), math.radians(p.axis2))
               for p in candidates]
    remaining = list(range(len(candidates)))
    chosen: List[int] = []
    basis = np.zeros((cfg.N_t, 0), dtype=complex)
    while remaining and len(chosen) < count:
        projected = np.stack([vectors[i] - basis @ (basis.conj().T @ vectors[i]) for i in remaining])
        scores = pseudospectrum_vectors(subspace, projected)
        best = remaining.pop(int(np.argmax(scores)))
        chosen.append(best)
        basis = linalg.orth(np.column_stack([vectors[i] for i in chosen]))
    return [candidates[i] for i in chosen]


def _estimate_angles(H: np.ndarray, valid: np.ndarray, cfg: SystemConfig, geom: UcaGeometry,
                     settings: EmusicSettings):
    snapshots = angular_snapshots(H, valid, cfg)
    subspace = build_subspace(snapshots, settings.G_hat, settings.rho, settings.nu, settings.enhanced)

    reference = pseudospectrum_oam(subspace, cfg, geom, settings.reference_subcarrier,
                                   settings.theta_axis, settings.phi_axis)
    count = settings.n_points
    if count is None:
        count = mdl_order(subspace.raw_eigen.eigenvalues, snapshots.count)
        logger.info(f"🔍 MDL puts {count} points in the OAM covariance of {snapshots.count} snapshots")
    count = min(count, cfg.N_t - 1)
    if count < 1:
        logger.warning("⚠️  No point stands out of the echo noise")
        return subspace, reference, [], []

    candidates = find_peaks(reference, settings.candidates_per_point * count)
    peaks = select_points(subspace, cfg, geom, settings.reference_subcarrier, candidates, count)
    logger.info(f"🔍 {len(peaks)} of {len(candidates)} angular peaks kept")

    gate = settings.angle_gate_deg
    per_point = [DomainPeaks() for _ in peaks]
    for q in range(cfg.N_f):
        for raw, peak in zip(per_point, peaks):
            th_axis = _window(settings.theta_axis, peak.axis1, gate,
                              settings.theta_axis.start, settings.theta_axis.stop)
            ph_axis = _window(settings.phi_axis, peak.axis2, gate,
                              settings.phi_axis.start, settings.phi_axis.stop)
            local = pseudospectrum_oam(subspace, cfg, geom, q, th_axis, ph_axis)
            r, c = np.unravel_index(int(np.argmax(local.values)), local.values.shape)
            th, ph = local.coordinates(r, c)
            raw.theta_q.append(math.radians(th))
            raw.phi_q.append(math.radians(ph))
    return subspace, reference, peaks, per_point


def _estimate_ranges(H: np.ndarray, cfg: SystemConfig, geom: UcaGeometry, settings: EmusicSettings,
                     per_point: List[DomainPeaks]):
    """Unmix each subcarrier into per-point profiles, then search (φ, R) per mode."""
    n_points = len(per_point)
    angles = [(_mean(raw.theta_q), _mean(raw.phi_q)) for raw in per_point]
    modes = slot_modes(cfg.N_t)
    spectra = {}

    profiles = np.zeros((H.shape[0], cfg.N_f, cfg.N_t, n_points), dtype=complex)
    for q in range(cfg.N_f):
        A = np.stack([steering_oam(cfg, geom, q, th, ph) for th, ph in angles], axis=1)
        coeffs = H[:, q, :] @ np.linalg.pinv(A).T  # (frames, points)
        profiles[:, q] = A[None, :, :] * coeffs[:, None, :]

    for p, raw in enumerate(per_point):
        energy = np.sum(np.abs(profiles[..., p]) ** 2, axis=(0, 1))
        phi_center = math.degrees(angles[p][1])
        phi_axis = _window(settings.phi_axis, phi_center, settings.phi_window_deg,
                           settings.phi_axis.start, settings.phi_axis.stop)
        for i, l in enumerate(modes):
            if energy[i] <= 1e-12 * energy.max():
                raw.phi_is.append(None)
                raw.R_is.append(None)
                continue
            subspace = build_subspace(SnapshotSet(profiles[:, :, i, p], "freq"), 1,
                                      settings.rho, settings.nu, settings.enhanced)
            grid = pseudospectrum_freq(subspace, cfg, geom, int(l), phi_axis, settings.R_axis)
            r, c = np.unravel_index(int(np.argmax(grid.values)), grid.values.shape)
            ph, R = grid.coordinates(r, c)
            raw.phi_is.append(math.radians(ph))
            raw.R_is.append(R)
            if i == len(modes) // 2:
                spectra[p] = grid
    return spectra


def estimate_scene(H: np.ndarray, valid: np.ndarray, cfg: SystemConfig, geom: UcaGeometry,
                   settings: Optional[EmusicSettings] = None) -> SensingResult:
    """
    Full EMUSIC chain over a stack of echo-channel estimates.

    ``H`` and ``valid`` are (frames, N_f, N_t). Velocity comes first from the
    frame-rate slow-time samples and its per-slot Doppler ramp is removed
    before the angular search; ranges follow per detected point.
    """
    settings = settings or EmusicSettings()
    H = np.asarray(H, dtype=complex)
    if H.ndim != 3 or H.shape[1:] != (cfg.N_f, cfg.N_t):
        raise ContractError(f"Echo stack must be (frames, {cfg.N_f}, {cfg.N_t}), got {H.shape}")
    valid = np.broadcast_to(valid, H.shape)

    v_values, v_spec = np.array([]), np.array([])
    v_hat = None
    if H.shape[0] >= 2:
        X = _slow_time_snapshots(H, valid)
        v_values, v_spec = velocity_spectrum(X, cfg, cfg.T_s, settings.v_axis, 1,
                                             settings.rho, settings.nu, settings.enhanced)
        v_hat = float(v_values[int(np.argmax(v_spec))])
        f_d = 2.0 * v_hat * cfg.f_0 / cfg.c
        slots = np.arange(1, cfg.N_t + 1)
        H = H * np.exp(-2j * np.pi * f_d * slots * cfg.T_0)[None, None, :]
        logger.info(f"📊 Radial velocity estimate: {v_hat:+.2f} m/s")
    else:
        logger.warning("⚠️  Single frame: velocity not estimated, no Doppler compensation")

    subspace, reference, peaks, per_point = _estimate_angles(H, valid, cfg, geom, settings)
    spectra = _estimate_ranges(H, cfg, geom, settings, per_point) if per_point else {}
    estimate = fuse_estimates(per_point, v_hat, [p.height for p in peaks])
    logger.info(f"✅ EMUSIC resolved {len(estimate.detected())} of {len(per_point)} peaks")
    return SensingResult(estimate, reference, subspace, v_values, v_spec, spectra)


def half_height_width(profile, axis_values) -> float:
    """
    Width of the main lobe at half its peak height, interpolated between
    samples. A profile that never drops to half height spans the whole axis.
    """
    y = np.asarray(profile, dtype=float)
    x = np.asarray(axis_values, dtype=float)
    peak = int(np.argmax(y))
    half = 0.5 * y[peak]

    def crossing(indices):
        prev = peak
        for i in indices:
            if y[i] < half:
                frac = (y[prev] - half) / (y[prev] - y[i])
                return x[prev] + frac * (x[i] - x[prev])
            prev = i
        return None

    right = crossing(range(peak + 1, y.size))
    left = crossing(range(peak - 1, -1, -1))
    if left is None or right is None:
        return float(x[-1] - x[0])
    return float(right - left)
