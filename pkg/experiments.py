#!/usr/bin/env python3
"""
Scenario model, sensing pipeline and the experiment suite.

A Scenario bundles every configuration section of a run. The pipeline
simulates echo frames at the requested SSNR, runs EMUSIC over them, pairs
the detected points with the scene, rebuilds the jamming channels from the
estimated jammer position and hands them to the weighted-MSE optimizer.
Each experiment fills a ResultBundle with plot-ready tables and documents.
"""

import logging
import math
import sys
import zlib
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from tqdm import tqdm

from emusic import (
    STEERING_KINDS,
    EmusicSettings,
    Estimate,
    PointEstimate,
    SensingResult,
    default_velocity_axis,
    estimate_scene,
    half_height_width,
    pseudospectrum_oam,
    pseudospectrum_vectors,
    reweight_noise_subspace,
    steering_variant,
)
from geometry_channel import ScatterPoint, ScatterScene, SystemConfig, UcaGeometry, build_channel_set, sensing_channel
from numerics import Axis, ContractError, Grid2D, IsacError, find_peaks, hermitian_eig
from optimizer import (
    AoConfig,
    AoResult,
    BeamformerState,
    LinkChannels,
    RateReport,
    empirical_ssnr,
    initial_state,
    mse,
    power_floor,
    rate_report,
    run_ao,
    sensing_power,
    simulate_stream,
    sinr,
)
from waveform import ModeAllocation, allocate_modes, dft_basis, echo_division, qpsk

logger = logging.getLogger(__name__)

EXPERIMENTS = (
    "sensing-accuracy",
    "emusic-vs-music",
    "resolution-vs-Nt",
    "steering-comparison",
    "ao-convergence",
    "jamming-mitigation",
    "full-pipeline",
)

# a second angular peak counts as resolved above this share of the first
RESOLUTION_RATIO = 0.1


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def default_scene() -> ScatterScene:
    """Jammer at (39 m, 10°, 50°) with two neighbouring targets, moving at 3 m/s."""
    deg = math.radians
    return ScatterScene(
        points=(
            ScatterPoint(39.0, deg(10.0), deg(50.0)),
            ScatterPoint(25.0, deg(30.0), deg(38.0)),
            ScatterPoint(18.0, deg(55.0), deg(16.0)),
        ),
        v=3.0,
        jammer_index=0,
    )


@dataclass(frozen=True)
class WaveformSettings:
    sizes: Tuple[int, ...] = (8, 7)
    slot: int = 1
    index_bits: str = "0x0"
    key: str = "0x5eed"


@dataclass(frozen=True)
class SensingSettings:
    gamma_s_db: float = 20.0
    frames: int = 64
    G_hat: int = 3
    rho: float = 1.0
    nu: float = 1.0
    enhanced: bool = True
    theta_step_deg: float = 0.1
    phi_step_deg: float = 0.1
    R_min: float = 5.0
    R_max: float = 180.0
    R_step: float = 0.25
    v_min: Optional[float] = None
    v_max: Optional[float] = None
    v_step: float = 0.05
    phi_window_deg: float = 0.3
    n_points: Optional[int] = None
    angle_gate_deg: float = 2.0
    range_gate_m: float = 3.0

    def velocity_axis(self, cfg: SystemConfig) -> Axis:
        """Search span at the frame rate; unset ends fall just inside the alias-free limit."""
        default = default_velocity_axis(cfg, cfg.T_s, self.v_step)
        start = default.start if self.v_min is None else self.v_min
        stop = default.stop if self.v_max is None else self.v_max
        return Axis("v_mps", start, stop, self.v_step)

    def emusic(self, cfg: SystemConfig, **changes) -> EmusicSettings:
        settings = EmusicSettings(
            G_hat=self.G_hat,
            rho=self.rho,
            nu=self.nu,
            enhanced=self.enhanced,
            theta_axis=Axis("theta_deg", 0.0, 180.0 - self.theta_step_deg, self.theta_step_deg),
            phi_axis=Axis("phi_deg", self.phi_step_deg, 90.0 - self.phi_step_deg, self.phi_step_deg),
            R_axis=Axis("R_m", self.R_min, self.R_max, self.R_step),
            v_axis=self.velocity_axis(cfg),
            phi_window_deg=self.phi_window_deg,
            angle_gate_deg=self.angle_gate_deg,
            n_points=self.n_points,
        )
        return replace(settings, **changes)


@dataclass(frozen=True)
class LinkBudget:
    P_t_dbm: float = 30.0
    noise_dbm: float = -90.0
    echo_noise_dbm: float = -150.0
    jnr_db: float = 10.0

    @property
    def P_t(self) -> float:
        return dbm_to_watts(self.P_t_dbm)

    @property
    def sigma2(self) -> float:
        return dbm_to_watts(self.noise_dbm)

    @property
    def sigma2_echo(self) -> float:
        return dbm_to_watts(self.echo_noise_dbm)


@dataclass(frozen=True)
class ExperimentSettings:
    G_hat_values: Tuple[int, ...] = (1, 2)
    N_t_values: Tuple[int, ...] = (4, 8, 16)
    resolution_thetas_deg: Tuple[float, ...] = (15.8, 16.6)
    resolution_R: float = 25.0
    resolution_phi_deg: float = 38.0
    resolution_frames: int = 131_072
    steering_phi_deg: float = 10.0
    steering_theta_deg: float = 30.0
    steering_step_deg: float = 0.1
    power_sweep_dbm: Tuple[float, ...] = (20.0, 25.0, 30.0, 35.0, 40.0)
    low_ssnr_db: float = 5.0
    mc_draws: int = 200_000
    ssnr_draws: int = 10_000
    oracle: bool = False


@dataclass(frozen=True)
class Scenario:
    system: SystemConfig = field(default_factory=SystemConfig)
    geometry: UcaGeometry = field(default_factory=UcaGeometry)
    scene: ScatterScene = field(default_factory=default_scene)
    waveform: WaveformSettings = field(default_factory=WaveformSettings)
    sensing: SensingSettings = field(default_factory=SensingSettings)
    link: LinkBudget = field(default_factory=LinkBudget)
    optimizer: AoConfig = field(default_factory=AoConfig)
    experiments: ExperimentSettings = field(default_factory=ExperimentSettings)
    experiment: str = "full-pipeline"
    seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ContractError(f"Unknown experiment '{self.experiment}', expected one of {EXPERIMENTS}")
        if len(self.waveform.sizes) != self.geometry.num_users:
            raise ContractError(
                f"{len(self.waveform.sizes)} mode-set sizes for {self.geometry.num_users} users"
            )

    @property
    def K(self) -> int:
        return self.geometry.num_users

    def with_overrides(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def ao_config(self, **changes) -> AoConfig:
        config = replace(self.optimizer, P_t=self.link.P_t, gamma_s=db_to_linear(self.sensing.gamma_s_db))
        return replace(config, **changes)

    def allocation(self) -> ModeAllocation:
        w = self.waveform
        return allocate_modes(self.system.N_t, self.K, w.sizes, w.slot, w.index_bits, w.key)


@dataclass
class Artifact:
    name: str
    kind: str      # "csv" or "json"
    payload: Any   # (header, rows) for csv, a plain dict for json


def table(name: str, header: Sequence[str], rows) -> Artifact:
    return Artifact(name, "csv", (list(header), [list(r) for r in rows]))


def grid_table(name: str, grid: Grid2D) -> Artifact:
    """Matrix CSV: the header names both axes and lists axis2, each row starts with its axis1 value."""
    header = [f"{grid.axis1.name}\\{grid.axis2.name}"] + [float(v) for v in grid.axis2.values()]
    rows = [[float(a)] + row.tolist() for a, row in zip(grid.axis1.values(), grid.values)]
    return Artifact(name, "csv", (header, rows))


def document(name: str, data: Dict[str, Any]) -> Artifact:
    return Artifact(name, "json", data)


@dataclass
class ResultBundle:
    experiment: str
    artifacts: List[Artifact] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    resources: Dict[str, Any] = field(default_factory=dict)

    def add(self, artifact: Artifact):
        if any(a.name == artifact.name for a in self.artifacts):
            raise ContractError(f"Duplicate artifact '{artifact.name}' in {self.experiment}")
        self.artifacts.append(artifact)


class RngStreams:
    """Independent generators per label, all derived from one run seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def get(self, label: str) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, zlib.crc32(label.encode())]))


def _progress(items, desc: str):
    return tqdm(items, desc=desc, disable=not sys.stderr.isatty(), leave=False)


def _complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    return math.sqrt(variance / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_echoes(cfg: SystemConfig, geom: UcaGeometry, scene: ScatterScene, gamma_s_db: float,
                    sigma2: float, rng: RngStreams, frames: int, tag: str = "echo"):
    """
    Echo-channel estimates of successive sensing frames, shaped (frames, N_f, N_t).

    Each frame holds one sensing power per subcarrier across its N_t-slot
    sweep, sized so the sweep-average SSNR is γ_s; the echo noise therefore
    stays white across modes. QPSK references are sent, receiver noise is
    added and the reference is divided back out.
    """
    if frames < 1:
        raise ContractError("Need at least one sensing frame")
    gamma = db_to_linear(gamma_s_db)
    data_rng = rng.get(f"{tag}/data")
    noise_rng = rng.get(f"{tag}/noise")
    rcs_rng = rng.get(f"{tag}/rcs")
    base = np.array([p.chi for p in scene.points], dtype=complex)

    H = np.zeros((frames, cfg.N_f, cfg.N_t), dtype=complex)
    valid = np.zeros(H.shape, dtype=bool)
    for f in range(frames):
        chi = base * _complex_normal(rcs_rng, scene.G) if scene.rcs_fluctuation else base
        H_true = sensing_channel(cfg, geom, scene, frame=f, chi=chi).H_s
        sweep_gain = np.sqrt(np.mean(np.abs(H_true) ** 2, axis=1, keepdims=True))
        P = np.broadcast_to(sensing_power(sweep_gain, gamma, sigma2), H_true.shape)
        S = np.sqrt(P) * qpsk(data_rng, H_true.shape)
        Y = H_true * S + _complex_normal(noise_rng, H_true.shape, sigma2)
        echo = echo_division(Y, S)
        H[f], valid[f] = echo.H, echo.valid
    return H, valid


def run_sensing(scn: Scenario, rng: RngStreams, gamma_s_db: Optional[float] = None,
                settings: Optional[EmusicSettings] = None, tag: str = "echo") -> SensingResult:
    gamma_s_db = scn.sensing.gamma_s_db if gamma_s_db is None else gamma_s_db
    H, valid = simulate_echoes(scn.system, scn.geometry, scn.scene, gamma_s_db,
                               scn.link.sigma2_echo, rng, scn.sensing.frames, tag)
    return estimate_scene(H, valid, scn.system, scn.geometry, settings or scn.sensing.emusic(scn.system))


def _angle_gap(a_deg: float, b_deg: float, period: float = 180.0) -> float:
    d = abs(a_deg - b_deg) % period
    return min(d, period - d)


def _point_errors(truth: ScatterPoint, est: PointEstimate) -> Dict[str, float]:
    return {
        "theta_deg": _angle_gap(math.degrees(est.theta), math.degrees(truth.theta)),
        "phi_deg": abs(math.degrees(est.phi) - math.degrees(truth.phi)),
        "R_m": abs(est.R - truth.R),
    }


def associate(estimate: Estimate, scene: ScatterScene, angle_gate: float, range_gate: float):
    """
    Pair detected points with scene points by minimum normalized distance.

    Returns one row per scene point plus the matched PointEstimate per
    scene index. A scene point only counts as matched when its assigned
    estimate lies inside every gate; rows still report the nearest assignment
    so misses can be inspected. Azimuths compare modulo 180° since the OAM
    spectrum repeats every half turn.
    """
    found = estimate.detected()
    assigned: Dict[int, PointEstimate] = {}
    if found:
        cost = np.array([[sum(e / s for e, s in zip(_point_errors(t, f).values(),
                                                     (angle_gate, angle_gate, range_gate)))
                          for f in found] for t in scene.points])
        for g, j in zip(*linear_sum_assignment(cost)):
            assigned[int(g)] = found[int(j)]

    rows = []
    matched: Dict[int, PointEstimate] = {}
    for g, truth in enumerate(scene.points):
        row = {
            "point": g,
            "jammer": g == scene.jammer_index,
            "truth": {"R_m": truth.R, "theta_deg": math.degrees(truth.theta), "phi_deg": math.degrees(truth.phi)},
            "estimate": None,
            "errors": None,
            "within_gates": False,
        }
        if g in assigned:
            errors = _point_errors(truth, assigned[g])
            row["estimate"] = assigned[g].in_degrees()
            row["errors"] = errors
            row["within_gates"] = (errors["theta_deg"] <= angle_gate and errors["phi_deg"] <= angle_gate
                                   and errors["R_m"] <= range_gate)
            if row["within_gates"]:
                matched[g] = assigned[g]
        rows.append(row)
    return rows, matched


def jamming_power(H_J: np.ndarray, link: LinkBudget) -> float:
    """Per-element jamming power giving the configured JNR at the first user."""
    gain = float(np.mean(np.sum(np.abs(H_J[0]) ** 2, axis=-1)))
    if gain <= 0:
        raise ContractError("First user sees no jamming path")
    return db_to_linear(link.jnr_db) * link.sigma2 / gain


def build_links(scn: Scenario, jammer_position=None) -> Tuple[LinkChannels, LinkChannels]:
    """(design, truth) link channels; the design's jamming paths start at ``jammer_position``."""
    channels = build_channel_set(scn.system, scn.geometry, scn.scene)
    truth = LinkChannels(H=channels.H_comm, H_J=channels.H_jam,
                         P_J=jamming_power(channels.H_jam, scn.link), sigma2=scn.link.sigma2,
                         H_s=channels.H_s, sigma2_s=scn.link.sigma2_echo)
    if jammer_position is None:
        return truth, truth
    rebuilt = build_channel_set(scn.system, scn.geometry, scn.scene, jammer_position)
    return truth.with_jamming(rebuilt.H_jam), truth


def _estimated_jammer(scn: Scenario, matched: Dict[int, PointEstimate]) -> Optional[ScatterPoint]:
    est = matched.get(scn.scene.jammer_index)
    if est is None:
        logger.warning("⚠️  Jammer not detected; optimizing without jamming CSI")
        return None
    return ScatterPoint(est.R, est.theta, est.phi)


def sensed_links(scn: Scenario, rng: RngStreams, gamma_s_db: Optional[float] = None, tag: str = "echo"):
    """Sense the scene, then build design channels from the estimated jammer position."""
    result = run_sensing(scn, rng, gamma_s_db, tag=tag)
    rows, matched = associate(result.estimate, scn.scene, scn.sensing.angle_gate_deg, scn.sensing.range_gate_m)
    jammer = _estimated_jammer(scn, matched)
    design, truth = build_links(scn, jammer)
    return result, rows, jammer, design, truth


def _estimates_document(scn: Scenario, result: SensingResult, rows) -> Dict[str, Any]:
    return {
        "v_true_mps": scn.scene.v,
        "v_hat_mps": result.estimate.v_hat,
        "detected": len(result.estimate.detected()),
        "points": rows,
    }


def _trace_table(name: str, result: AoResult) -> Artifact:
    return table(name, ["iteration", "objective", "asr"],
                 [(r.iteration, r.objective, r.asr) for r in result.trace])


def _ao_summary(result: AoResult, evaluated: RateReport) -> Dict[str, Any]:
    return {
        "iterations": result.iterations,
        "converged": result.converged,
        "design_asr": result.report.asr,
        "true_asr": evaluated.asr,
        "index_bits": evaluated.index_bits,
        "duality_gap": result.duality_gap,
        "complexity": result.complexity,
    }


def optimize(design: LinkChannels, truth: LinkChannels, alloc: ModeAllocation, config: AoConfig):
    """Run the AO on the design channels and score its beamformers on the true ones."""
    result = run_ao(design, alloc, config)
    evaluated = rate_report(result.state, truth, alloc, True, config.index_term)
    return result, evaluated


def identity_report(truth: LinkChannels, alloc: ModeAllocation, config: AoConfig) -> RateReport:
    """Fixed F^H beamformers with equal stream powers."""
    state = initial_state(truth, alloc, config)
    return rate_report(state, truth, alloc, True, config.index_term)


def constraint_report(state: BeamformerState, config: AoConfig, truth: LinkChannels, alloc: ModeAllocation,
                      rng: np.random.Generator, draws: int) -> Dict[str, float]:
    N_t = truth.N_t
    P_sensing = float(state.P_s.sum())
    stream_powers = np.array([state.P[k, :, r] for k, r in state.streams])
    row = dft_basis(N_t).mode_index(alloc.sensing_mode)
    rx_norms = np.linalg.norm(state.W_rx, axis=2)
    tx_norms = np.linalg.norm(state.W_tx, axis=2)
    return {
        "P_t": config.P_t,
        "total_power": state.total_power(),
        "sensing_power": P_sensing,
        "power_floor": power_floor(config.P_t, P_sensing, N_t),
        "min_stream_power": float(stream_powers.min()),
        "max_rx_norm_deviation": float(np.max(np.abs(rx_norms - 1.0))),
        "max_tx_column_norm": float(tx_norms.max()),
        "target_ssnr_db": 10.0 * math.log10(config.gamma_s) if config.gamma_s > 0 else float("-inf"),
        "empirical_ssnr_db": empirical_ssnr(truth.H_s[:, alloc.slot - 1], state.P_s[:, row],
                                            truth.echo_noise, rng, draws),
    }


def _sensing_accuracy(scn: Scenario, rng: RngStreams, bundle: ResultBundle):
    result = run_sensing(scn, rng)
    rows, _ = associate(result.estimate, scn.scene, scn.sensing.angle_gate_deg, scn.sensing.range_gate_m)
    bundle.add(document("estimates", _estimates_document(scn, result, rows)))
    bundle.add(grid_table("oam_spectrum", result.reference_spectrum))
    bundle.add(table("velocity_spectrum", ["v_mps", "spectrum"],
                     zip(result.velocity_axis.tolist(), result.velocity_spectrum.tolist())))
    for p, grid in sorted(result.range_spectra.items()):
        bundle.add(grid_table(f"range_spectrum_{p}", grid))


def _emusic_vs_music(scn: Scenario, rng: RngStreams, bundle: ResultBundle):
    H, valid = simulate_echoes(scn.system, scn.geometry, scn.scene, scn.sensing.gamma_s_db,
                               scn.link.sigma2_echo, rng, scn.sensing.frames)
    runs = []
    combos = [(G_hat, enhanced) for G_hat in scn.experiments.G_hat_values for enhanced in (False, True)]
    for G_hat, enhanced in _progress(combos, "EMUSIC vs MUSIC"):
        method = "emusic" if enhanced else "music"
        settings = scn.sensing.emusic(scn.system, G_hat=G_hat, enhanced=enhanced)
        result = estimate_scene(H, valid, scn.system, scn.geometry, settings)
        rows, _ = associate(result.estimate, scn.scene, scn.sensing.angle_gate_deg, scn.sensing.range_gate_m)
        missed = [r["point"] for r in rows if not r["within_gates"]]
        runs.append({
            "method": method,
            "G_hat": G_hat,
            "missed": missed,
            "jammer_found": scn.scene.jammer_index not in missed,
            "points": rows,
        })
        bundle.add(grid_table(f"oam_spectrum_{method}_G{G_hat}", result.reference_spectrum))
        logger.info(f"📊 {method.upper()} Ĝ={G_hat}: missed points {missed or 'none'}")
    bundle.add(document("comparison", {"runs": runs}))


def fluctuating_covariance(cfg: SystemConfig, geom: UcaGeometry, scene: ScatterScene, gamma_s_db: float,
                           sigma2: float, rng: RngStreams, frames: int, tag: str = "fluct",
                           batch: int = 1024) -> Tuple[np.ndarray, int]:
    """
    OAM-domain sample covariance over ``frames`` echo frames whose cross
    sections redraw every frame, accumulated in batches.

    Points share one Doppler phase per frame, which cancels in h h^H, so each
    frame is the per-point echo patterns mixed by fresh χ draws. Sweep power,
    QPSK references, noise and echo division follow ``simulate_echoes``.
    Returns the covariance and its snapshot count.
    """
    if frames < 1:
        raise ContractError("Need at least one sensing frame")
    gamma = db_to_linear(gamma_s_db)
    data_rng = rng.get(f"{tag}/data")
    noise_rng = rng.get(f"{tag}/noise")
    rcs_rng = rng.get(f"{tag}/rcs")
    base = np.array([p.chi for p in scene.points], dtype=complex)
    patterns = np.stack([sensing_channel(cfg, geom, scene, chi=np.eye(scene.G)[g]).H_s
                         for g in range(scene.G)])  # (G, N_f, N_t)

    R = np.zeros((cfg.N_t, cfg.N_t), dtype=complex)
    count = 0
    for start in range(0, frames, batch):
        n = min(batch, frames - start)
        chi = base[None, :] * _complex_normal(rcs_rng, (n, scene.G))
        H_true = np.einsum("bg,gqi->bqi", chi, patterns)
        sweep_gain = np.sqrt(np.mean(np.abs(H_true) ** 2, axis=2, keepdims=True))
        P = np.broadcast_to(sensing_power(sweep_gain, gamma, sigma2), H_true.shape)
        S = np.sqrt(P) * qpsk(data_rng, H_true.shape)
        echo = echo_division(H_true * S + _complex_normal(noise_rng, H_true.shape, sigma2), S)
        X = echo.H[np.all(echo.valid, axis=2)]
        R += X.T @ X.conj()
        count += X.shape[0]
    if count == 0:
        raise ContractError("No valid echo sweep to estimate a covariance from")
    R /= count
    return 0.5 * (R + R.conj().T), count


def _resolution_vs_nt(scn: Scenario, rng: RngStreams, bundle: ResultBundle):
    ex = scn.experiments
    phi = math.radians(ex.resolution_phi_deg)
    thetas = sorted(ex.resolution_thetas_deg)
    theta_axis = Axis("theta_deg", max(0.0, thetas[0] - 6.0), min(179.95, thetas[-1] + 6.0), 0.05)
    phi_axis = Axis("phi_deg", ex.resolution_phi_deg - 2.0, ex.resolution_phi_deg + 2.0, 0.1)
    phi_col = int(np.argmin(np.abs(phi_axis.values() - ex.resolution_phi_deg)))
    # equal-range points would echo coherently without the per-frame χ redraw
    scene = ScatterScene(points=tuple(ScatterPoint(ex.resolution_R, math.radians(t), phi) for t in thetas),
                         v=scn.scene.v, rcs_fluctuation=True)

    profiles, report = {}, {}
    for N_t in _progress(ex.N_t_values, "Resolution sweep"):
        cfg = replace(scn.system, N_t=N_t)
        R, count = fluctuating_covariance(cfg, scn.geometry, scene, scn.sensing.gamma_s_db,
                                          scn.link.sigma2_echo, rng, ex.resolution_frames,
                                          tag=f"resolution/{N_t}")
        subspace = reweight_noise_subspace(hermitian_eig(R), min(scene.G, N_t - 1),
                                           scn.sensing.rho, scn.sensing.nu, scn.sensing.enhanced)
        grid = pseudospectrum_oam(subspace, cfg, scn.geometry, 0, theta_axis, phi_axis)
        peaks = find_peaks(grid, max_count=4)
        distinct = [p for p in peaks if p.height >= RESOLUTION_RATIO * peaks[0].height] if peaks else []
        profile = grid.values[:, phi_col] / grid.values[:, phi_col].max()
        profiles[N_t] = profile
        report[str(N_t)] = {
            "snapshots": count,
            "peaks": [{"theta_deg": p.axis1, "phi_deg": p.axis2, "relative_height": p.height / peaks[0].height}
                      for p in distinct],
            "resolved": len(distinct) >= 2,
            "half_height_width_deg": half_height_width(profile, theta_axis.values()),
        }
        logger.info(f"📊 N_t={N_t}: {len(distinct)} distinct peak(s) between {thetas[0]}° and {thetas[-1]}°")

    header = ["theta_deg"] + [f"N_t={n}" for n in profiles]
    columns = [theta_axis.values()] + list(profiles.values())
    bundle.add(table("theta_profiles", header, np.column_stack(columns).tolist()))
    bundle.add(document("resolution", {"targets_deg": thetas, "phi_deg": ex.resolution_phi_deg, "N_t": report}))


def beampattern(kind: str, cfg: SystemConfig, geom: UcaGeometry, theta0: float, phi: float,
                thetas: np.ndarray) -> np.ndarray:
    """|â(θ)^H â(θ0)|² between unit-normalized steering vectors."""
    A = np.stack([steering_variant(kind, cfg, geom, 0, th, phi) for th in thetas])
    a0 = steering_variant(kind, cfg, geom, 0, theta0, phi)
    norms = np.linalg.norm(A, axis=1) * np.linalg.norm(a0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(norms > 0, np.abs(A.conj() @ a0) ** 2 / np.where(norms > 0, norms, 1.0) ** 2, 0.0)


def _steering_comparison(scn: Scenario, rng: RngStreams, bundle: ResultBundle):
    cfg, geom, ex = scn.system, scn.geometry, scn.experiments
    phi = math.radians(ex.steering_phi_deg)
    theta0 = math.radians(ex.steering_theta_deg)
    axis = Axis("theta_deg", 0.0, 180.0 - ex.steering_step_deg, ex.steering_step_deg)
    thetas = np.radians(axis.values())
    gamma = db_to_linear(scn.sensing.gamma_s_db)

    patterns, spectra, widths = {}, {}, {}
    for kind in STEERING_KINDS:
        pattern = beampattern(kind, cfg, geom, theta0, phi, thetas)
        a0 = steering_variant(kind, cfg, geom, 0, theta0, phi)
        dim = a0.size
        R = np.outer(a0, a0.conj()) + (np.vdot(a0, a0).real / (dim * gamma)) * np.eye(dim)
        subspace = reweight_noise_subspace(hermitian_eig(R), 1, scn.sensing.rho, scn.sensing.nu,
                                           scn.sensing.enhanced)
        A = np.stack([steering_variant(kind, cfg, geom, 0, th, phi) for th in thetas])
        spectrum = pseudospectrum_vectors(subspace, A)
        spectrum = spectrum / spectrum.max()
        patterns[kind], spectra[kind] = pattern, spectrum
        widths[kind] = {
            "beampattern_half_height_width_deg": half_height_width(pattern, axis.values()),
            "spectrum_half_height_width_deg": half_height_width(spectrum, axis.values()),
            "beampattern_ripple": float(pattern.max() / max(pattern.min(), 1e-300) - 1.0),
        }
        logger.info(f"📊 {kind}: beampattern width {widths[kind]['beampattern_half_height_width_deg']:.1f}°")

    header = ["theta_deg"] + list(STEERING_KINDS)
    bundle.add(table("beampatterns", header,
                     np.column_stack([axis.values()] + [patterns[k] for k in STEERING_KINDS]).tolist()))
    bundle.add(table("pseudospectra", header,
                     np.column_stack([axis.values()] + [spectra[k] for k in STEERING_KINDS]).tolist()))
    bundle.add(document("widths", {"theta0_deg": ex.steering_theta_deg, "phi_deg": ex.steering_phi_deg,
                                   "kinds": widths}))


def baseline_configs(scn: Scenario, **changes) -> Dict[str, AoConfig]:
    base = scn.ao_config(**changes)
    return {
        "proposed": replace(base, label="proposed"),
        "no-mh": replace(base, index_term=False, label="no-mh"),
        "no-sensing": replace(base, use_jamming_csi=False, label="no-sensing"),
        "beamforming-only": replace(base, optimize_power=False, label="beamforming-only"),
        "power-only": replace(base, optimize_rx=False, optimize_tx=False, label="power-only"),
    }


def _ao_convergence(scn: Scenario, rng: RngStreams, bundle: ResultBundle):
    alloc = scn.allocation()
    _, _, jammer, design, truth = sensed_links(scn, rng)
    low_db = scn.experiments.low_ssnr_db
    _, _, jammer_low, design_low, _ = sensed_links(scn, rng, low_db, tag="echo-low")

    configs = baseline_configs(scn)
    runs = {
        "proposed": (design, replace(configs["proposed"], use_jamming_csi=jammer is not None)),
        "no-mh": (design, replace(configs["no-mh"], use_jamming_csi=jammer is not None)),
        "no-sensing": (truth, configs["no-sensing"]),
        "low-ssnr": (design_low, scn.ao_config(gamma_s=db_to_linear(low_db), label="low-ssnr",
                                               use_jamming_csi=jammer_low is not None)),
    }
    summary = {}
    for name, (channels, config) in _progress(list(runs.items()), "AO schemes"):
        result, evaluated = optimize(channels, truth, alloc, config)
        bundle.add(_trace_table(f"trace_{name}", result))
        summary[name] = _ao_summary(result, evaluated)
    bundle.add(document("summary", summary))


def _jamming_mitigation(scn: Scenario, rng: RngStreams, bundle: ResultBundle):
    alloc = scn.allocation()
    _, _, jammer, design, truth = sensed_links(scn, rng)
    schemes = ("proposed", "no-sensing", "beamforming-only", "power-only")
    rows = []
    for P_dbm in _progress(scn.experiments.power_sweep_dbm, "Power sweep"):
        configs = baseline_configs(scn, P_t=dbm_to_watts(P_dbm))
        row = [P_dbm]
        for name in schemes:
            config = configs[name]
            channels = truth if name == "no-sensing" else design
            if name != "no-sensing":
                config = replace(config, use_jamming_csi=jammer is not None)
            _, evaluated = optimize(channels, truth, alloc, config)
            row.append(evaluated.asr)
        row.append(identity_report(truth, alloc, configs["proposed"]).asr)
        rows.append(row)
        logger.info(f"📊 P_t={P_dbm:g} dBm: " + ", ".join(f"{n}={v:.3f}" for n, v in zip(schemes + ("identity",), row[1:])))
    header = ["P_t_dbm"] + [n.replace("-", "_") for n in schemes] + ["identity"]
    bundle.add(table("asr_vs_power", header, rows))


def link_checks(state: BeamformerState, truth: LinkChannels, rng: RngStreams, draws: int) -> List[Dict[str, Any]]:
    """Closed-form against Monte-Carlo MSE and SINR for the first stream of every user on subcarrier 0."""
    checks = []
    for k, rows in enumerate(state.rows):
        if not rows:
            continue
        row = rows[0]
        mc_mse, mc_sinr = simulate_stream(state, truth, k, 0, row, rng.get(f"link-check/{k}"), draws)
        checks.append({
            "user": k,
            "row": row,
            "mse": mse(state, truth, k, 0, row),
            "mc_mse": mc_mse,
            "sinr": sinr(state, truth, k, 0, row),
            "mc_sinr": mc_sinr,
        })
    return checks


def _allocation_document(alloc: ModeAllocation, state: BeamformerState) -> Dict[str, Any]:
    basis = dft_basis(state.W_tx.shape[2])
    users = []
    for k, modes in enumerate(alloc.user_modes):
        users.append({
            "user": k,
            "modes": list(modes),
            "power_per_mode": [float(state.P[k, :, basis.mode_index(l)].sum()) for l in modes],
        })
    return {
        "slot": alloc.slot,
        "sensing_mode": alloc.sensing_mode,
        "sensing_power": float(state.P_s.sum()),
        "users": users,
    }


def _full_pipeline(scn: Scenario, rng: RngStreams, bundle: ResultBundle):
    alloc = scn.allocation()
    result, rows, jammer, design, truth = sensed_links(scn, rng)
    oracle = scn.experiments.oracle
    if oracle:
        jammer = scn.scene.jammer
        design, truth = build_links(scn, jammer)
    bundle.metadata["oracle"] = oracle
    bundle.metadata["jammer_source"] = "truth" if oracle else ("estimate" if jammer is not None else "none")

    config = scn.ao_config(use_jamming_csi=jammer is not None)
    ao, evaluated = optimize(design, truth, alloc, config)
    bundle.add(document("estimates", _estimates_document(scn, result, rows)))
    bundle.add(_trace_table("trace", ao))
    bundle.add(document("allocation", _allocation_document(alloc, ao.state)))
    summary = _ao_summary(ao, evaluated)
    summary["jammer_position"] = None if jammer is None else {
        "R_m": jammer.R, "theta_deg": math.degrees(jammer.theta), "phi_deg": math.degrees(jammer.phi)}
    summary["identity_asr"] = identity_report(truth, alloc, config).asr
    summary["constraints"] = constraint_report(ao.state, config, truth, alloc, rng.get("ssnr-check"),
                                               scn.experiments.ssnr_draws)
    summary["link_checks"] = link_checks(ao.state, truth, rng, scn.experiments.mc_draws)
    bundle.add(document("summary", summary))
    logger.info(f"✅ Full pipeline ASR {evaluated.asr:.4f} bit/s/Hz (identity {summary['identity_asr']:.4f})")


_RUNNERS: Dict[str, Callable[[Scenario, RngStreams, ResultBundle], None]] = {
    "sensing-accuracy": _sensing_accuracy,
    "emusic-vs-music": _emusic_vs_music,
    "resolution-vs-Nt": _resolution_vs_nt,
    "steering-comparison": _steering_comparison,
    "ao-convergence": _ao_convergence,
    "jamming-mitigation": _jamming_mitigation,
    "full-pipeline": _full_pipeline,
}


def run_experiment(scn: Scenario, experiment: Optional[str] = None) -> ResultBundle:
    """Run one experiment of the suite and collect its artifacts."""
    name = experiment or scn.experiment
    runner = _RUNNERS.get(name)
    if runner is None:
        raise ContractError(f"Unknown experiment '{name}', expected one of {EXPERIMENTS}")
    bundle = ResultBundle(name, metadata={"experiment": name, "seed": scn.seed})
    logger.info(f"🚀 Running experiment '{name}' with seed {scn.seed}")
    try:
        runner(scn, RngStreams(scn.seed), bundle)
    except IsacError as e:
        e.args = (f"[{name}] {e}",) + e.args[1:]
        raise
    logger.info(f"✅ Experiment '{name}' produced {len(bundle.artifacts)} artifacts")
    return bundle
