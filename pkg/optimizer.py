#!/usr/bin/env python3
"""
Weighted-MMSE alternating optimization of the OAM ISAC downlink.

Each user stream is one OAM mode on one subcarrier. Beamformers are held in
the mode basis: column n of W_tx[k, q] is the precoder of DFT row n and
column n of W_rx[k, q] its combiner, so the identity beamformers of a plain
IDFT/DFT link are F^H. Powers are per-stream powers (amplitude √p).

The loop cycles weights → receive beamformers → transmit beamformers →
powers. Every block solves its subproblem exactly, so the weighted-MSE
objective Σ (w ε − ln w) cannot increase; an increase is treated as a bug.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from numerics import ContractError, IsacError, bisect, get_executor, hermitian_eig
from waveform import ModeAllocation, count_mode_combinations, dft_basis

logger = logging.getLogger(__name__)

MSE_FLOOR = 1e-12
COND_LIMIT = 1e12
REGULARIZATION = 1e-10
ZETA_CEILING = 2.0 ** 60
BISECTION_STEPS = 48
NULL_LEAKAGE = 1e-20


class InfeasibleError(IsacError):
    """Power budget or dual bracket cannot satisfy the constraints."""


class NonMonotoneError(IsacError):
    """A block update increased the weighted-MSE objective."""


@dataclass
class LinkChannels:
    """Channels the optimizer designs against (or is evaluated on)."""
    H: np.ndarray            # (K, N_f, N_t, N_t) comm channels
    H_J: np.ndarray          # (K, N_f, N_t, N_J) jamming channels
    P_J: float               # jamming power per jammer element and subcarrier
    sigma2: float            # receiver noise variance
    H_s: Optional[np.ndarray] = None  # (N_f, N_t) sensing channel
    sigma2_s: Optional[float] = None  # echo noise variance, defaults to sigma2

    @property
    def echo_noise(self) -> float:
        return self.sigma2 if self.sigma2_s is None else self.sigma2_s

    @property
    def K(self) -> int:
        return int(self.H.shape[0])

    @property
    def N_f(self) -> int:
        return int(self.H.shape[1])

    @property
    def N_t(self) -> int:
        return int(self.H.shape[2])

    def with_jamming(self, H_J: np.ndarray) -> "LinkChannels":
        return replace(self, H_J=H_J)


@dataclass
class AoConfig:
    P_t: float = 1.0
    gamma_s: float = 100.0
    tol: float = 1e-4
    max_iter: int = 100
    optimize_rx: bool = True
    optimize_tx: bool = True
    optimize_power: bool = True
    use_jamming_csi: bool = True
    index_term: bool = True
    monotone_tol: float = 1e-8
    label: str = "proposed"


@dataclass
class BeamformerState:
    W_tx: np.ndarray       # (K, N_f, N_t, N_t)
    W_rx: np.ndarray       # (K, N_f, N_t, N_t)
    P: np.ndarray          # (K, N_f, N_t), zero off each user's modes
    P_s: np.ndarray        # (N_f, N_t), zero off the sensing mode
    weights: np.ndarray    # (K, N_f, N_t)
    zeta: np.ndarray       # (K, N_f, N_t)
    eta: float
    sigma2: float
    rows: Tuple[Tuple[int, ...], ...]

    @property
    def streams(self) -> List[Tuple[int, int]]:
        return [(k, r) for k, rows in enumerate(self.rows) for r in rows]

    @property
    def N_f(self) -> int:
        return int(self.P.shape[1])

    def copy(self) -> "BeamformerState":
        return BeamformerState(self.W_tx.copy(), self.W_rx.copy(), self.P.copy(), self.P_s.copy(),
                               self.weights.copy(), self.zeta.copy(), self.eta, self.sigma2, self.rows)

    def total_power(self) -> float:
        return float(self.P.sum() + self.P_s.sum())


@dataclass
class RateReport:
    sinr: np.ndarray       # (K, N_f, N_t)
    mse: np.ndarray        # (K, N_f, N_t)
    rate_bits: float       # Σ log2(1 + γ)
    index_bits: float      # log2 Π C_n
    asr: float
    objective: float


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    asr: float


@dataclass
class AoResult:
    state: BeamformerState
    trace: List[IterationRecord]
    report: RateReport
    converged: bool
    duality_gap: float
    complexity: Dict[str, int] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.trace)


def user_rows(alloc: ModeAllocation, N_t: int) -> Tuple[Tuple[int, ...], ...]:
    basis = dft_basis(N_t)
    return tuple(tuple(basis.mode_index(l) for l in modes) for modes in alloc.user_modes)


def _solve(C: np.ndarray, B: np.ndarray) -> np.ndarray:
    """C⁻¹B for Hermitian C, diagonally loaded when badly conditioned."""
    if np.linalg.cond(C) > COND_LIMIT:
        dim = C.shape[0]
        C = C + REGULARIZATION * np.real(np.trace(C)) / dim * np.eye(dim)
        logger.debug("🔍 Regularized an ill-conditioned receive covariance")
    return linalg.solve(C, B, assume_a="her")


def _precoders(state: BeamformerState, q: int):
    streams = state.streams
    T = np.stack([state.W_tx[k, q][:, r] for k, r in streams], axis=1)
    amps = np.sqrt(np.array([state.P[k, q, r] for k, r in streams]))
    return streams, T, amps


def _jamming_cov(ch: LinkChannels, k: int, q: int, include_jamming: bool) -> np.ndarray:
    if not include_jamming or ch.P_J == 0:
        return np.zeros((ch.N_t, ch.N_t), dtype=complex)
    HJ = ch.H_J[k, q]
    return ch.P_J * HJ @ HJ.conj().T


def receive_covariance(state: BeamformerState, ch: LinkChannels, k: int, q: int,
                       include_jamming: bool = True) -> np.ndarray:
    """Signal-plus-interference-plus-jamming-plus-noise covariance at user k."""
    _, T, amps = _precoders(state, q)
    E = ch.H[k, q] @ T * amps[None, :]
    return E @ E.conj().T + _jamming_cov(ch, k, q, include_jamming) + ch.sigma2 * np.eye(ch.N_t)


def _terms_at(state: BeamformerState, ch: LinkChannels, q: int, include_jamming: bool):
    """Signal amplitude r, interference, jamming and noise power of every stream on q."""
    streams, T, amps = _precoders(state, q)
    S = len(streams)
    r = np.zeros(S, dtype=complex)
    interference = np.zeros(S)
    jam = np.zeros(S)
    noise = np.zeros(S)
    for k, rows in enumerate(state.rows):
        if not rows:
            continue
        idx = [i for i, (kk, _) in enumerate(streams) if kk == k]
        U = state.W_rx[k, q][:, list(rows)]
        G = U.conj().T @ (ch.H[k, q] @ T) * amps[None, :]   # (n_k, S)
        power = np.abs(G) ** 2
        for j, i in enumerate(idx):
            r[i] = G[j, i]
            interference[i] = power[j].sum() - power[j, i]
        if include_jamming and ch.P_J:
            jam[idx] = ch.P_J * np.sum(np.abs(ch.H_J[k, q].conj().T @ U) ** 2, axis=0)
        noise[idx] = ch.sigma2 * np.sum(np.abs(U) ** 2, axis=0)
    return streams, r, interference, jam, noise


def _scatter(state: BeamformerState, q: int, streams, values, out: np.ndarray):
    for (k, row), v in zip(streams, values):
        out[k, q, row] = v


def stream_metrics(state: BeamformerState, ch: LinkChannels, include_jamming: bool = True):
    """(sinr, mse) arrays shaped (K, N_f, N_t); zero off the allocated modes."""
    shape = state.P.shape
    sinr_out = np.zeros(shape)
    mse_out = np.zeros(shape)
    for q in range(state.N_f):
        streams, r, interference, jam, noise = _terms_at(state, ch, q, include_jamming)
        disturbance = interference + jam + noise
        signal = np.abs(r) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            gamma = np.where(disturbance > 0, signal / disturbance, 0.0)
        _scatter(state, q, streams, gamma, sinr_out)
        _scatter(state, q, streams, np.abs(r - 1.0) ** 2 + disturbance, mse_out)
    return sinr_out, mse_out


def _stream_terms(state, ch, k, q, row, include_jamming):
    streams, r, interference, jam, noise = _terms_at(state, ch, q, include_jamming)
    try:
        i = streams.index((k, row))
    except ValueError:
        raise ContractError(f"User {k} has no stream on DFT row {row}") from None
    return r[i], interference[i], jam[i], noise[i]


def interference_power(state: BeamformerState, ch: LinkChannels, k: int, q: int, row: int,
                       include_jamming: bool = True) -> float:
    """Inter-mode plus inter-user interference plus jamming seen by one stream."""
    _, interference, jam, _ = _stream_terms(state, ch, k, q, row, include_jamming)
    return float(interference + jam)


def sinr(state: BeamformerState, ch: LinkChannels, k: int, q: int, row: int,
         include_jamming: bool = True) -> float:
    r, interference, jam, noise = _stream_terms(state, ch, k, q, row, include_jamming)
    disturbance = interference + jam + noise
    return float(abs(r) ** 2 / disturbance) if disturbance > 0 else 0.0


def mse(state: BeamformerState, ch: LinkChannels, k: int, q: int, row: int,
        include_jamming: bool = True) -> float:
    r, interference, jam, noise = _stream_terms(state, ch, k, q, row, include_jamming)
    return float(abs(r - 1.0) ** 2 + interference + jam + noise)


def weighted_objective(state: BeamformerState, ch: LinkChannels, include_jamming: bool = True) -> float:
    """Σ (w ε − ln w) over all streams."""
    _, eps = stream_metrics(state, ch, include_jamming)
    total = 0.0
    for k, row in state.streams:
        w = state.weights[k, :, row]
        total += float(np.sum(w * eps[k, :, row] - np.log(w)))
    return total


def update_weights(state: BeamformerState, ch: LinkChannels, include_jamming: bool = True) -> np.ndarray:
    """w = 1/ε, with ε clamped at the MSE floor."""
    _, eps = stream_metrics(state, ch, include_jamming)
    weights = np.zeros_like(state.weights)
    clamped = 0
    for k, row in state.streams:
        e = eps[k, :, row]
        clamped += int(np.count_nonzero(e < MSE_FLOOR))
        weights[k, :, row] = 1.0 / np.maximum(e, MSE_FLOOR)
    if clamped:
        logger.warning(f"⚠️  {clamped} stream MSEs clamped to {MSE_FLOOR:g} before inversion")
    return weights


def update_rx(state: BeamformerState, ch: LinkChannels, k: int, q: int,
              include_jamming: bool = True) -> np.ndarray:
    """MMSE combiners u = √p C_k⁻¹ H_k t for user k's streams on subcarrier q."""
    W = state.W_rx[k, q].copy()
    rows = list(state.rows[k])
    if not rows:
        return W
    C = receive_covariance(state, ch, k, q, include_jamming)
    targets = ch.H[k, q] @ state.W_tx[k, q][:, rows] * np.sqrt(state.P[k, q, rows])[None, :]
    W[:, rows] = _solve(C, targets)
    return W


def _tx_gram(state: BeamformerState, ch: LinkChannels, q: int) -> np.ndarray:
    M = np.zeros((ch.N_t, ch.N_t), dtype=complex)
    for k, row in state.streams:
        v = ch.H[k, q].conj().T @ state.W_rx[k, q][:, row]
        M += state.weights[k, q, row] * np.outer(v, v.conj())
    return 0.5 * (M + M.conj().T)


def _trust_region(lam: np.ndarray, V: np.ndarray, g: np.ndarray):
    """min t^H M t − 2Re(g^H t) s.t. ‖t‖ ≤ 1, with M = V diag(lam) V^H."""
    c = V.conj().T @ g
    c2 = np.abs(c) ** 2
    # g lies in the range of M; drop round-off leaking into its null space
    c2 = np.where(c2 <= NULL_LEAKAGE * c2.sum(), 0.0, c2)
    c = np.where(c2 > 0, c, 0.0)
    lam = np.maximum(lam, 0.0)

    def norm2(z):
        d = lam + z
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(d > 0, c2 / np.where(d > 0, d, 1.0) ** 2, np.where(c2 > 0, np.inf, 0.0))
        return float(terms.sum())

    g_norm = float(np.linalg.norm(g))
    if g_norm == 0:
        return np.zeros_like(g), 0.0
    if norm2(0.0) <= 1.0:
        zeta = 0.0
    else:
        hi = g_norm
        while norm2(hi) > 1.0:
            hi *= 2.0
            if hi > ZETA_CEILING:
                raise InfeasibleError("Column-norm dual bracket exceeded 2^60")
        zeta = bisect(lambda z: norm2(z) - 1.0, 0.0, hi, tol=max(hi * 1e-14, 1e-300))
    d = lam + zeta
    with np.errstate(divide="ignore", invalid="ignore"):
        t = V @ np.where(d > 0, c / np.where(d > 0, d, 1.0), 0.0)
    norm = np.linalg.norm(t)
    if norm > 1.0:
        t = t / norm
    return t, zeta


def update_tx(state: BeamformerState, ch: LinkChannels, q: int):
    """Per-column precoders on subcarrier q with their column-norm duals ζ."""
    W_tx = state.W_tx[:, q].copy()
    zeta = np.zeros_like(state.zeta[:, q])
    eig = hermitian_eig(_tx_gram(state, ch, q))
    for k, row in state.streams:
        p = state.P[k, q, row]
        if p <= 0:
            continue
        u = state.W_rx[k, q][:, row]
        g = state.weights[k, q, row] * math.sqrt(p) * (ch.H[k, q].conj().T @ u)
        t, z = _trust_region(p * eig.eigenvalues, eig.eigenvectors, g)
        W_tx[k][:, row] = t
        zeta[k, row] = z
    return W_tx, zeta


def sensing_power(H_s, gamma_s: float, sigma2: float) -> np.ndarray:
    """P = γ_s σ² / |h|² per echo cell; zero-gain cells get no power."""
    gain = np.abs(np.asarray(H_s)) ** 2
    zero = gain <= 0
    if np.any(zero):
        logger.warning(f"⚠️  {int(np.count_nonzero(zero))} sensing cells have zero gain and were excluded")
    with np.errstate(divide="ignore"):
        return np.where(zero, 0.0, gamma_s * sigma2 / np.where(zero, 1.0, gain))


def power_floor(P_t: float, P_sensing: float, N_t: int) -> float:
    return (P_t - P_sensing) / N_t ** 2


def update_power(state: BeamformerState, ch: LinkChannels, config: AoConfig):
    """
    Stream powers minimizing Σ w ε with Σp = P_t − P_sensing and p ≥ P̄.

    Amplitudes follow x = max(√P̄, d/(c + η)) with η found by bisection.
    """
    streams = state.streams
    P_avail = config.P_t - float(state.P_s.sum())
    n = len(streams) * state.N_f
    P_bar = power_floor(config.P_t, float(state.P_s.sum()), ch.N_t)
    if P_avail <= 0 or n * P_bar >= P_avail:
        raise InfeasibleError(
            f"P_t={config.P_t:g} W cannot cover sensing {state.P_s.sum():.3e} W plus {n} floors of {P_bar:.3e} W"
        )

    c = np.zeros((state.N_f, len(streams)))
    d = np.zeros((state.N_f, len(streams)))
    for q in range(state.N_f):
        _, T, _ = _precoders(state, q)
        for i, (k, row) in enumerate(streams):
            u = state.W_rx[k, q][:, row]
            g = u.conj() @ (ch.H[k, q] @ T)
            w = state.weights[k, q, row]
            c[q] += w * np.abs(g) ** 2
            d[q, i] = w * np.real(g[i])
    c, d = c.ravel(), d.ravel()
    floor = math.sqrt(P_bar)

    def amplitudes(eta):
        return np.maximum(floor, d / (c + eta))

    lo = -float(c.min()) * (1.0 - 1e-12) if c.min() > 0 else 1e-300
    hi = max(float(np.max(d / floor - c)), lo) + max(1e-12 * float(c.max()), 1e-300)

    def excess(eta):
        return float(np.sum(amplitudes(eta) ** 2)) - P_avail

    if excess(lo) <= 0:
        logger.warning("⚠️  Power dual bracket degenerate; scaling unclamped streams instead")
        eta = lo
    else:
        eta = bisect(excess, lo, hi, tol=max(1e-14 * (hi - lo), 1e-300))
    x = amplitudes(eta)

    free = x > floor
    clamped_power = float(np.sum(x[~free] ** 2))
    free_power = float(np.sum(x[free] ** 2))
    if free_power > 0:
        x[free] *= math.sqrt((P_avail - clamped_power) / free_power)

    P = np.zeros_like(state.P)
    x = x.reshape(state.N_f, len(streams))
    for i, (k, row) in enumerate(streams):
        P[k, :, row] = x[:, i] ** 2
    return P, float(eta)


def index_information(alloc: ModeAllocation, N_t: int) -> float:
    """log2 Π_n C_n over the N_t slots of a hopping frame."""
    sizes = list(alloc.sizes)
    return float(sum(math.log2(count_mode_combinations(N_t, sizes, n)) for n in range(1, N_t + 1)))


def rate_report(state: BeamformerState, ch: LinkChannels, alloc: ModeAllocation,
                include_jamming: bool = True, index_term: bool = True) -> RateReport:
    gamma, eps = stream_metrics(state, ch, include_jamming)
    rate_bits = float(sum(np.sum(np.log2(1.0 + gamma[k, :, row])) for k, row in state.streams))
    index_bits = index_information(alloc, ch.N_t) if index_term else 0.0
    objective = 0.0
    for k, row in state.streams:
        w = state.weights[k, :, row]
        objective += float(np.sum(w * eps[k, :, row] - np.log(w)))
    return RateReport(sinr=gamma, mse=eps, rate_bits=rate_bits, index_bits=index_bits,
                      asr=(rate_bits + index_bits) / state.N_f, objective=objective)


def asr(state: BeamformerState, ch: LinkChannels, alloc: ModeAllocation,
        include_jamming: bool = True, index_term: bool = True) -> float:
    """Achievable sum rate in bits/s/Hz per subcarrier, index information included."""
    return rate_report(state, ch, alloc, include_jamming, index_term).asr


def initial_state(ch: LinkChannels, alloc: ModeAllocation, config: AoConfig) -> BeamformerState:
    """Identity (F^H) beamformers, sensing power reserved, equal power on every stream."""
    N_t, N_f, K = ch.N_t, ch.N_f, ch.K
    rows = user_rows(alloc, N_t)
    if len(rows) != K:
        raise ContractError(f"Allocation has {len(rows)} users, channels have {K}")
    basis = dft_basis(N_t)
    identity = np.broadcast_to(basis.F.conj().T, (K, N_f, N_t, N_t)).copy()

    P_s = np.zeros((N_f, N_t))
    if ch.H_s is not None:
        s_row = basis.mode_index(alloc.sensing_mode)
        P_s[:, s_row] = sensing_power(ch.H_s[:, alloc.slot - 1], config.gamma_s, ch.echo_noise)
    P_avail = config.P_t - float(P_s.sum())
    n_streams = N_f * sum(len(r) for r in rows)
    if P_avail <= 0:
        raise InfeasibleError(f"Sensing needs {P_s.sum():.3e} W, more than P_t={config.P_t:g} W")
    if n_streams == 0:
        raise ContractError("Allocation carries no user streams")

    P = np.zeros((K, N_f, N_t))
    for k, user in enumerate(rows):
        P[k][:, list(user)] = P_avail / n_streams

    state = BeamformerState(W_tx=identity, W_rx=identity.copy(), P=P, P_s=P_s,
                            weights=np.zeros((K, N_f, N_t)), zeta=np.zeros((K, N_f, N_t)),
                            eta=0.0, sigma2=ch.sigma2, rows=rows)
    state.weights = update_weights(state, ch, config.use_jamming_csi)
    return state


def _check_monotone(label: str, before: float, after: float, config: AoConfig):
    if after - before > config.monotone_tol * max(1.0, abs(before)):
        raise NonMonotoneError(
            f"{label} update raised the weighted MSE objective from {before:.12g} to {after:.12g}"
        )


def duality_gap(state: BeamformerState, ch: LinkChannels, include_jamming: bool = True) -> float:
    """max |log2(1+γ) + log2 ε| over streams (zero at an MMSE fixed point)."""
    gamma, eps = stream_metrics(state, ch, include_jamming)
    gaps = [np.max(np.abs(np.log2(1.0 + gamma[k, :, r]) + np.log2(eps[k, :, r]))) for k, r in state.streams]
    return float(max(gaps)) if gaps else 0.0


def normalize_rx(W_rx: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W_rx, axis=2, keepdims=True)
    return np.where(norms > 0, W_rx / np.where(norms > 0, norms, 1.0), W_rx)


def run_ao(ch: LinkChannels, alloc: ModeAllocation, config: Optional[AoConfig] = None,
           state: Optional[BeamformerState] = None) -> AoResult:
    """Alternate the four blocks until the ASR settles, then normalize the combiners."""
    config = config or AoConfig()
    jam = config.use_jamming_csi
    state = state.copy() if state is not None else initial_state(ch, alloc, config)
    executor = get_executor()
    pairs = [(k, q) for k in range(ch.K) for q in range(ch.N_f)]

    objective = weighted_objective(state, ch, jam)
    previous = rate_report(state, ch, alloc, jam, config.index_term).asr
    trace: List[IterationRecord] = []
    converged = False
    logger.info(f"🚀 AO [{config.label}]: {len(state.streams)} streams × {ch.N_f} subcarriers, start ASR {previous:.4f}")

    for iteration in range(1, config.max_iter + 1):
        state.weights = update_weights(state, ch, jam)
        after = weighted_objective(state, ch, jam)
        _check_monotone("weight", objective, after, config)
        objective = after

        if config.optimize_rx:
            results = list(executor.map(lambda kq: update_rx(state, ch, kq[0], kq[1], jam), pairs))
            for (k, q), W in zip(pairs, results):
                state.W_rx[k, q] = W
            after = weighted_objective(state, ch, jam)
            _check_monotone("receive beamformer", objective, after, config)
            objective = after

        if config.optimize_tx:
            results = list(executor.map(lambda q: update_tx(state, ch, q), range(ch.N_f)))
            for q, (W, zeta) in enumerate(results):
                state.W_tx[:, q] = W
                state.zeta[:, q] = zeta
            after = weighted_objective(state, ch, jam)
            _check_monotone("transmit beamformer", objective, after, config)
            objective = after

        if config.optimize_power:
            state.P, state.eta = update_power(state, ch, config)
            after = weighted_objective(state, ch, jam)
            _check_monotone("power", objective, after, config)
            objective = after

        current = rate_report(state, ch, alloc, jam, config.index_term).asr
        trace.append(IterationRecord(iteration, objective, current))
        logger.debug(f"📊 iteration {iteration}: objective {objective:.6f}, ASR {current:.6f}")
        if abs(current - previous) < config.tol * max(abs(previous), 1e-12):
            converged = True
            break
        previous = current

    if config.optimize_rx:
        for k, q in pairs:
            state.W_rx[k, q] = update_rx(state, ch, k, q, jam)
    state.weights = update_weights(state, ch, jam)
    gap = duality_gap(state, ch, jam) if config.optimize_rx else float("nan")
    state.W_rx = normalize_rx(state.W_rx)

    report = rate_report(state, ch, alloc, jam, config.index_term)
    status = "converged" if converged else "stopped at the iteration cap"
    logger.info(f"✅ AO [{config.label}] {status} after {len(trace)} iterations, ASR {report.asr:.4f}")
    complexity = complexity_counts(ch.N_t, ch.N_f, alloc.sizes, I1=BISECTION_STEPS, I2=BISECTION_STEPS, I3=len(trace))
    return AoResult(state=state, trace=trace, report=report, converged=converged,
                    duality_gap=gap, complexity=complexity)


def simulate_stream(state: BeamformerState, ch: LinkChannels, k: int, q: int, row: int,
                    rng: np.random.Generator, draws: int = 200_000,
                    include_jamming: bool = True, chunk: int = 50_000):
    """Symbol-level Monte-Carlo (MSE, SINR) of one stream with QPSK data and Gaussian jamming."""
    streams, T, amps = _precoders(state, q)
    try:
        own = streams.index((k, row))
    except ValueError:
        raise ContractError(f"User {k} has no stream on DFT row {row}") from None
    u = state.W_rx[k, q][:, row]
    g = (u.conj() @ (ch.H[k, q] @ T)) * amps
    h_j = u.conj() @ ch.H_J[k, q]

    err = 0.0
    sig = 0.0
    dist = 0.0
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        s = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=(len(streams), n))))
        noise = math.sqrt(ch.sigma2 / 2) * (rng.standard_normal((ch.N_t, n)) + 1j * rng.standard_normal((ch.N_t, n)))
        z = g @ s + u.conj() @ noise
        if include_jamming and ch.P_J:
            n_j = ch.H_J.shape[3]
            x_j = math.sqrt(ch.P_J / 2) * (rng.standard_normal((n_j, n)) + 1j * rng.standard_normal((n_j, n)))
            z = z + h_j @ x_j
        wanted = g[own] * s[own]
        err += float(np.sum(np.abs(z - s[own]) ** 2))
        sig += float(np.sum(np.abs(wanted) ** 2))
        dist += float(np.sum(np.abs(z - wanted) ** 2))
        done += n
    return err / draws, (sig / dist if dist > 0 else 0.0)


def empirical_ssnr(H_s, P_s, sigma2: float, rng: np.random.Generator, draws: int = 10_000) -> float:
    """Echo SNR in dB measured after element-wise division, averaged over powered cells."""
    H_s = np.asarray(H_s)
    cells = np.nonzero(np.asarray(P_s) > 0)
    h = H_s[cells][:, None]
    amp = np.sqrt(np.asarray(P_s)[cells])[:, None]
    shape = (h.shape[0], draws)
    s = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=shape)))
    noise = math.sqrt(sigma2 / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    estimate = (amp * h * s + noise) / (amp * s)
    snr = np.abs(h[:, 0]) ** 2 / np.mean(np.abs(estimate - h) ** 2, axis=1)
    return float(10.0 * np.log10(np.mean(snr)))


def complexity_counts(N_t: int, N_f: int, sizes: Sequence[int], I1: int, I2: int, I3: int) -> Dict[str, int]:
    """Operation-count orders of the proposed scheme and a traditional MIMO-ISAC design."""
    K = len(sizes)
    streams = sum(sizes)
    return {
        "proposed_design": N_f * I3 * ((1 + I2) * streams * N_t ** 2 + K * (I1 + 1) * N_t ** 3),
        "proposed_detection": N_f * streams * N_t ** 2,
        "traditional_design": N_f * K * I3 * (2 * N_t ** 3 + I1 * N_t ** 3 + I2 * N_t ** 3),
        "traditional_detection": N_f * K * N_t ** 3,
    }
