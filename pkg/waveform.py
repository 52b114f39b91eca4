#!/usr/bin/env python3
"""
OAM mode bases, index-modulated mode hopping and ISAC symbol assembly.

Modes are the orders −N_t/2+1 … N_t/2 and map to rows of the DFT basis in
ascending order. In every OFDM slot one mode carries the sensing sweep and
the rest are split among users by a keyed permutation driven by the index
bits, so the choice of modes itself carries information.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from numerics import ContractError, IsacError

logger = logging.getLogger(__name__)

Bits = Union[str, int]


class AllocationError(IsacError):
    """Mode sets cannot be carved out of the available modes."""


def mode_orders(N_t: int) -> np.ndarray:
    """Ascending OAM orders −N_t/2+1 … N_t/2."""
    if N_t < 2:
        raise ContractError(f"N_t must be at least 2, got {N_t}")
    return np.arange(-(N_t // 2) + 1, N_t // 2 + 1)


@dataclass(frozen=True)
class DftBasis:
    F: np.ndarray
    modes: np.ndarray

    @property
    def N_t(self) -> int:
        return int(self.F.shape[0])

    def mode_index(self, l: int) -> int:
        """Row of F holding mode ``l``."""
        if not -(self.N_t // 2) < l <= self.N_t // 2:
            raise ContractError(f"Mode {l} outside −{self.N_t // 2}..{self.N_t // 2}")
        return int(l) + self.N_t // 2 - 1

    def unit(self, l: int) -> np.ndarray:
        e = np.zeros(self.N_t, dtype=complex)
        e[self.mode_index(l)] = 1.0
        return e


def dft_basis(N_t: int) -> DftBasis:
    modes = mode_orders(N_t)
    n = np.arange(N_t)
    F = np.exp(-2j * np.pi * np.outer(modes, n) / N_t) / math.sqrt(N_t)
    return DftBasis(F=F, modes=modes)


@dataclass(frozen=True)
class ModeAllocation:
    slot: int
    sensing_mode: int
    user_modes: Tuple[Tuple[int, ...], ...]

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(m) for m in self.user_modes)

    def used_modes(self) -> Tuple[int, ...]:
        used = [self.sensing_mode]
        for modes in self.user_modes:
            used.extend(modes)
        return tuple(used)

    def owner(self, l: int):
        """'sensing', a user index, or None for an idle mode."""
        if l == self.sensing_mode:
            return "sensing"
        for k, modes in enumerate(self.user_modes):
            if l in modes:
                return k
        return None


def _as_int(value: Bits, what: str) -> int:
    if isinstance(value, (int, np.integer)):
        if value < 0:
            raise ContractError(f"{what} must be non-negative")
        return int(value)
    text = str(value).strip().lower()
    if text.startswith("0x"):
        text = text[2:]
    if not text:
        return 0
    try:
        return int(text, 16)
    except ValueError as e:
        raise ContractError(f"{what} is not a hex string: {value!r}") from e


def _check_sizes(N_t: int, sizes: Sequence[int]):
    if any(s < 0 for s in sizes):
        raise AllocationError(f"Negative mode-set size in {list(sizes)}")
    if sum(sizes) + 1 > N_t:
        raise AllocationError(
            f"Sizes {list(sizes)} plus one sensing mode oversubscribe N_t={N_t}"
        )


def _floor_pow2(value: int) -> int:
    return 1 << (value.bit_length() - 1)


def partition_capacity(N_t: int, sizes: Sequence[int]) -> int:
    """Number of distinct user partitions reachable from the index bits (a power of two)."""
    _check_sizes(N_t, sizes)
    total, remaining = 1, N_t - 1
    for size in sizes:
        total *= math.comb(remaining, size)
        remaining -= size
    return _floor_pow2(total)


def _unrank_combination(rank: int, n: int, k: int) -> List[int]:
    """k-subset of range(n) with lexicographic rank ``rank``."""
    chosen, x = [], 0
    for i in range(k):
        while True:
            block = math.comb(n - x - 1, k - i - 1)
            if rank < block:
                break
            rank -= block
            x += 1
        chosen.append(x)
        x += 1
    return chosen


def allocate_modes(N_t: int, K: int, sizes: Sequence[int], slot: int,
                   index_bits: Bits, key: Bits) -> ModeAllocation:
    """
    Modes of one slot: the sweep's sensing mode plus one set per user.

    The non-sensing modes are shuffled by a generator seeded with (key, slot),
    then the index bits (reduced modulo the partition capacity) pick the
    partition through the combinatorial number system. Distinct bit values
    below the capacity give distinct partitions.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) != K:
        raise AllocationError(f"Expected {K} mode-set sizes, got {len(sizes)}")
    _check_sizes(N_t, sizes)
    if not 1 <= slot <= N_t:
        raise ContractError(f"Slot {slot} outside 1..{N_t}")

    modes = mode_orders(N_t)
    sensing = int(modes[slot - 1])
    pool = [int(m) for m in modes if m != sensing]
    rng = np.random.default_rng(np.random.SeedSequence([_as_int(key, "key"), slot]))
    pool = [pool[i] for i in rng.permutation(len(pool))]

    b = _as_int(index_bits, "index_bits") % partition_capacity(N_t, sizes)
    user_modes = []
    for size in sizes:
        choices = math.comb(len(pool), size)
        rank, b = b % choices, b // choices
        picked = set(_unrank_combination(rank, len(pool), size))
        user_modes.append(tuple(sorted(pool[i] for i in picked)))
        pool = [m for i, m in enumerate(pool) if i not in picked]

    return ModeAllocation(slot=slot, sensing_mode=sensing, user_modes=tuple(user_modes))


def mode_hopping_pattern(N_t: int, sizes: Sequence[int], index_bits: Union[Bits, Sequence[Bits]],
                         key: Bits) -> List[ModeAllocation]:
    """Allocations for slots 1..N_t, one full sensing sweep."""
    if isinstance(index_bits, (str, int, np.integer)):
        per_slot = [index_bits] * N_t
    else:
        per_slot = list(index_bits)
        if len(per_slot) != N_t:
            raise ContractError(f"Need index bits for {N_t} slots, got {len(per_slot)}")
    return [allocate_modes(N_t, len(sizes), sizes, s, per_slot[s - 1], key)
            for s in range(1, N_t + 1)]


def count_mode_combinations(N_t: int, sizes: Sequence[int], n: int) -> int:
    """Power-of-two count C_n of mode combinations available in slot n."""
    if not 1 <= n <= N_t:
        raise ContractError(f"Slot {n} outside 1..{N_t}")
    _check_sizes(N_t, sizes)
    total, remaining = N_t - n + 1, N_t - 1
    for size in sizes:
        total *= math.comb(remaining, size)
        remaining -= size
    return _floor_pow2(total)


def index_bits_per_slot(N_t: int, sizes: Sequence[int]) -> List[int]:
    return [count_mode_combinations(N_t, sizes, n).bit_length() - 1 for n in range(1, N_t + 1)]


@dataclass
class IsacSymbol:
    """Per-subcarrier transmit vectors and their mode-domain parts."""
    x: np.ndarray                # (N_f, N_t) element-domain samples
    coefficients: np.ndarray     # (N_f, N_t) mode-domain √p·s
    sensing: np.ndarray          # (N_f, N_t) sensing part only
    users: np.ndarray            # (K, N_f, N_t) per-user parts
    powers: np.ndarray           # (N_f, N_t)
    allocation: ModeAllocation

    @property
    def N_f(self) -> int:
        return int(self.x.shape[0])


def build_isac_symbol(basis: DftBasis, alloc: ModeAllocation, data, powers) -> IsacSymbol:
    """
    Assemble x_q = F^H(√p ∘ s_q)/√N_f for every subcarrier.

    ``data`` and ``powers`` are (N_f, N_t) arrays indexed by DFT row; power on
    a mode the allocation leaves idle is rejected.
    """
    data = np.atleast_2d(np.asarray(data, dtype=complex))
    powers = np.atleast_2d(np.asarray(powers, dtype=float))
    if data.shape != powers.shape or data.shape[1] != basis.N_t:
        raise ContractError(f"data {data.shape} and powers {powers.shape} must be (N_f, {basis.N_t})")
    if not np.all(np.isfinite(powers)) or np.any(powers < 0):
        raise ContractError("Powers must be finite and non-negative")

    used = np.zeros(basis.N_t, dtype=bool)
    used[[basis.mode_index(l) for l in alloc.used_modes()]] = True
    if np.any(powers[:, ~used] > 0):
        idle = [int(basis.modes[i]) for i in np.nonzero(np.any(powers > 0, axis=0) & ~used)[0]]
        raise ContractError(f"Power placed on unallocated modes {idle}")

    N_f = data.shape[0]
    coeffs = np.sqrt(powers) * data

    def _part(modes):
        mask = np.zeros(basis.N_t, dtype=bool)
        mask[[basis.mode_index(l) for l in modes]] = True
        return np.where(mask[None, :], coeffs, 0)

    sensing = _part([alloc.sensing_mode])
    users = np.stack([_part(m) for m in alloc.user_modes]) if alloc.user_modes else np.zeros((0,) + coeffs.shape)
    x = coeffs @ basis.F.conj() / math.sqrt(N_f)
    return IsacSymbol(x=x, coefficients=coeffs, sensing=sensing, users=users,
                      powers=powers, allocation=alloc)


def reflected_mode(l: int, N_t: int) -> int:
    """Mode after first-order reflection (−l, with −N_t/2 wrapped to N_t/2)."""
    flipped = -int(l)
    return N_t // 2 if flipped == -(N_t // 2) else flipped


def reflected_sensing(basis: DftBasis, symbol: IsacSymbol) -> np.ndarray:
    """Element-domain sensing reference after reflection reverses the mode sign."""
    src = basis.mode_index(symbol.allocation.sensing_mode)
    dst = basis.mode_index(reflected_mode(symbol.allocation.sensing_mode, basis.N_t))
    coeffs = np.zeros_like(symbol.sensing)
    coeffs[:, dst] = symbol.sensing[:, src]
    return coeffs @ basis.F.conj() / math.sqrt(symbol.N_f)


@dataclass
class EchoEstimate:
    H: np.ndarray
    valid: np.ndarray  # bool mask of cells usable for covariance


def echo_division(Y_s, S_s) -> EchoEstimate:
    """Element-wise Y_s / S_s; zero reference cells are flagged and left at zero."""
    Y_s = np.asarray(Y_s, dtype=complex)
    S_s = np.asarray(S_s, dtype=complex)
    if Y_s.shape != S_s.shape:
        raise ContractError(f"Echo {Y_s.shape} and reference {S_s.shape} differ in shape")
    valid = S_s != 0
    H = np.zeros_like(Y_s)
    np.divide(Y_s, S_s, out=H, where=valid)
    flagged = int(np.size(valid) - np.count_nonzero(valid))
    if flagged:
        logger.warning(f"⚠️  {flagged} echo cells have a zero reference and were excluded")
    return EchoEstimate(H=H, valid=valid)


def qpsk(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-modulus QPSK symbols."""
    bits = rng.integers(0, 4, size=shape)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * bits))
