#!/usr/bin/env python3
"""
Shared numerical kernels for the OAM ISAC simulator.

Bessel functions, Hermitian eigendecomposition, scalar bisection and 2-D
grid peak detection, plus the error hierarchy and the worker pool that the
rest of the package builds on. Everything here is a pure function of its
inputs, so it is safe to call from several worker threads at once.
"""

import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional

import numpy as np
from scipy import linalg, ndimage, optimize, special

logger = logging.getLogger(__name__)

MAX_BESSEL_ORDER = 64
HERMITIAN_TOL = 1e-8

_NEIGHBOURS = np.ones((3, 3), dtype=bool)
_NEIGHBOURS[1, 1] = False


class IsacError(Exception):
    """Base class for every error raised by the simulator."""


class DomainError(IsacError):
    """Argument outside the domain of a numerical kernel."""


class ContractError(IsacError):
    """A documented precondition was violated by the caller."""


class BracketingError(IsacError):
    """Bisection endpoints do not bracket a sign change."""


# Worker pool shared by grid evaluations; sized once from ISAC_THREADS
_executor: Optional[ThreadPoolExecutor] = None
_executor_lock = threading.Lock()


def worker_count() -> int:
    """Number of worker threads allowed by ISAC_THREADS (defaults to cpu count)."""
    raw = os.environ.get("ISAC_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning(f"⚠️  Ignoring non-integer ISAC_THREADS={raw!r}")
    return os.cpu_count() or 1


def get_executor() -> ThreadPoolExecutor:
    """Get or create the process-wide thread pool."""
    global _executor
    with _executor_lock:
        if _executor is None:
            _executor = ThreadPoolExecutor(max_workers=worker_count())
    return _executor


def bessel_j(order, x):
    """
    Bessel function of the first kind J_order(x).

    Negative orders follow J_{-l}(x) = (-1)^l J_l(x). Both arguments broadcast
    like numpy arrays; scalar inputs give a float back.
    """
    order_arr = np.asarray(order)
    x_arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x_arr)):
        raise DomainError("Bessel argument must be finite")
    if order_arr.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(order_arr, 1), 0)):
            raise DomainError(f"Bessel order must be an integer, got {order!r}")
        order_arr = order_arr.astype(int)
    if np.any(np.abs(order_arr) > MAX_BESSEL_ORDER):
        raise DomainError(f"Bessel order beyond ±{MAX_BESSEL_ORDER}")

    values = special.jv(order_arr, x_arr)
    if np.ndim(values) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs of a Hermitian matrix, eigenvalues sorted descending."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.conj().T


def hermitian_eig(R) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix with descending eigenvalues."""
    R = np.asarray(R, dtype=complex)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ContractError(f"Expected a square matrix, got shape {R.shape}")

    scale = np.linalg.norm(R)
    asym = np.linalg.norm(R - R.conj().T)
    if asym > HERMITIAN_TOL * scale:
        raise ContractError(
            f"Matrix is not Hermitian: ‖R − Rᴴ‖ = {asym:.3e} exceeds {HERMITIAN_TOL:g}·‖R‖"
        )

    # eigh returns ascending order
    values, vectors = linalg.eigh(0.5 * (R + R.conj().T))
    return EigenDecomposition(
        eigenvalues=np.ascontiguousarray(values[::-1]),
        eigenvectors=np.ascontiguousarray(vectors[:, ::-1]),
    )


def bisect(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """
    Root of a monotone scalar function on [lo, hi].

    The endpoints must give values of opposite sign (an exact zero at either
    end is returned directly). Iteration stops once the bracket is narrower
    than ``tol``.
    """
    if not tol > 0:
        raise ContractError(f"Bisection tolerance must be positive, got {tol}")
    if not hi > lo:
        raise ContractError(f"Empty bisection interval [{lo}, {hi}]")

    f_lo = f(lo)
    f_hi = f(hi)
    if f_lo == 0:
        return float(lo)
    if f_hi == 0:
        return float(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        raise BracketingError(
            f"f({lo:.6g}) = {f_lo:.3e} and f({hi:.6g}) = {f_hi:.3e} share a sign"
        )

    # halving the bracket ceil(log2(width / tol)) times reaches tol
    max_iter = max(1, math.ceil(math.log2((hi - lo) / tol)))
    root, result = optimize.bisect(
        f, lo, hi, xtol=tol, maxiter=max_iter, full_output=True, disp=False
    )
    logger.debug(f"🔍 bisection converged={result.converged} after {result.iterations} steps")
    return float(root)


@dataclass(frozen=True)
class Axis:
    """Uniformly sampled grid axis, stop included when it lands on a sample."""
    name: str
    start: float
    stop: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ContractError(f"Axis '{self.name}' step must be positive")
        if self.stop < self.start:
            raise ContractError(f"Axis '{self.name}' stop precedes start")

    @property
    def size(self) -> int:
        return int(math.floor((self.stop - self.start) / self.step + 1e-6)) + 1

    def values(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.size)

    @classmethod
    def single(cls, name: str, value: float) -> "Axis":
        return cls(name, value, value, 1.0)


@dataclass(frozen=True)
class Grid2D:
    """Spectral function sampled on a rectangular (axis1 × axis2) grid."""
    axis1: Axis
    axis2: Axis
    values: np.ndarray

    def __post_init__(self):
        expected = (self.axis1.size, self.axis2.size)
        if self.values.shape != expected:
            raise ContractError(f"Grid values shape {self.values.shape} != axes {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("Grid values must be finite")
        if np.any(self.values < 0):
            raise ContractError("Grid values must be non-negative")

    def coordinates(self, row: int, col: int):
        return float(self.axis1.values()[row]), float(self.axis2.values()[col])


class Peak(NamedTuple):
    axis1: float
    axis2: float
    height: float
    row: int
    col: int


def find_peaks(grid: Grid2D, max_count: int, min_separation: int = 1) -> List[Peak]:
    """
    Local maxima of a grid, highest first.

    A cell is a peak when no neighbour among its eight exceeds it; cells off
    the grid count as -inf. A flat top (a connected run of equal local maxima)
    is one peak reported at its lowest flat index, and it is dropped when the
    run is flanked by an equal cell that rises elsewhere. Peaks within
    ``min_separation`` cells (Chebyshev distance) of a higher one are dropped,
    and equal heights go to the lower flat index.
    """
    if max_count < 1:
        raise ContractError("max_count must be at least 1")

    values = grid.values
    neighbour_max = ndimage.maximum_filter(
        values, footprint=_NEIGHBOURS, mode="constant", cval=-np.inf
    )
    labels, count = ndimage.label(values >= neighbour_max, structure=np.ones((3, 3)))
    if count == 0:
        return []

    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    flat_labels = labels.ravel()
    # lowest flat index of each component
    first = np.full(count + 1, values.size, dtype=np.int64)
    np.minimum.at(first, flat_labels, np.arange(values.size))
    candidates = [int(first[label]) for label in range(1, count + 1)]

    for label, window in enumerate(ndimage.find_objects(labels), start=1):
        if sizes[label] == 1:
            if not values.flat[first[label]] > neighbour_max.flat[first[label]]:
                candidates[label - 1] = -1
            continue
        # flat top: grow the window by one cell and look at its rim
        grown = tuple(slice(max(s.start - 1, 0), s.stop + 1) for s in window)
        member = labels[grown] == label
        rim = ndimage.binary_dilation(member, structure=np.ones((3, 3))) & ~member
        height = values.flat[first[label]]
        if np.any(values[grown][rim] >= height):
            candidates[label - 1] = -1

    flat = np.array([idx for idx in candidates if idx >= 0], dtype=np.int64)
    if flat.size == 0:
        return []
    rows, cols = np.divmod(flat, values.shape[1])
    heights = values[rows, cols]
    order = np.lexsort((flat, -heights))

    a1 = grid.axis1.values()
    a2 = grid.axis2.values()
    kept: List[Peak] = []
    for idx in order:
        r, c = int(rows[idx]), int(cols[idx])
        if any(max(abs(r - p.row), abs(c - p.col)) < min_separation for p in kept):
            continue
        kept.append(Peak(float(a1[r]), float(a2[c]), float(values[r, c]), r, c))
        if len(kept) == max_count:
            break
    return kept
