import logging
import math
import threading
from typing import Any, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import stats

from polymerlab.models.config import (
    PotentialKind,
    PotentialSpec,
    RandomTrigSpec,
    ShotNoiseSpec,
    ZeroPotentialSpec,
)
from polymerlab.polymer import PolymerState, laplacian
from polymerlab.rng import POTENTIAL_STREAM, TRIG_STREAM, keyed_generator

logger = logging.getLogger(__name__)

CELLS_PER_CHUNK = 32
MAX_POINTS_PER_CELL = 64
INITIAL_CHUNK_CAPACITY = 64
_CHUNK_KEY_SPAN = 1 << 32
_CHUNK_KEY_OFFSET = 1 << 31
# tail probability used for the high-probability Lipschitz bounds
LIPSCHITZ_TAIL = 1e-4
TRIG_COEFFICIENT_BOUND = 5.0


def _ordered_sum(terms: np.ndarray) -> np.ndarray:
    """Sum over the last axis in index order; zero padding never changes the result"""
    total = np.zeros(terms.shape[:-1], dtype=np.float64)
    for j in range(terms.shape[-1]):
        total = total + terms[..., j]
    return total


class _Backend(Protocol):
    def evaluate(self, rows: np.ndarray, args: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]: ...

    def derivative(self, rows: np.ndarray, args: np.ndarray) -> np.ndarray: ...

    def lipschitz_estimate(self) -> float: ...


class _ZeroBackend:
    def evaluate(self, rows: np.ndarray, args: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        zeros = np.zeros(args.shape, dtype=np.float64)
        return zeros, zeros.copy(), zeros.copy()

    def derivative(self, rows: np.ndarray, args: np.ndarray) -> np.ndarray:
        return np.zeros(args.shape, dtype=np.float64)

    def lipschitz_estimate(self) -> float:
        return 0.0


class _ShotNoiseCells:
    """
    Poisson points generated lazily per (row, chunk of integer cells).

    Each chunk is drawn from its own counter key, so the points of a cell do not depend on which
    cells were requested before. Generated chunks are found through a sorted table of chunk keys.
    """

    def __init__(self, seed: int, intensity: float):
        self._seed = seed
        self._intensity = intensity
        self._lock = threading.Lock()
        self._keys = np.zeros(0, dtype=np.int64)
        self._slots = np.zeros(0, dtype=np.int64)
        self._counts = np.zeros((INITIAL_CHUNK_CAPACITY, CELLS_PER_CHUNK), dtype=np.int64)
        self._starts = np.zeros((INITIAL_CHUNK_CAPACITY, CELLS_PER_CHUNK), dtype=np.int64)
        self._chunks = 0
        self._points = np.zeros(1024, dtype=np.float64)
        self._size = 0

    @staticmethod
    def _chunk_keys(rows: np.ndarray, chunks: np.ndarray) -> np.ndarray:
        return rows.astype(np.int64) * _CHUNK_KEY_SPAN + (chunks + _CHUNK_KEY_OFFSET)

    def _find(self, keys: np.ndarray) -> np.ndarray:
        if self._keys.size == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        position = np.minimum(np.searchsorted(self._keys, keys), self._keys.size - 1)
        return np.where(self._keys[position] == keys, self._slots[position], -1)

    def lookup(self, rows: np.ndarray, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Locate the points of every (row, cell) pair
        :param rows: 1-based rows, flat int array
        :param cells: integer cells, flat int array
        :return: start offsets and counts per pair, and the point buffer they index
        """
        chunks = cells // CELLS_PER_CHUNK
        columns = cells - chunks * CELLS_PER_CHUNK
        keys = self._chunk_keys(rows, chunks)
        with self._lock:
            slots = self._find(keys)
            missing = slots < 0
            if np.any(missing):
                self._fill(np.unique(keys[missing]))
                slots = self._find(keys)
            return self._starts[slots, columns], self._counts[slots, columns], self._points

    def _append(self, positions: np.ndarray) -> int:
        start = self._size
        needed = start + positions.size
        if needed > self._points.size:
            grown = np.zeros(max(needed, 2 * self._points.size), dtype=np.float64)
            grown[:start] = self._points[:start]
            self._points = grown
        self._points[start:needed] = positions
        self._size = needed
        return start

    def _reserve_chunks(self, extra: int) -> None:
        needed = self._chunks + extra
        capacity = self._counts.shape[0]
        if needed <= capacity:
            return
        capacity = max(needed, 2 * capacity)
        for name in ("_counts", "_starts"):
            grown = np.zeros((capacity, CELLS_PER_CHUNK), dtype=np.int64)
            grown[: self._chunks] = getattr(self, name)[: self._chunks]
            setattr(self, name, grown)

    def _fill(self, keys: np.ndarray) -> None:
        """Generate the chunks of the sorted, not yet cached `keys`"""
        self._reserve_chunks(keys.size)
        slots = np.arange(self._chunks, self._chunks + keys.size)
        for slot, key in zip(slots.tolist(), keys.tolist(), strict=True):
            row, chunk = divmod(key, _CHUNK_KEY_SPAN)
            chunk -= _CHUNK_KEY_OFFSET
            rng = keyed_generator(self._seed, row, chunk, POTENTIAL_STREAM)
            counts = rng.poisson(self._intensity, CELLS_PER_CHUNK)
            if np.any(counts > MAX_POINTS_PER_CELL):
                logger.warning(
                    f"Poisson cell overflow in row {row}, chunk {chunk}: {int(counts.max())} points capped at "
                    f"{MAX_POINTS_PER_CELL}",
                )
                counts = np.minimum(counts, MAX_POINTS_PER_CELL)
            first_cell = chunk * CELLS_PER_CHUNK
            cells = np.arange(first_cell, first_cell + CELLS_PER_CHUNK, dtype=np.float64)
            start = self._append(np.repeat(cells, counts) + rng.random(int(counts.sum())))
            self._counts[slot] = counts
            self._starts[slot] = start + np.concatenate(([0], np.cumsum(counts)[:-1]))
        self._chunks += keys.size
        positions = np.searchsorted(self._keys, keys)
        self._keys = np.insert(self._keys, positions, keys)
        self._slots = np.insert(self._slots, positions, slots)
        logger.debug(f"Generated {keys.size} point chunk(s); {self._chunks} chunks cached")


class _ShotNoiseBackend:
    """F_k(r) = A·Σ_i φ((r - p_i)/w), φ(u) = (1 - u²)³ on |u| < 1"""

    def __init__(self, spec: ShotNoiseSpec):
        self.amplitude = spec.amplitude
        self.intensity = spec.intensity
        self.width = spec.width
        self._reach = math.ceil(spec.width)
        self._cells = _ShotNoiseCells(spec.seed, spec.intensity)

    def _bumps(self, rows: np.ndarray, args: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
        if args.size == 0:
            return None
        cells = np.floor(args).astype(np.int64)[..., None] + np.arange(-self._reach, self._reach + 1)
        row_grid = np.broadcast_to(rows[..., None], cells.shape)
        starts, counts, points = self._cells.lookup(row_grid.ravel(), cells.ravel())
        starts = starts.reshape(cells.shape)
        counts = counts.reshape(cells.shape)
        slots = int(counts.max())
        if slots == 0:
            return None
        slot = np.arange(slots)
        present = slot < counts[..., None]
        index = np.where(present, starts[..., None] + slot, 0)
        u = (args[..., None, None] - points[index]) / self.width
        inside = present & (np.abs(u) < 1.0)
        u = np.where(inside, u, 0.0)
        bump = np.where(inside, 1.0 - u * u, 0.0)
        flat = args.shape + (-1,)
        return u.reshape(flat), bump.reshape(flat)

    def evaluate(self, rows: np.ndarray, args: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        bumps = self._bumps(rows, args)
        if bumps is None:
            return _ZeroBackend().evaluate(rows, args)
        u, bump = bumps
        value = self.amplitude * _ordered_sum(bump**3)
        first = self.amplitude / self.width * _ordered_sum(-6.0 * u * bump**2)
        second = self.amplitude / self.width**2 * _ordered_sum(bump * (30.0 * u * u - 6.0))
        return value, first, second

    def derivative(self, rows: np.ndarray, args: np.ndarray) -> np.ndarray:
        bumps = self._bumps(rows, args)
        if bumps is None:
            return np.zeros(args.shape, dtype=np.float64)
        u, bump = bumps
        return self.amplitude / self.width * _ordered_sum(-6.0 * u * bump**2)

    def lipschitz_estimate(self) -> float:
        # |φ''| ≤ 6, times the number of points that can overlap one window
        overlap = max(1.0, float(stats.poisson.isf(LIPSCHITZ_TAIL, 2.0 * self.width * self.intensity)))
        return 6.0 * self.amplitude / self.width**2 * overlap


class _RandomTrigBackend:
    """F_k(r) = A·Σ_j a_j (A_kj cos(ω_j r) + B_kj sin(ω_j r))"""

    def __init__(self, spec: RandomTrigSpec):
        self.amplitude = spec.amplitude
        self.seed = spec.seed
        self.frequencies = np.asarray(spec.mode_frequencies(), dtype=np.float64)
        self.weights = np.asarray(spec.mode_weights(), dtype=np.float64)
        self._lock = threading.Lock()
        self._first_row = 0
        self._table = np.zeros((0, 2, self.frequencies.size), dtype=np.float64)
        self._filled = np.zeros(0, dtype=bool)

    def _cover(self, low: int, high: int) -> None:
        """Grow the dense coefficient table to rows low..high, at least doubling the span on each growth"""
        size = self._filled.size
        last = self._first_row + size - 1
        if size and self._first_row <= low and high <= last:
            return
        if size == 0:
            first, final = low, high
        else:
            first = min(low, self._first_row - size) if low < self._first_row else self._first_row
            final = max(high, last + size) if high > last else last
        table = np.zeros((final - first + 1, 2, self.frequencies.size), dtype=np.float64)
        filled = np.zeros(final - first + 1, dtype=bool)
        shift = self._first_row - first
        table[shift : shift + size] = self._table
        filled[shift : shift + size] = self._filled
        self._first_row, self._table, self._filled = first, table, filled

    def _coefficients(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        low, high = int(rows.min()), int(rows.max())
        with self._lock:
            self._cover(low, high)
            window = np.arange(low, high + 1) - self._first_row
            for index in window[~self._filled[window]].tolist():
                rng = keyed_generator(self.seed, self._first_row + index, 0, TRIG_STREAM)
                self._table[index] = rng.standard_normal((2, self.frequencies.size))
                self._filled[index] = True
            gathered = self._table[rows.astype(np.int64) - self._first_row]
        return gathered[..., 0, :], gathered[..., 1, :]

    def evaluate(self, rows: np.ndarray, args: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if args.size == 0:
            return _ZeroBackend().evaluate(rows, args)
        cos_part, sin_part = self._coefficients(rows)
        phase = args[..., None] * self.frequencies
        even = cos_part * np.cos(phase) + sin_part * np.sin(phase)
        odd = sin_part * np.cos(phase) - cos_part * np.sin(phase)
        value = self.amplitude * _ordered_sum(self.weights * even)
        first = self.amplitude * _ordered_sum(self.weights * self.frequencies * odd)
        second = -self.amplitude * _ordered_sum(self.weights * self.frequencies**2 * even)
        return value, first, second

    def derivative(self, rows: np.ndarray, args: np.ndarray) -> np.ndarray:
        if args.size == 0:
            return np.zeros(args.shape, dtype=np.float64)
        cos_part, sin_part = self._coefficients(rows)
        phase = args[..., None] * self.frequencies
        odd = sin_part * np.cos(phase) - cos_part * np.sin(phase)
        return self.amplitude * _ordered_sum(self.weights * self.frequencies * odd)

    def lipschitz_estimate(self) -> float:
        return self.amplitude * TRIG_COEFFICIENT_BOUND * float(np.sum(np.abs(self.weights) * self.frequencies**2))


def _make_backend(spec: PotentialSpec) -> _Backend:
    match spec.kind:
        case PotentialKind.ZERO:
            return _ZeroBackend()
        case PotentialKind.SHOT_NOISE:
            assert isinstance(spec, ShotNoiseSpec)
            return _ShotNoiseBackend(spec)
        case PotentialKind.RANDOM_TRIG:
            assert isinstance(spec, RandomTrigSpec)
            return _RandomTrigBackend(spec)
        case _:
            raise ValueError(f"Unknown potential kind {spec.kind}")


class PotentialField:
    """
    Seeded, lazily evaluated random environment F = (F_k) with analytic first and second derivatives.

    A field may be a transformed view of another one: with row shift m, offset c and shear s it evaluates
    G_k(r) = F_{k+m}(r + c - k·s). Views share the generated randomness of their source.
    """

    def __init__(
        self,
        spec: PotentialSpec,
        row_shift: int = 0,
        offset: float = 0.0,
        shear: float = 0.0,
        _backend: _Backend | None = None,
    ):
        if row_shift < 0:
            raise ValueError(f"row shift must be non-negative, got {row_shift}")
        self.spec = spec
        self.row_shift = row_shift
        self.offset = offset
        self.shear = shear
        self._backend = _backend if _backend is not None else _make_backend(spec)

    def __repr__(self) -> str:
        return (
            f"PotentialField(kind={self.spec.kind.value}, seed={self.spec.seed}, row_shift={self.row_shift}, "
            f"offset={self.offset}, shear={self.shear})"
        )

    @property
    def kind(self) -> PotentialKind:
        return self.spec.kind

    @property
    def is_zero(self) -> bool:
        return self.spec.kind is PotentialKind.ZERO or self.spec.amplitude == 0

    def _locate(self, k: Any, r: Any) -> tuple[np.ndarray, np.ndarray, bool]:
        k_array, r_array = np.broadcast_arrays(np.asarray(k), np.asarray(r, dtype=np.float64))
        if not np.issubdtype(k_array.dtype, np.integer):
            raise TypeError("row index k must be an integer")
        if np.any(k_array < 1):
            raise ValueError("the potential is defined for rows k ≥ 1 only")
        scalar = k_array.ndim == 0
        rows = k_array.astype(np.int64) + self.row_shift
        args = r_array
        if self.offset != 0.0 or self.shear != 0.0:
            args = r_array + self.offset - k_array * self.shear
        return rows, args, scalar

    def evaluate(self, k: Any, r: Any) -> tuple[Any, Any, Any]:
        """
        Evaluate F_k(r), F'_k(r), F''_k(r)
        :param k: row index ≥ 1, integer or integer array
        :param r: position, broadcast against k
        :return: floats for scalar input, arrays otherwise
        """
        rows, args, scalar = self._locate(k, r)
        value, first, second = self._backend.evaluate(rows, args)
        if scalar:
            return float(value), float(first), float(second)
        return value, first, second

    def derivative(self, k: Any, r: Any) -> np.ndarray:
        """F'_k(r) as an array broadcast over (k, r)"""
        rows, args, _ = self._locate(k, r)
        return self._backend.derivative(rows, args)

    def value(self, k: Any, r: Any) -> np.ndarray:
        """F_k(r) as an array broadcast over (k, r)"""
        rows, args, _ = self._locate(k, r)
        return self._backend.evaluate(rows, args)[0]

    def lipschitz_estimate(self) -> float:
        """High-probability bound on sup |f'_k| used for the explicit step-size condition"""
        return self._backend.lipschitz_estimate()

    def sheared(self, v: float) -> "PotentialField":
        """(Ξ^v F)_k(r) = F_k(r - k·v)"""
        return PotentialField(self.spec, self.row_shift, self.offset, self.shear + v, self._backend)

    def translated(self, rows: int, a: float) -> "PotentialField":
        """(Θ^{rows,a} F)_k(r) = F_{k+rows}(r + a)"""
        offset = self.offset + a - rows * self.shear
        return PotentialField(self.spec, self.row_shift + rows, offset, self.shear, self._backend)


ZERO_POTENTIAL = PotentialField(ZeroPotentialSpec())


def build_potential(spec: PotentialSpec) -> PotentialField:
    logger.debug(f"Building {spec.kind.value} potential with seed {spec.seed}")
    return PotentialField(spec)


def evaluate(field: PotentialField, k: Any, r: Any) -> tuple[Any, Any, Any]:
    """(F_k(r), F'_k(r), F''_k(r))"""
    return field.evaluate(k, r)


def drift_array(field: PotentialField, coords: np.ndarray, right_boundary: Any) -> np.ndarray:
    """
    Δx - F'(x) for a batch of chains
    :param field: potential
    :param coords: array of shape (..., n)
    :param right_boundary: frozen x_{n+1}, scalar or shape (...)
    :return:
    """
    coords = np.asarray(coords, dtype=np.float64)
    result = laplacian(coords, right_boundary)
    if field.is_zero:
        return result
    k = np.arange(1, coords.shape[-1] + 1)
    return result - field.derivative(k, coords)


def drift(field: PotentialField, x: PolymerState) -> np.ndarray:
    """-∇_k E(x) = Δ_k x + f_k(x_k) with f_k = -F'_k"""
    return drift_array(field, x.coords, x.right_boundary)


def shear_potential(field: PotentialField, v: float) -> PotentialField:
    return field.sheared(v)


def translate_potential(field: PotentialField, rows: int, a: float) -> PotentialField:
    return field.translated(rows, a)


class GrowthReport(BaseModel):
    """
    Advisory fit of sup_{|r| ≤ R} |f_k(r)| ≈ C·(1 + log k + log⁺ R)
    """

    model_config = ConfigDict(frozen=True)

    constant: float
    worst_k: int
    worst_ratio: float
    r_window: float
    sup_by_k: list[float]


def validate_growth(
    field: PotentialField,
    k_max: int,
    r_window: float,
    resolution: float = 0.02,
    rows_per_chunk: int = 16,
) -> GrowthReport:
    """
    Scan |f_k| on a grid over [-r_window, r_window] for k ≤ k_max and fit the logarithmic growth envelope
    :param field: potential to scan
    :param k_max: largest row
    :param r_window: half-width of the scanned interval
    :param resolution: grid spacing
    :param rows_per_chunk: rows evaluated per vectorized batch
    :return:
    """
    if k_max < 1 or r_window <= 0:
        raise ValueError("k_max must be positive and r_window strictly positive")
    grid = np.arange(-r_window, r_window + resolution / 2, resolution)
    sups = np.zeros(k_max, dtype=np.float64)
    for first in range(1, k_max + 1, rows_per_chunk):
        rows = np.arange(first, min(first + rows_per_chunk, k_max + 1))
        slopes = field.derivative(rows[:, None], grid[None, :])
        sups[rows - 1] = np.max(np.abs(slopes), axis=1)
    k = np.arange(1, k_max + 1, dtype=np.float64)
    scale = 1.0 + np.log(k) + max(0.0, math.log(r_window))
    constant = float(np.dot(sups, scale) / np.dot(scale, scale))
    ratios = sups / scale
    worst = int(np.argmax(ratios))
    logger.info(f"Growth fit C={constant:.4g}; worst row k={worst + 1} with sup/scale={ratios[worst]:.4g}")
    return GrowthReport(
        constant=constant,
        worst_k=worst + 1,
        worst_ratio=float(ratios[worst]),
        r_window=r_window,
        sup_by_k=sups.tolist(),
    )


def find_flat_window(
    field: PotentialField,
    n_probe: int,
    half_width: float,
    delta: float,
    start: float = 0.0,
    max_windows: int = 100_000,
    resolution: float = 0.02,
    batch: int = 64,
) -> float | None:
    """
    Find a center a with sup_{k ≤ n_probe, |r - a| ≤ half_width} |f_k(r)| ≤ delta
    :param field: potential to scan
    :param n_probe: number of rows that must be flat simultaneously
    :param half_width: half-width l of the window
    :param delta: flatness threshold
    :param start: first candidate center; candidates advance by half_width
    :param max_windows: candidates tried before giving up
    :param resolution: grid spacing inside a window
    :param batch: candidates checked per vectorized evaluation
    :return: the center, or None if no candidate qualified
    """
    if n_probe < 1 or half_width <= 0 or delta < 0:
        raise ValueError("n_probe must be positive, half_width positive and delta non-negative")
    offsets = np.arange(-half_width, half_width + resolution / 2, resolution)
    rows = np.arange(1, n_probe + 1)[:, None, None]
    for first in range(0, max_windows, batch):
        centers = start + half_width * np.arange(first, min(first + batch, max_windows))
        positions = centers[:, None] + offsets[None, :]
        slopes = np.abs(field.derivative(rows, positions[None, :, :]))
        flat = np.max(slopes, axis=(0, 2)) <= delta
        if np.any(flat):
            center = float(centers[int(np.argmax(flat))])
            logger.info(f"Flat window of half-width {half_width} found at a={center:g}")
            return center
    logger.warning(f"No flat window found among {max_windows} candidates starting at {start:g}")
    return None
