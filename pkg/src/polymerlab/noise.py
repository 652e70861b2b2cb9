import logging
import math
import threading
from collections.abc import Callable, Sequence

import numpy as np

from polymerlab.models.config import NoiseSpec, SteerMode, SteerWindow
from polymerlab.models.error import InfeasibleSteeringError
from polymerlab.rng import NOISE_STREAM, STEER_STREAM, keyed_generator

logger = logging.getLogger(__name__)

NOISE_BLOCK = 256
MAX_STEER_ATTEMPTS = 256


def grid_index(time: float, dt: float) -> int:
    """Grid cell of `time`; rejects times off the grid"""
    cells = time / dt
    index = round(cells)
    if abs(cells - index) > 1e-9 * max(1.0, abs(cells)):
        raise ValueError(f"time {time} is not a multiple of dt={dt}")
    return int(index)


class _SteeringPlan:
    """
    Steering windows pinned to absolute grid cells.

    Steered increments of a coordinate are built once, from the path origin to the end of the last window,
    and cached; outside that stretch the base increments are used unchanged.
    """

    def __init__(self, seed: int, dt: float, windows: Sequence[SteerWindow], origin: int):
        self.seed = seed
        self.dt = dt
        self.windows = tuple(sorted(windows, key=lambda window: window.t_start))
        self.origin = origin
        self.ranges = [
            (origin + grid_index(window.t_start, dt), origin + grid_index(window.t_end, dt)) for window in self.windows
        ]
        for left, right in zip(self.ranges, self.ranges[1:], strict=False):
            if right[0] < left[1]:
                raise ValueError("steering windows must not overlap")
        self.end = self.ranges[-1][1]
        self._lock = threading.Lock()
        self._cache: dict[int, np.ndarray] = {}

    def coordinate(self, k: int, base: Callable[[int, int], np.ndarray]) -> np.ndarray:
        """Steered increments of coordinate k on the absolute cells [origin, end)"""
        with self._lock:
            increments = self._cache.get(k)
            if increments is None:
                increments = self._build(k, base)
                increments.setflags(write=False)
                self._cache[k] = increments
            return increments

    def _fresh(self, k: int, index: int, block: int, count: int) -> np.ndarray:
        rng = keyed_generator(self.seed, k, block, STEER_STREAM + index)
        return rng.standard_normal(count) * math.sqrt(self.dt)

    def _build(self, k: int, base: Callable[[int, int], np.ndarray]) -> np.ndarray:
        increments = base(self.origin, self.end - self.origin).copy()
        envelope = k**0.125
        for index, (window, (low, high)) in enumerate(zip(self.windows, self.ranges, strict=True)):
            before = increments[: low - self.origin]
            level = float(np.cumsum(before)[-1]) if before.size else 0.0
            proposal = increments[low - self.origin : high - self.origin]
            if window.mode is SteerMode.BOUNDED:
                steered = self._bounded(k, index, level, window, proposal, envelope)
            else:
                steered = self._pinned(k, index, level, window, proposal, envelope)
            increments[low - self.origin : high - self.origin] = steered
        logger.debug(f"Steered coordinate {k} over cells [{self.origin}, {self.end})")
        return increments

    def _bounded(
        self,
        k: int,
        index: int,
        level: float,
        window: SteerWindow,
        proposal: np.ndarray,
        envelope: float,
    ) -> np.ndarray:
        limit = window.bound * envelope
        if abs(window.target) >= limit or abs(level) > limit:
            raise InfeasibleSteeringError(
                f"coordinate {k}: bounded window cannot keep |W| ≤ {limit:.4g} while moving from {level:.4g} to "
                f"{window.target:.4g}",
            )
        length = proposal.size
        tau = np.arange(1, length + 1) / length
        for attempt in range(MAX_STEER_ATTEMPTS):
            steps = proposal if attempt == 0 else self._fresh(k, index, attempt, length)
            walk = np.cumsum(steps)
            bridge = walk - tau * walk[-1] + tau * (window.target - level)
            candidate = np.diff(bridge, prepend=0.0)
            values = np.cumsum(np.concatenate(([level], candidate)))[1:]
            if np.all(np.abs(values) <= limit):
                return candidate
        raise InfeasibleSteeringError(
            f"coordinate {k}: no bridge within |W| ≤ {limit:.4g} after {MAX_STEER_ATTEMPTS} attempts",
        )

    def _pinned(
        self,
        k: int,
        index: int,
        level: float,
        window: SteerWindow,
        proposal: np.ndarray,
        envelope: float,
    ) -> np.ndarray:
        band = window.epsilon**2 * envelope
        segment = math.floor((band / 3.0) ** 2 / self.dt)
        if segment < 2:
            raise InfeasibleSteeringError(
                f"coordinate {k}: band {band:.4g} is too narrow for dt={self.dt} (needs segments of ≥ 2 cells)",
            )
        length = proposal.size
        cells = np.arange(0, length + 1)
        if k == 1:
            targets = (cells * self.dt + 1.0) * window.target
        else:
            targets = np.full(length + 1, window.target, dtype=np.float64)
        deviation = level - targets[0]
        if abs(deviation) > band:
            raise InfeasibleSteeringError(
                f"coordinate {k}: pinned window starts {deviation:.4g} away from its target, outside the band "
                f"{band:.4g}; precede it by a bounded window ending at the target",
            )
        steered = np.empty(length, dtype=np.float64)
        value = level
        for number, first in enumerate(range(0, length, segment)):
            size = min(segment, length - first)
            tau = np.arange(1, size + 1) / size
            goal = targets[first + 1 : first + size + 1]
            for attempt in range(MAX_STEER_ATTEMPTS):
                if attempt == 0:
                    steps = proposal[first : first + size]
                else:
                    steps = self._fresh(k, index, number * MAX_STEER_ATTEMPTS + attempt, size)
                walk = np.cumsum(steps)
                path = goal + deviation * (1.0 - tau) + walk - tau * walk[-1]
                candidate = np.diff(path, prepend=value)
                values = np.cumsum(np.concatenate(([value], candidate)))[1:]
                if np.all(np.abs(values - goal) <= band):
                    break
            else:
                raise InfeasibleSteeringError(
                    f"coordinate {k}: segment {number} left the band {band:.4g} in {MAX_STEER_ATTEMPTS} attempts",
                )
            steered[first : first + size] = candidate
            value = float(values[-1])
            deviation = value - float(goal[-1])
        return steered


class NoisePath:
    """
    Two-sided Wiener increments on a fixed grid.

    The increment of coordinate k in cell j is N(0, dt) and a pure function of (seed, k, j + shift);
    increments are generated in blocks of NOISE_BLOCK cells per counter key.
    """

    def __init__(self, seed: int, dt: float, shift: int = 0, _plan: _SteeringPlan | None = None):
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.seed = seed
        self.dt = dt
        self.shift = shift
        self._plan = _plan
        self._sqrt_dt = math.sqrt(dt)

    @classmethod
    def from_spec(cls, spec: NoiseSpec, seed: int | None = None) -> "NoisePath":
        """Path described by a noise config, optionally with a different seed"""
        path = cls(spec.seed if seed is None else seed, spec.dt)
        return path.steered(spec.steering)

    def __repr__(self) -> str:
        return f"NoisePath(seed={self.seed}, dt={self.dt}, shift={self.shift}, windows={len(self.steering)})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NoisePath):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.dt == other.dt
            and self.shift == other.shift
            and self._plan_key() == other._plan_key()
        )

    def __hash__(self) -> int:
        return hash((self.seed, self.dt, self.shift, self._plan_key()))

    def _plan_key(self) -> tuple | None:
        if self._plan is None:
            return None
        return self._plan.origin, self._plan.windows

    @property
    def steering(self) -> tuple[SteerWindow, ...]:
        return self._plan.windows if self._plan is not None else ()

    def _block(self, k: int, block: int) -> np.ndarray:
        rng = keyed_generator(self.seed, k, block, NOISE_STREAM)
        return rng.standard_normal(NOISE_BLOCK) * self._sqrt_dt

    def _base(self, k: int, start: int, count: int) -> np.ndarray:
        if count <= 0:
            return np.zeros(0, dtype=np.float64)
        first_block = start // NOISE_BLOCK
        last_block = (start + count - 1) // NOISE_BLOCK
        values = np.concatenate([self._block(k, block) for block in range(first_block, last_block + 1)])
        offset = start - first_block * NOISE_BLOCK
        return values[offset : offset + count]

    def increments(self, k: int, start: int, count: int) -> np.ndarray:
        """
        Increments of coordinate k for the cells start..start+count-1
        :param k: coordinate, k ≥ 1
        :param start: first cell, may be negative
        :param count: number of cells
        :return:
        """
        if k < 1:
            raise ValueError(f"noise coordinates start at k=1, got {k}")
        first = start + self.shift
        values = self._base(k, first, count)
        plan = self._plan
        if plan is None or first >= plan.end or first + count <= plan.origin:
            return values
        steered = plan.coordinate(k, lambda low, size: self._base(k, low, size))
        values = values.copy()
        low = max(first, plan.origin)
        high = min(first + count, plan.end)
        values[low - first : high - first] = steered[low - plan.origin : high - plan.origin]
        return values

    def increment(self, k: int, j: int) -> float:
        return float(self.increments(k, j, 1)[0])

    def block(self, ks: Sequence[int] | np.ndarray, start: int, count: int) -> np.ndarray:
        """Increments of several coordinates, shape (count, len(ks))"""
        return np.stack([self.increments(int(k), start, count) for k in ks], axis=1)

    def cumulative(self, k: int, j: int) -> float:
        """W_k(j·dt) with W_k(0) = 0 on both sides of the origin"""
        if j == 0:
            return 0.0
        if j > 0:
            return float(np.cumsum(self.increments(k, 0, j))[-1])
        return -float(np.cumsum(self.increments(k, j, -j))[-1])

    def time_shift(self, s: float) -> "NoisePath":
        """θ^s: increment(k, j) of the result equals increment(k, j + s/dt) of this path"""
        return NoisePath(self.seed, self.dt, self.shift + grid_index(s, self.dt), self._plan)

    def steered(self, windows: Sequence[SteerWindow]) -> "NoisePath":
        """Path conditioned on the steering windows, measured from this path's time 0"""
        if not windows:
            return self
        if self._plan is not None:
            raise ValueError("path is already steered")
        plan = _SteeringPlan(self.seed, self.dt, windows, self.shift)
        logger.info(f"Steering noise seed {self.seed} through {len(plan.windows)} window(s)")
        return NoisePath(self.seed, self.dt, self.shift, plan)


def increment(path: NoisePath, k: int, j: int) -> float:
    return path.increment(k, j)


def time_shift(path: NoisePath, s: float) -> NoisePath:
    return path.time_shift(s)


def steered_path(base: NoisePath, windows: Sequence[SteerWindow]) -> NoisePath:
    return base.steered(windows)


def cumulative(path: NoisePath, k: int, j: int) -> float:
    return path.cumulative(k, j)


def tame_noise_windows(a: float, t1: float, t2: float, bound: float, epsilon: float) -> list[SteerWindow]:
    """
    Windows of the tame-noise event: |W_k| ≤ M·k^{1/8} on [0, t1] ending at a, then |W_k - a| ≤ ε²·k^{1/8}
    on [t1, t2] (coordinate 1 follows (t - t1 + 1)·a)
    """
    return [
        SteerWindow(mode=SteerMode.BOUNDED, t_start=0.0, t_end=t1, target=a, bound=bound, epsilon=epsilon),
        SteerWindow(mode=SteerMode.PINNED, t_start=t1, t_end=t2, target=a, bound=bound, epsilon=epsilon),
    ]


class NoiseReader:
    """
    Sequential cursor over the increments of coordinates 1..n for one shared path or one path per member
    """

    def __init__(self, paths: Sequence[NoisePath], n: int, block: int = NOISE_BLOCK):
        if not paths:
            raise ValueError("at least one noise path is required")
        self._paths = list(paths)
        self._ks = np.arange(1, n + 1)
        self._block = block
        self._start: int | None = None
        self._buffer = np.zeros((0, len(self._paths), n), dtype=np.float64)

    @property
    def members(self) -> int:
        return len(self._paths)

    def at(self, j: int) -> np.ndarray:
        """Increments of cell j, shape (members, n)"""
        if self._start is None or not self._start <= j < self._start + self._block:
            self._start = (j // self._block) * self._block
            self._buffer = np.stack([path.block(self._ks, self._start, self._block) for path in self._paths], axis=1)
        return self._buffer[j - self._start]
