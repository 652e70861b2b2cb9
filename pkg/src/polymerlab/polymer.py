import logging
import math
from enum import Enum
from typing import Any

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    PositiveFloat,
    computed_field,
    field_serializer,
    field_validator,
    model_validator,
)

logger = logging.getLogger(__name__)

DEFAULT_ORDER_TOLERANCE = 1e-12


class NormExponent(str, Enum):
    """
    Distinguished exponent values of the weighted norms
    """

    INFINITY = "inf"


class NormSpec(BaseModel):
    """
    Weighted norm ‖x‖_{α,p} = (Σ_k |x_k / k^α|^p)^{1/p}, sup_k |x_k| / k^α for p = ∞
    """

    model_config = ConfigDict(frozen=True)

    alpha: PositiveFloat
    p: NormExponent | float

    @field_validator("p", mode="before")
    @classmethod
    def _parse_exponent(cls, value: Any) -> Any:
        if isinstance(value, str) and value.lower() in ("inf", "infinity", "∞"):
            return NormExponent.INFINITY
        if isinstance(value, int | float) and math.isinf(value) and value > 0:
            return NormExponent.INFINITY
        return value

    @field_validator("p")
    @classmethod
    def _check_exponent(cls, value: NormExponent | float) -> NormExponent | float:
        if not isinstance(value, NormExponent) and value < 1:
            raise ValueError(f"norm exponent must be in [1, ∞], got {value}")
        return value

    @property
    def is_sup(self) -> bool:
        return self.p is NormExponent.INFINITY

    def is_admissible(self) -> bool:
        """α·p > 1, the parameter range in which the norm controls the polymer dynamics"""
        if self.is_sup:
            return True
        return self.alpha * float(self.p) > 1

    def numpy_order(self) -> float:
        return math.inf if self.is_sup else float(self.p)


LATTICE_NORM = NormSpec(alpha=1.0, p=NormExponent.INFINITY)
STAR_NORM = NormSpec(alpha=0.75, p=2.0)


class PolymerState(BaseModel):
    """
    Galerkin truncation of a pinned chain: x_0 = 0, active coordinates x_1..x_n and the frozen value x_{n+1}
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    coords: np.ndarray
    right_boundary: float

    @model_validator(mode="before")
    @classmethod
    def _check_declared_length(cls, data: Any) -> Any:
        if isinstance(data, dict) and "n" in data:
            data = dict(data)
            declared = data.pop("n")
            coords = data.get("coords")
            if coords is not None and len(coords) != declared:
                raise ValueError(f"n={declared} does not match {len(coords)} coords")
        return data

    @field_validator("coords", mode="before")
    @classmethod
    def _as_array(cls, value: Any) -> np.ndarray:
        coords = np.array(value, dtype=np.float64)
        if coords.ndim != 1 or coords.size < 1:
            raise ValueError("coords must be a non-empty one-dimensional sequence")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coords must be finite")
        coords.setflags(write=False)
        return coords

    @field_validator("right_boundary")
    @classmethod
    def _check_boundary(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("right_boundary must be finite")
        return value

    @field_serializer("coords")
    def _serialize_coords(self, coords: np.ndarray) -> list[float]:
        return coords.tolist()

    @computed_field  # type: ignore[prop-decorator]
    @property
    def n(self) -> int:
        return int(self.coords.size)

    @classmethod
    def from_profile(cls, values: Any) -> "PolymerState":
        """
        Build a state from x_1..x_{n+1}; the last value becomes the frozen boundary
        :param values: n + 1 values, interior followed by boundary
        :return:
        """
        profile = np.asarray(values, dtype=np.float64)
        if profile.ndim != 1 or profile.size < 2:
            raise ValueError("a profile needs at least one interior value and the boundary")
        return cls(coords=profile[:-1], right_boundary=float(profile[-1]))

    def profile(self) -> np.ndarray:
        """x_0..x_{n+1} including the pinned origin and the frozen boundary"""
        return np.concatenate(([0.0], self.coords, [self.right_boundary]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolymerState):
            return NotImplemented
        return self.right_boundary == other.right_boundary and np.array_equal(self.coords, other.coords)

    __hash__ = None  # type: ignore[assignment]


class Ray(BaseModel):
    """
    Straight chain (r^u + a)_k = u·k + a
    """

    model_config = ConfigDict(frozen=True)

    slope: float
    offset: float = 0.0

    def materialize(self, n: int) -> PolymerState:
        """
        Truncate the ray at n with the consistent frozen boundary u(n+1) + a
        :param n: number of active coordinates
        :return:
        """
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        values = self.slope * np.arange(1, n + 2, dtype=np.float64) + self.offset
        return PolymerState.from_profile(values)


class SlopeEstimate(BaseModel):
    """
    Tail least-squares slope with the (v-, v+) bracket of x_k / k over the same window
    """

    model_config = ConfigDict(frozen=True)

    slope: float
    lower: float
    upper: float
    window: int

    @property
    def width(self) -> float:
        return self.upper - self.lower


def laplacian(coords: np.ndarray, right_boundary: np.ndarray | float) -> np.ndarray:
    """
    Discrete Laplacian of (a batch of) truncated chains
    :param coords: array of shape (..., n)
    :param right_boundary: frozen x_{n+1}, scalar or shape (...)
    :return: array of shape (..., n)
    """
    coords = np.asarray(coords, dtype=np.float64)
    padded = np.zeros(coords.shape[:-1] + (coords.shape[-1] + 2,), dtype=np.float64)
    padded[..., 1:-1] = coords
    padded[..., -1] = right_boundary
    return padded[..., :-2] - 2.0 * padded[..., 1:-1] + padded[..., 2:]


def discrete_laplacian(x: PolymerState) -> np.ndarray:
    """
    Δ_k x = x_{k-1} - 2x_k + x_{k+1} with x_0 = 0 and x_{n+1} the frozen boundary
    """
    return laplacian(x.coords, x.right_boundary)


def weighted_norm(x: "PolymerState | np.ndarray | list[float]", spec: NormSpec) -> Any:
    """
    Evaluate the (α, p) weighted norm
    :param x: state, or array whose last axis is indexed by k = 1..n
    :param spec: norm parameters
    :return: float for a single chain, array for a batch
    """
    values = x.coords if isinstance(x, PolymerState) else np.asarray(x, dtype=np.float64)
    k = np.arange(1, values.shape[-1] + 1, dtype=np.float64)
    result = np.linalg.norm(np.abs(values) / k**spec.alpha, ord=spec.numpy_order(), axis=-1)
    if np.ndim(result) == 0:
        return float(result)
    return result


def distance(x: PolymerState, y: PolymerState, spec: NormSpec = LATTICE_NORM) -> float:
    """Weighted norm of the coordinate difference"""
    _check_same_length(x, y)
    return float(weighted_norm(x.coords - y.coords, spec))


def _check_same_length(x: PolymerState, y: PolymerState) -> None:
    if x.n != y.n:
        raise ValueError(f"states have different lengths: {x.n} != {y.n}")


def partial_order_leq(x: PolymerState, y: PolymerState, tolerance: float = DEFAULT_ORDER_TOLERANCE) -> bool:
    """
    x ⪯ y up to tolerance: x_k ≤ y_k + ε for every k including the frozen boundary
    """
    _check_same_length(x, y)
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    return bool(np.all(x.coords <= y.coords + tolerance) and x.right_boundary <= y.right_boundary + tolerance)


def crossing_indices(x: PolymerState, y: PolymerState) -> list[int]:
    """1-based indices k with x_k < y_k"""
    _check_same_length(x, y)
    return (np.flatnonzero(x.coords < y.coords) + 1).tolist()


def shear(x: PolymerState, v: float) -> PolymerState:
    """
    (Ξ^v x)_k = x_k + k·v applied to the active coordinates and the frozen boundary
    """
    n = x.n
    k = np.arange(1, n + 1, dtype=np.float64)
    return PolymerState(coords=x.coords + k * v, right_boundary=x.right_boundary + (n + 1) * v)


def estimate_slope(x: PolymerState, tail_fraction: float = 0.5) -> SlopeEstimate:
    """
    Estimate the asymptotic slope from the tail of a finite chain
    :param x: chain
    :param tail_fraction: share of the coordinates, counted from k = n, that form the window
    :return: least-squares slope and (min, max) of x_k / k over the window
    """
    if not 0 < tail_fraction <= 1:
        raise ValueError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    window = math.ceil(tail_fraction * x.n)
    if window < 2:
        raise ValueError(f"slope window of {window} point(s) is degenerate")
    k = np.arange(x.n - window + 1, x.n + 1, dtype=np.float64)
    tail = x.coords[-window:]
    slope = float(np.polyfit(k, tail, 1)[0])
    ratios = tail / k
    return SlopeEstimate(slope=slope, lower=float(ratios.min()), upper=float(ratios.max()), window=window)
