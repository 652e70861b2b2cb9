import csv
import hashlib
import logging
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import linalg

from polymerlab.models.config import Scheme, SdeConfig
from polymerlab.models.error import IntegrationError, StepSizeError
from polymerlab.noise import NoisePath, NoiseReader
from polymerlab.polymer import PolymerState
from polymerlab.potential import ZERO_POTENTIAL, PotentialField, drift_array

logger = logging.getLogger(__name__)

TRAJECTORY_MAGIC = b"PLTRAJ01"
TRAJECTORY_VERSION = 1
TRAJECTORY_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("n", "<u4"),
        ("dt", "<f8"),
        ("right_boundary", "<f8"),
        ("count", "<u8"),
    ],
)

Observer = Callable[[int, float, np.ndarray], None]
"""Called with (step, time, coords of shape (batch, n)) at t = 0 and after every step"""


def _record_dtype(n: int) -> np.dtype:
    return np.dtype([("t", "<f8"), ("x", "<f8", (n,))])


def state_digest(x: PolymerState) -> str:
    """Short content hash of a state"""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(x.coords, dtype="<f8").tobytes())
    digest.update(np.float64(x.right_boundary).astype("<f8").tobytes())
    return digest.hexdigest()[:16]


class Provenance(BaseModel):
    """
    Inputs that determine a trajectory besides its config
    """

    model_config = ConfigDict(frozen=True)

    potential_kind: str
    potential_seed: int
    noise_seed: int | None
    initial_digest: str


class Trajectory(BaseModel):
    """
    Strided snapshots of one solution of the truncated SDE
    """

    model_config = ConfigDict(frozen=True)

    config: SdeConfig
    times: list[float]
    states: list[PolymerState]
    provenance: Provenance | None = None

    @property
    def initial(self) -> PolymerState:
        return self.states[0]

    @property
    def final(self) -> PolymerState:
        return self.states[-1]

    def write_csv(self, path: Path) -> Path:
        """Long format with columns t, k, x_k"""
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as csvfile:
            writer = csv.writer(csvfile)
            writer.writerow(["t", "k", "x_k"])
            for time, state in zip(self.times, self.states, strict=True):
                for k, value in enumerate(state.coords.tolist(), start=1):
                    writer.writerow([time, k, value])
        return path

    def write_binary(self, path: Path) -> Path:
        """Little-endian dump: header followed by one (t, x_1..x_n) record per snapshot"""
        n = self.initial.n
        header = np.zeros(1, dtype=TRAJECTORY_HEADER)
        header["magic"] = TRAJECTORY_MAGIC
        header["version"] = TRAJECTORY_VERSION
        header["n"] = n
        header["dt"] = self.config.dt
        header["right_boundary"] = self.initial.right_boundary
        header["count"] = len(self.states)
        records = np.zeros(len(self.states), dtype=_record_dtype(n))
        records["t"] = self.times
        records["x"] = np.stack([state.coords for state in self.states])
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as handle:
            header.tofile(handle)
            records.tofile(handle)
        return path

    @classmethod
    def read_binary(cls, path: Path) -> "Trajectory":
        """Load a binary dump; the config is reduced to what the header records"""
        with path.open("rb") as handle:
            header = np.fromfile(handle, dtype=TRAJECTORY_HEADER, count=1)
            if header.size != 1 or bytes(header["magic"][0]) != TRAJECTORY_MAGIC:
                raise ValueError(f"{path} is not a polymerlab trajectory dump")
            if int(header["version"][0]) != TRAJECTORY_VERSION:
                raise ValueError(f"unsupported trajectory dump version {int(header['version'][0])}")
            n = int(header["n"][0])
            count = int(header["count"][0])
            records = np.fromfile(handle, dtype=_record_dtype(n), count=count)
        if records.size != count:
            raise ValueError(f"{path} is truncated: expected {count} records, found {records.size}")
        boundary = float(header["right_boundary"][0])
        times = records["t"].tolist()
        states = [PolymerState(coords=row, right_boundary=boundary) for row in records["x"]]
        config = SdeConfig(n=n, dt=float(header["dt"][0]), t_end=times[-1] if times else 0.0)
        return cls(config=config, times=times, states=states)


def step_condition_bound(field: PotentialField, cfg: SdeConfig) -> float:
    """L_f used by the explicit step-size condition"""
    return cfg.lipschitz_bound if cfg.lipschitz_bound is not None else field.lipschitz_estimate()


def check_step_condition(field: PotentialField, cfg: SdeConfig) -> None:
    """
    Explicit Euler-Maruyama preserves the partial order only if dt·(2 + L_f) ≤ 1
    :raises StepSizeError:
    """
    if cfg.scheme is not Scheme.EXPLICIT_EM or not cfg.enforce_step_condition:
        return
    bound = step_condition_bound(field, cfg)
    if cfg.dt * (2.0 + bound) > 1.0:
        raise StepSizeError(
            f"dt={cfg.dt} violates dt·(2 + L_f) ≤ 1 with L_f={bound:.4g}; reduce dt, switch to "
            f"{Scheme.SEMI_IMPLICIT.value} or disable enforce_step_condition",
        )


class GalerkinIntegrator:
    """
    Advances a batch of truncated chains x ∈ R^{batch×n} with frozen right boundaries on the noise grid.

    The computation of a step depends only on the current state and the increments of its cell, so
    splitting an integration into consecutive pieces reproduces the unsplit result bitwise.
    """

    def __init__(self, field: PotentialField, cfg: SdeConfig, n: int):
        check_step_condition(field, cfg)
        self.field = field
        self.cfg = cfg
        self.n = n
        self.dt = cfg.dt
        self.sigma = cfg.noise_scale
        self._k = np.arange(1, n + 1)
        self._banded: np.ndarray | None = None
        if cfg.scheme is Scheme.SEMI_IMPLICIT:
            banded = np.zeros((3, n), dtype=np.float64)
            banded[0, 1:] = -self.dt
            banded[1, :] = 1.0 + 2.0 * self.dt
            banded[2, :-1] = -self.dt
            self._banded = banded

    def _step(self, coords: np.ndarray, boundary: np.ndarray, noise: np.ndarray | None) -> np.ndarray:
        if self._banded is None:
            updated = coords + self.dt * drift_array(self.field, coords, boundary)
            if noise is not None:
                updated = updated + noise
            return updated
        rhs = coords.copy()
        if not self.field.is_zero:
            rhs = rhs - self.dt * self.field.derivative(self._k, coords)
        if noise is not None:
            rhs = rhs + noise
        rhs[:, -1] += self.dt * boundary
        return linalg.solve_banded((1, 1), self._banded, rhs.T, check_finite=False).T

    def advance(
        self,
        coords: np.ndarray,
        boundary: np.ndarray,
        reader: NoiseReader | None,
        steps: int,
        start: int = 0,
        observer: Observer | None = None,
        stride: int | None = None,
    ) -> tuple[np.ndarray, list[tuple[float, np.ndarray]]]:
        """
        Integrate `steps` grid steps
        :param coords: initial coordinates, shape (batch, n)
        :param boundary: frozen boundaries, shape (batch,)
        :param reader: noise source; ignored when σ = 0
        :param steps: number of steps
        :param start: noise cell used by the first step
        :param observer: per-step callback
        :param stride: keep a snapshot every `stride` steps (t = 0 included)
        :return: final coordinates and the kept (time, coords) snapshots
        """
        coords = np.array(coords, dtype=np.float64)
        boundary = np.asarray(boundary, dtype=np.float64)
        if self.sigma != 0 and reader is None:
            raise ValueError("a noise path is required when σ > 0")
        snapshots: list[tuple[float, np.ndarray]] = []
        if stride:
            snapshots.append((0.0, coords.copy()))
        if observer is not None:
            observer(0, 0.0, coords)
        for i in range(steps):
            noise = self.sigma * reader.at(start + i) if self.sigma != 0 and reader is not None else None
            updated = self._step(coords, boundary, noise)
            if not np.all(np.isfinite(updated)):
                member = int(np.flatnonzero(~np.all(np.isfinite(updated), axis=1))[0])
                last = PolymerState(coords=coords[member], right_boundary=float(boundary[member]))
                raise IntegrationError(f"non-finite coordinates in member {member} at step {i + 1}", last, i * self.dt)
            coords = updated
            time = (i + 1) * self.dt
            if observer is not None:
                observer(i + 1, time, coords)
            if stride and (i + 1) % stride == 0:
                snapshots.append((time, coords.copy()))
        if stride and steps % stride != 0:
            snapshots.append((steps * self.dt, coords.copy()))
        logger.debug(f"Advanced {coords.shape[0]} chain(s) of length {self.n} by {steps} steps")
        return coords, snapshots


def _reader(paths: NoisePath | Sequence[NoisePath] | None, batch: int, n: int) -> NoiseReader | None:
    if paths is None:
        return None
    if isinstance(paths, NoisePath):
        return NoiseReader([paths], n)
    if len(paths) != batch:
        raise ValueError(f"expected one noise path per member ({batch}), got {len(paths)}")
    return NoiseReader(paths, n)


def _stack(states: Sequence[PolymerState]) -> tuple[np.ndarray, np.ndarray]:
    if not states:
        raise ValueError("at least one state is required")
    n = states[0].n
    if any(state.n != n for state in states):
        raise ValueError("all states of a batch must have the same length")
    coords = np.stack([state.coords for state in states])
    boundary = np.array([state.right_boundary for state in states], dtype=np.float64)
    return coords, boundary


def advance_batch(
    coords: np.ndarray,
    boundary: np.ndarray,
    field: PotentialField,
    paths: NoisePath | Sequence[NoisePath] | None,
    cfg: SdeConfig,
    steps: int,
    start: int = 0,
    observer: Observer | None = None,
) -> np.ndarray:
    """
    Array-level integration used by the experiments
    :param coords: shape (batch, n)
    :param boundary: shape (batch,)
    :param field: potential
    :param paths: one shared path, one path per member, or None for σ = 0
    :param cfg: SDE parameters
    :param steps: number of grid steps
    :param start: first noise cell
    :param observer: per-step callback
    :return: final coordinates
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    integrator = GalerkinIntegrator(field, cfg, coords.shape[1])
    reader = _reader(paths, coords.shape[0], coords.shape[1])
    final, _ = integrator.advance(coords, boundary, reader, steps, start=start, observer=observer)
    return final


def step(x: PolymerState, field: PotentialField, path: NoisePath | None, j: int, cfg: SdeConfig) -> PolymerState:
    """One grid step using the increments of cell j"""
    final = advance_batch(x.coords[None, :], np.array([x.right_boundary]), field, path, cfg, 1, start=j)
    return PolymerState(coords=final[0], right_boundary=x.right_boundary)


def _trajectories(
    states: Sequence[PolymerState],
    snapshots: list[tuple[float, np.ndarray]],
    boundary: np.ndarray,
    field: PotentialField,
    paths: NoisePath | Sequence[NoisePath] | None,
    cfg: SdeConfig,
) -> list[Trajectory]:
    times = [time for time, _ in snapshots]
    result = []
    for member, state in enumerate(states):
        if paths is None:
            noise_seed = None
        elif isinstance(paths, NoisePath):
            noise_seed = paths.seed
        else:
            noise_seed = paths[member].seed
        provenance = Provenance(
            potential_kind=field.kind.value,
            potential_seed=field.spec.seed,
            noise_seed=noise_seed,
            initial_digest=state_digest(state),
        )
        member_states = [
            PolymerState(coords=coords[member], right_boundary=float(boundary[member])) for _, coords in snapshots
        ]
        member_states[0] = state
        result.append(Trajectory(config=cfg, times=times, states=member_states, provenance=provenance))
    return result


def evolve_ensemble(
    states: Sequence[PolymerState],
    field: PotentialField,
    paths: NoisePath | Sequence[NoisePath] | None,
    cfg: SdeConfig,
    snapshot_stride: float | None = 1.0,
    full_resolution: bool = False,
    observer: Observer | None = None,
) -> list[Trajectory]:
    """
    Evolve a batch from t = 0 to cfg.t_end
    :param states: initial states of equal length
    :param field: potential shared by all members
    :param paths: one shared path (the flow of one noise realization) or one path per member
    :param cfg: SDE parameters
    :param snapshot_stride: time between kept snapshots; None keeps only the endpoints
    :param full_resolution: keep every grid step
    :param observer: per-step callback
    :return: one trajectory per member
    """
    coords, boundary = _stack(states)
    steps = cfg.steps(cfg.t_end)
    if full_resolution:
        stride = 1
    elif snapshot_stride:
        stride = max(1, cfg.steps(snapshot_stride))
    else:
        stride = max(1, steps)
    integrator = GalerkinIntegrator(field, cfg, coords.shape[1])
    reader = _reader(paths, coords.shape[0], coords.shape[1])
    _, snapshots = integrator.advance(coords, boundary, reader, steps, observer=observer, stride=stride)
    return _trajectories(states, snapshots, boundary, field, paths, cfg)


def evolve(
    x0: PolymerState,
    field: PotentialField,
    path: NoisePath | None,
    cfg: SdeConfig,
    snapshot_stride: float | None = 1.0,
    full_resolution: bool = False,
    observer: Observer | None = None,
) -> Trajectory:
    """Φ^t: evolve one chain from t = 0 to cfg.t_end"""
    return evolve_ensemble([x0], field, path, cfg, snapshot_stride, full_resolution, observer)[0]


def heat_config(cfg: SdeConfig | None, n: int, t: float) -> SdeConfig:
    """Deterministic zero-potential version of cfg running until t"""
    base = cfg if cfg is not None else SdeConfig(n=n)
    return base.model_copy(update={"n": n, "temperature": 0.0, "sigma": None, "t_end": t, "lipschitz_bound": 0.0})


def heat_flow(x0: PolymerState, t: float, cfg: SdeConfig | None = None) -> PolymerState:
    """S^t x0: the homogeneous discrete heat equation with frozen boundary"""
    return evolve(x0, ZERO_POTENTIAL, None, heat_config(cfg, x0.n, t), snapshot_stride=None).final


def heat_flow_trajectory(
    x0: PolymerState,
    t: float,
    cfg: SdeConfig | None = None,
    snapshot_stride: float | None = 1.0,
) -> Trajectory:
    return evolve(x0, ZERO_POTENTIAL, None, heat_config(cfg, x0.n, t), snapshot_stride=snapshot_stride)


def pullback_batch(
    coords: np.ndarray,
    boundary: np.ndarray,
    field: PotentialField,
    path: NoisePath,
    cfg: SdeConfig,
    t_start: float,
    observer: Observer | None = None,
) -> np.ndarray:
    """
    Time-0 states of chains started at t_start ≤ 0, driven by one two-sided noise path
    """
    if t_start > 0:
        raise ValueError(f"pullback starts at t_start ≤ 0; backward integration is not supported (got {t_start})")
    steps = cfg.steps(-t_start)
    return advance_batch(coords, boundary, field, path.time_shift(t_start), cfg, steps, observer=observer)


def pullback_evolve(
    x0: PolymerState,
    field: PotentialField,
    path: NoisePath,
    cfg: SdeConfig,
    t_start: float,
) -> PolymerState:
    """Φ^{t_start, 0} x0 using the noise on [t_start, 0]"""
    final = pullback_batch(x0.coords[None, :], np.array([x0.right_boundary]), field, path, cfg, t_start)
    return PolymerState(coords=final[0], right_boundary=x0.right_boundary)
