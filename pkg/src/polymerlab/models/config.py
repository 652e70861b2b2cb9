import json
import math
from enum import Enum
from typing import Annotated, Any, Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)

U64 = Annotated[int, Field(ge=0, lt=2**64)]


class PotentialKind(str, Enum):
    """
    Random environments that can be generated
    """

    ZERO = "zero"
    SHOT_NOISE = "shot_noise"
    RANDOM_TRIG = "random_trig"


class PotentialSpec(BaseModel):
    """
    Seeded description of a random environment F = (F_k)
    """

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    kind: PotentialKind = PotentialKind.ZERO
    seed: U64 = 0
    amplitude: NonNegativeFloat = 0.0


class ZeroPotentialSpec(PotentialSpec):
    """
    F ≡ 0
    """

    kind: Literal[PotentialKind.ZERO] = PotentialKind.ZERO


class ShotNoiseSpec(PotentialSpec):
    """
    Poisson points of intensity λ per unit length, each carrying the bump (1 - u²)³ of half-width w
    """

    kind: Literal[PotentialKind.SHOT_NOISE] = PotentialKind.SHOT_NOISE
    amplitude: NonNegativeFloat = 0.5
    intensity: PositiveFloat = Field(default=1.0, alias="lambda")
    width: PositiveFloat = 0.5


class RandomTrigSpec(PotentialSpec):
    """
    Stationary Gaussian process given by a finite random Fourier sum
    """

    kind: Literal[PotentialKind.RANDOM_TRIG] = PotentialKind.RANDOM_TRIG
    amplitude: NonNegativeFloat = 0.5
    modes: PositiveInt = 8
    frequencies: list[PositiveFloat] | None = None
    weights: list[float] | None = None

    @model_validator(mode="after")
    def _check_modes(self) -> "RandomTrigSpec":
        for name in ("frequencies", "weights"):
            values = getattr(self, name)
            if values is not None and len(values) != self.modes:
                raise ValueError(f"{name} must list exactly {self.modes} values, got {len(values)}")
        return self

    def mode_frequencies(self) -> list[float]:
        if self.frequencies is not None:
            return list(self.frequencies)
        return [0.25 * (j + 1) for j in range(self.modes)]

    def mode_weights(self) -> list[float]:
        if self.weights is not None:
            return list(self.weights)
        return [1.0 / math.sqrt(self.modes)] * self.modes


PotentialConfig = Annotated[ZeroPotentialSpec | ShotNoiseSpec | RandomTrigSpec, Field(discriminator="kind")]


class SteerMode(str, Enum):
    """
    Constraint imposed on W_k inside a steering window
    """

    BOUNDED = "bounded"
    PINNED = "pinned"


class SteerWindow(BaseModel):
    """
    Grid-aligned time window in which the noise is conditioned on a tame event.

    BOUNDED: sup |W_k| ≤ bound·k^{1/8} on [t_start, t_end], ending at `target`.
    PINNED: sup |W_k - g_k(t)| ≤ epsilon²·k^{1/8} on [t_start, t_end] where g_k ≡ target for k ≥ 2
    and g_1(t) = (t - t_start + 1)·target.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: SteerMode
    t_start: NonNegativeFloat
    t_end: PositiveFloat
    target: float = 0.0
    epsilon: PositiveFloat = 0.8
    bound: PositiveFloat = 3.0

    @model_validator(mode="after")
    def _check_interval(self) -> "SteerWindow":
        if self.t_end <= self.t_start:
            raise ValueError(f"steering window must satisfy t_end > t_start, got [{self.t_start}, {self.t_end}]")
        return self


class NoiseSpec(BaseModel):
    """
    Noise section of a run config
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: U64 = 0
    dt: PositiveFloat = 0.01
    steering: list[SteerWindow] = Field(default_factory=list)

    @field_validator("steering")
    @classmethod
    def _check_disjoint(cls, windows: list[SteerWindow]) -> list[SteerWindow]:
        ordered = sorted(windows, key=lambda window: window.t_start)
        for left, right in zip(ordered, ordered[1:], strict=False):
            if right.t_start < left.t_end:
                raise ValueError(f"steering windows overlap: [{left.t_start}, {left.t_end}] and [{right.t_start}, ...]")
        return ordered


class Scheme(str, Enum):
    """
    Time stepping schemes
    """

    EXPLICIT_EM = "explicit_em"
    SEMI_IMPLICIT = "semi_implicit_laplacian"


class SdeConfig(BaseModel):
    """
    Galerkin-truncated polymer SDE: dX_k = (Δ_k X + f_k(X_k)) dt + σ dW_k, k = 1..n.

    σ = √(2T) and β = 1/T unless `sigma` overrides the noise strength.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n: PositiveInt = 128
    dt: PositiveFloat = 0.01
    temperature: NonNegativeFloat = 1.0
    scheme: Scheme = Scheme.EXPLICIT_EM
    t_end: NonNegativeFloat = 10.0
    lipschitz_bound: NonNegativeFloat | None = None
    enforce_step_condition: bool = True
    sigma: NonNegativeFloat | None = None

    @property
    def noise_scale(self) -> float:
        """σ used to scale the Wiener increments"""
        if self.sigma is not None:
            return self.sigma
        return math.sqrt(2.0 * self.temperature)

    @property
    def beta(self) -> float:
        """Inverse temperature; infinite for the deterministic flow"""
        if self.temperature == 0:
            return math.inf
        return 1.0 / self.temperature

    def temperature_consistent(self, rel_tol: float = 1e-12) -> bool:
        """True iff σ² = 2T"""
        return math.isclose(self.noise_scale**2, 2.0 * self.temperature, rel_tol=rel_tol, abs_tol=1e-300)

    def steps(self, duration: float) -> int:
        """Number of grid steps covering `duration`; rejects durations off the grid"""
        cells = duration / self.dt
        count = round(cells)
        if abs(cells - count) > 1e-9 * max(1.0, abs(cells)):
            raise ValueError(f"time {duration} is not a multiple of dt={self.dt}")
        return int(count)


class RunConfig(BaseModel):
    """
    JSON run configuration consumed by `polymerlab run`
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: str
    potential: PotentialConfig = Field(default_factory=ShotNoiseSpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    sde: SdeConfig = Field(default_factory=SdeConfig)
    knobs: dict[str, Any] = Field(default_factory=dict)
    output_dir: str = "polymerlab-runs"
    seeds: list[U64] | None = None
    seed_count: PositiveInt | None = None
    allow_temperature_mismatch: bool = False
    gates: dict[str, float] = Field(default_factory=dict)
    emit_plot_scripts: bool = False
    dump_trajectories: bool = False

    @model_validator(mode="after")
    def _check_cross_fields(self) -> "RunConfig":
        if not math.isclose(self.noise.dt, self.sde.dt, rel_tol=1e-12):
            raise ValueError(f"noise.dt={self.noise.dt} must equal sde.dt={self.sde.dt}")
        if not self.allow_temperature_mismatch and not self.sde.temperature_consistent():
            raise ValueError(
                f"sigma²={self.sde.noise_scale**2:g} must equal 2/beta={2.0 * self.sde.temperature:g}; "
                "set allow_temperature_mismatch for negative controls",
            )
        if self.seeds is not None and self.seed_count is not None:
            raise ValueError("give either seeds or seed_count, not both")
        return self

    def resolve_seeds(self, default_count: int) -> list[int]:
        """Explicit seeds, or `seed_count` consecutive seeds starting at noise.seed"""
        if self.seeds is not None:
            return list(self.seeds)
        count = self.seed_count if self.seed_count is not None else default_count
        return [self.noise.seed + i for i in range(count)]

    def with_dumps(self) -> "RunConfig":
        """Copy with full-resolution dumps enabled; the flag is marked as set so replays keep it"""
        raw = self.model_dump(mode="json", by_alias=True, exclude_unset=True)
        return RunConfig.model_validate({**raw, "dump_trajectories": True})

    def canonical_json(self) -> str:
        """Stable JSON used for digests and replay"""
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
