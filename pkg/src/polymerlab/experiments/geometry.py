import logging
import math

import numpy as np
from pydantic import Field, NonNegativeFloat, PositiveFloat, PositiveInt, field_validator

from polymerlab.dynamics import advance_batch
from polymerlab.experiments.harness import ExperimentContext, Knobs, ReportBuilder
from polymerlab.models.config import SdeConfig
from polymerlab.models.report import Verdict
from polymerlab.noise import NoisePath
from polymerlab.polymer import LATTICE_NORM, PolymerState, SlopeEstimate, estimate_slope, shear, weighted_norm
from polymerlab.potential import PotentialField, shear_potential
from polymerlab.rng import derive_seed

logger = logging.getLogger(__name__)

PROFILE_STREAM = 0x50524F


def perturbed_profile(slope: float, length: int, amplitude: float, seed: int) -> np.ndarray:
    """Values u·k + ξ_k for k = 1..length with ξ_k uniform on [-amplitude, amplitude]"""
    rng = np.random.default_rng(derive_seed(seed, PROFILE_STREAM))
    k = np.arange(1, length + 1, dtype=np.float64)
    return slope * k + rng.uniform(-amplitude, amplitude, size=length)


def _evolve(
    states: list[PolymerState],
    field: PotentialField,
    path: NoisePath | None,
    cfg: SdeConfig,
) -> list[PolymerState]:
    coords = np.stack([state.coords for state in states])
    boundary = np.array([state.right_boundary for state in states])
    final = advance_batch(coords, boundary, field, path, cfg, cfg.steps(cfg.t_end))
    return [PolymerState(coords=row, right_boundary=float(edge)) for row, edge in zip(final, boundary, strict=True)]


class SlopeKnobs(Knobs):
    slopes: list[float] = Field(default_factory=lambda: [-1.0, 0.0, 1.0], min_length=1)
    perturbation: NonNegativeFloat = 1.0
    tail_fraction: float = Field(default=0.5, gt=0.0, le=1.0)
    control_n: int = Field(default=50, ge=4)


class SlopeDrift:
    """Slope estimate of every chain before and after the evolution"""

    def __init__(self, seed: int, before: list[SlopeEstimate], after: list[SlopeEstimate]):
        self.seed = seed
        self.before = before
        self.after = after

    @property
    def drift(self) -> float:
        return max(abs(end.slope - start.slope) for start, end in zip(self.before, self.after, strict=True))

    @property
    def growth(self) -> float:
        return max(end.width - start.width for start, end in zip(self.before, self.after, strict=True))

    @property
    def width(self) -> float:
        return max(end.width for end in self.after)


def slope_drift(context: ExperimentContext, knobs: SlopeKnobs, cfg: SdeConfig, seed: int) -> SlopeDrift:
    states = [
        PolymerState.from_profile(perturbed_profile(slope, cfg.n + 1, knobs.perturbation, derive_seed(seed, index)))
        for index, slope in enumerate(knobs.slopes)
    ]
    final = _evolve(states, context.field, context.noise_path(seed), cfg)
    before = [estimate_slope(state, knobs.tail_fraction) for state in states]
    after = [estimate_slope(state, knobs.tail_fraction) for state in final]
    return SlopeDrift(seed, before, after)


def run_slope_invariance(context: ExperimentContext, knobs: SlopeKnobs) -> ReportBuilder:
    builder = ReportBuilder()
    cfg = context.sde_with(n=2000, t_end=10.0)
    drift_gate = context.gate("slope_drift", 0.05)
    growth_gate = context.gate("bracket_growth", 0.1)
    width_gate = context.gate("bracket_width", 0.05)

    results = context.fan_out(lambda seed: slope_drift(context, knobs, cfg, seed), context.seeds, "Slope surrogates")
    rows = []
    for result in results:
        for slope, start, end in zip(knobs.slopes, result.before, result.after, strict=True):
            rows.append((result.seed, slope, start.slope, end.slope, start.lower, start.upper, end.lower, end.upper))
    context.write_csv(
        "slope_invariance.csv",
        ["seed", "slope", "estimate_0", "estimate_t", "lower_0", "upper_0", "lower_t", "upper_t"],
        rows,
    )
    drift = max(result.drift for result in results)
    growth = max(result.growth for result in results)
    width = max(result.width for result in results)
    builder.metric("slope_drift", drift, note="tail least-squares slope surrogate")
    builder.metric("bracket_growth", growth)
    builder.metric("bracket_width", width)

    small = cfg.model_copy(update={"n": knobs.control_n})
    control = slope_drift(context, knobs, small, context.seeds[0])
    builder.control(
        "short_chain",
        f"at n={knobs.control_n} the slope bracket is too wide to decide",
        f"bracket width {control.width:.3g}",
        degraded=control.width > width_gate,
    )

    if width > width_gate:
        verdict = Verdict.INCONCLUSIVE
        builder.note(f"bracket width {width:.3g} exceeds {width_gate:g}; the chain is too short to resolve the slope")
    elif drift <= drift_gate and growth <= growth_gate:
        verdict = Verdict.PASS
    else:
        verdict = Verdict.FAIL
    return builder.finish(
        verdict,
        f"slope surrogate drift ≤ {drift_gate:g} and bracket growth ≤ {growth_gate:g}; "
        f"inconclusive when the bracket is wider than {width_gate:g}",
    )


class ShearKnobs(Knobs):
    shears: list[float] = Field(default_factory=lambda: [0.7])
    random_shears: int = Field(default=2, ge=0)
    perturbation: NonNegativeFloat = 1.0


def shear_discrepancy(field: PotentialField, path: NoisePath, cfg: SdeConfig, x0: PolymerState, v: float) -> float:
    """sup-norm distance between Φ(Ξ^v x0) under the sheared potential and Ξ^v Φ(x0)"""
    direct = _evolve([x0], field, path, cfg)[0]
    moved = _evolve([shear(x0, v)], shear_potential(field, v), path, cfg)[0]
    return float(np.max(np.abs(moved.coords - shear(direct, v).coords)))


def run_shear_equivariance(context: ExperimentContext, knobs: ShearKnobs) -> ReportBuilder:
    builder = ReportBuilder()
    cfg = context.sde_with(n=512, t_end=10.0)
    tolerance = context.gate("shear_tolerance", 1e-8)

    def one_seed(seed: int) -> list[tuple[int, float, float]]:
        rng = np.random.default_rng(derive_seed(seed, PROFILE_STREAM, 1))
        shears = list(knobs.shears) + rng.uniform(-1.0, 1.0, size=knobs.random_shears).tolist()
        x0 = PolymerState.from_profile(perturbed_profile(0.0, cfg.n + 1, knobs.perturbation, seed))
        path = context.noise_path(seed)
        return [(seed, v, shear_discrepancy(context.field, path, cfg, x0, v)) for v in shears]

    rows = [row for rows in context.fan_out(one_seed, context.seeds, "Shear equivariance") for row in rows]
    context.write_csv("shear_equivariance.csv", ["seed", "shear", "discrepancy"], rows)
    worst = max(discrepancy for _, _, discrepancy in rows)
    builder.metric("max_discrepancy", worst)

    seed = context.seeds[0]
    v = knobs.shears[0] if knobs.shears else 0.7
    x0 = PolymerState.from_profile(perturbed_profile(0.0, cfg.n + 1, knobs.perturbation, seed))
    path = context.noise_path(seed)
    unsheared = _evolve([shear(x0, v)], context.field, path, cfg)[0]
    expected = shear(_evolve([x0], context.field, path, cfg)[0], v)
    misuse = float(np.max(np.abs(unsheared.coords - expected.coords)))
    builder.control(
        "unsheared_potential",
        "shearing the chain without shearing the potential breaks equivariance",
        f"discrepancy {misuse:.3g}",
        degraded=misuse > tolerance,
    )
    if context.field.is_zero:
        builder.note("zero potential: every shear leaves it unchanged, so the misuse control cannot degrade")
    return builder.finish(
        Verdict.PASS if worst <= tolerance else Verdict.FAIL,
        f"sup-norm discrepancy ≤ {tolerance:g} at t_end={cfg.t_end:g}",
    )


class GalerkinKnobs(Knobs):
    sizes: list[PositiveInt] = Field(default_factory=lambda: [128, 256, 512, 1024], min_length=2)
    slope: float = 0.5
    perturbation: NonNegativeFloat = 1.0
    floor: PositiveFloat = 1e-14
    control_sizes: list[PositiveInt] = Field(default_factory=lambda: [4, 8, 16], min_length=2)
    control_time_scale: PositiveFloat = 0.25

    @field_validator("sizes", "control_sizes")
    @classmethod
    def _check_doubling(cls, sizes: list[int]) -> list[int]:
        if any(later != 2 * earlier for earlier, later in zip(sizes, sizes[1:], strict=False)):
            raise ValueError("sizes must double from one level to the next")
        return sizes


def truncation_gaps(
    field: PotentialField,
    path: NoisePath,
    cfg: SdeConfig,
    profile: np.ndarray,
    n: int,
) -> tuple[float, float]:
    """
    Distance between the truncations at n and 2n of the same chain, driven by the same keys
    :return: sup over k ≤ n/2, and the 𝕃-weighted distance over k ≤ n
    """
    short = PolymerState.from_profile(profile[: n + 1])
    long = PolymerState.from_profile(profile[: 2 * n + 1])
    first = _evolve([short], field, path, cfg.model_copy(update={"n": n}))[0]
    second = _evolve([long], field, path, cfg.model_copy(update={"n": 2 * n}))[0]
    gap = first.coords - second.coords[:n]
    return float(np.max(np.abs(gap[: n // 2]))), float(weighted_norm(gap, LATTICE_NORM))


def contraction_ratios(gaps: list[float], floor: float) -> list[float]:
    """Successive ratios; a level already below the floor counts as ratio 0"""
    ratios = []
    for earlier, later in zip(gaps, gaps[1:], strict=False):
        if later <= floor:
            ratios.append(0.0)
        elif earlier <= floor:
            ratios.append(math.inf)
        else:
            ratios.append(later / earlier)
    return ratios


def run_galerkin_convergence(context: ExperimentContext, knobs: GalerkinKnobs) -> ReportBuilder:
    builder = ReportBuilder()
    cfg = context.sde_with(t_end=5.0)
    ratio_gate = context.gate("contraction_ratio", 0.7)
    longest = 2 * max(knobs.sizes) + 1

    def one_seed(seed: int) -> list[tuple[float, float]]:
        profile = perturbed_profile(knobs.slope, longest, knobs.perturbation, seed)
        return [truncation_gaps(context.field, context.noise_path(seed), cfg, profile, n) for n in knobs.sizes]

    per_seed = context.fan_out(one_seed, context.seeds, "Galerkin levels")
    interior = np.mean([[gap for gap, _ in levels] for levels in per_seed], axis=0).tolist()
    weighted = np.mean([[gap for _, gap in levels] for levels in per_seed], axis=0).tolist()
    context.write_csv(
        "galerkin.csv",
        ["n", "interior_sup", "lattice_weighted"],
        list(zip(knobs.sizes, interior, weighted, strict=True)),
    )
    context.emit_plot_script("galerkin.csv", "n", "lattice_weighted", log=True)
    interior_ratios = contraction_ratios(interior, knobs.floor)
    weighted_ratios = contraction_ratios(weighted, knobs.floor)
    builder.metric("interior_worst_ratio", max(interior_ratios), note="sup over k ≤ n/2")
    builder.metric("weighted_worst_ratio", max(weighted_ratios), note="𝕃-weighted over k ≤ n")
    for n, gap in zip(knobs.sizes, interior, strict=True):
        builder.metric(f"interior_gap_n{n}", gap)

    def control_seed(seed: int) -> list[float]:
        profile = perturbed_profile(knobs.slope, 2 * max(knobs.control_sizes) + 1, knobs.perturbation, seed)
        gaps = []
        for n in knobs.control_sizes:
            stretched = cfg.model_copy(update={"t_end": cfg.dt * math.ceil(knobs.control_time_scale * n**2 / cfg.dt)})
            gaps.append(truncation_gaps(context.field, context.noise_path(seed), stretched, profile, n)[0])
        return gaps

    control_gaps = np.mean(context.fan_out(control_seed, context.seeds, "Diffusive control"), axis=0).tolist()
    control_ratio = max(contraction_ratios(control_gaps, knobs.floor))
    builder.control(
        "diffusive_horizon",
        "with t_end ∝ n² the frozen boundary reaches the interior and levels stop contracting",
        f"worst ratio {control_ratio:.3g}",
        degraded=control_ratio > ratio_gate,
    )
    passed = max(interior_ratios) <= ratio_gate and max(weighted_ratios) <= ratio_gate
    return builder.finish(
        Verdict.PASS if passed else Verdict.FAIL,
        f"successive discrepancy ratios ≤ {ratio_gate:g} (levels below {knobs.floor:g} count as converged)",
    )
