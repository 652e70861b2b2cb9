import logging
from itertools import combinations

import numpy as np
from pydantic import Field, PositiveFloat, PositiveInt, field_validator

from polymerlab.dynamics import advance_batch, pullback_batch
from polymerlab.experiments.harness import ExperimentContext, Knobs, ReportBuilder
from polymerlab.gibbs import GaussianBridge
from polymerlab.models.config import SdeConfig
from polymerlab.models.report import Verdict
from polymerlab.polymer import LATTICE_NORM, Ray, weighted_norm
from polymerlab.rng import derive_seed

logger = logging.getLogger(__name__)

ENSEMBLE_STREAM = 0x454E53


class PullbackKnobs(Knobs):
    slope: float = 0.0
    offsets: list[float] = Field(default_factory=lambda: [-5.0, 0.0, 5.0], min_length=2)
    depths: list[PositiveFloat] = Field(default_factory=lambda: [50.0, 100.0, 200.0, 400.0], min_length=1)
    ensemble: int = Field(default=16, ge=2)
    ensemble_seeds: PositiveInt = 10
    control_slope_gap: PositiveFloat = 1.0

    @field_validator("depths")
    @classmethod
    def _sort_depths(cls, depths: list[float]) -> list[float]:
        return sorted(depths)


def bent_rays(n: int, slope: float, offsets: list[float]) -> np.ndarray:
    """
    Chains u·k + a·(1 - k/(n+1)): offset a near the origin, all meeting the boundary u·(n+1)
    :return: shape (len(offsets), n)
    """
    k = np.arange(1, n + 1, dtype=np.float64)
    return np.stack([slope * k + offset * (1.0 - k / (n + 1)) for offset in offsets])


def spread(coords: np.ndarray) -> float:
    """Largest pairwise 𝕃 distance within a batch"""
    return max(
        float(weighted_norm(coords[i] - coords[j], LATTICE_NORM)) for i, j in combinations(range(coords.shape[0]), 2)
    )


class PullbackResult:
    """Spread of one seed's chains at time 0 for every pullback depth, and forward in time"""

    def __init__(self, seed: int, initial: float, pulled: list[float], forward: list[float]):
        self.seed = seed
        self.initial = initial
        self.pulled = pulled
        self.forward = forward

    @property
    def monotone(self) -> bool:
        return all(later < earlier for earlier, later in zip(self.pulled, self.pulled[1:], strict=False))

    def contracted(self, gate: float) -> bool:
        return self.pulled[-1] <= gate * self.initial

    def synchronized(self, gate: float) -> bool:
        return self.forward[-1] <= gate * self.initial


def pullback_spreads(
    context: ExperimentContext,
    cfg: SdeConfig,
    coords: np.ndarray,
    boundary: np.ndarray,
    depths: list[float],
    seed: int,
) -> list[float]:
    path = context.noise_path(seed)
    return [spread(pullback_batch(coords, boundary, context.field, path, cfg, -depth)) for depth in depths]


def forward_spreads(
    context: ExperimentContext,
    cfg: SdeConfig,
    coords: np.ndarray,
    boundary: np.ndarray,
    depths: list[float],
    seed: int,
) -> list[float]:
    """Spread at the forward times equal to the depths, along one integration"""
    marks = {cfg.steps(depth): index for index, depth in enumerate(depths)}
    spreads = [0.0] * len(depths)

    def observe(j: int, time: float, current: np.ndarray) -> None:
        if j in marks:
            spreads[marks[j]] = spread(current)

    steps = cfg.steps(depths[-1])
    advance_batch(coords, boundary, context.field, context.noise_path(seed), cfg, steps, observer=observe)
    return spreads


def run_pullback(context: ExperimentContext, knobs: PullbackKnobs) -> ReportBuilder:
    builder = ReportBuilder()
    cfg = context.sde_with(n=16)
    contraction = context.gate("contraction", 1e-3)
    frequency_gate = context.gate("pullback_frequency", 0.9)
    coords = bent_rays(cfg.n, knobs.slope, knobs.offsets)
    boundary = np.full(coords.shape[0], knobs.slope * (cfg.n + 1))
    initial = spread(coords)

    def one_seed(seed: int) -> PullbackResult:
        pulled = pullback_spreads(context, cfg, coords, boundary, knobs.depths, seed)
        forward = forward_spreads(context, cfg, coords, boundary, knobs.depths, seed)
        return PullbackResult(seed, initial, pulled, forward)

    results = context.fan_out(one_seed, context.seeds, "Pullback depths")
    context.write_csv(
        "pullback.csv",
        ["seed", "depth", "pullback_spread", "forward_spread"],
        [
            (result.seed, depth, pulled, forward)
            for result in results
            for depth, pulled, forward in zip(knobs.depths, result.pulled, result.forward, strict=True)
        ],
    )
    context.emit_plot_script("pullback.csv", "depth", "pullback_spread", group="seed", log=True)
    good = [result for result in results if result.monotone and result.contracted(contraction)]
    frequency = len(good) / len(results)
    synchronized = sum(result.synchronized(contraction) for result in results) / len(results)
    builder.metric("pullback_frequency", frequency, note=f"monotone decay and spread ≤ {contraction:g} of initial")
    builder.metric("forward_sync_frequency", synchronized)
    builder.metric("median_final_ratio", float(np.median([result.pulled[-1] / initial for result in results])))

    collapse = ensemble_collapse(context, knobs, cfg, contraction, builder)

    gap = knobs.control_slope_gap
    rays = [Ray(slope=slope).materialize(cfg.n) for slope in (knobs.slope, knobs.slope + gap)]
    control_coords = np.stack([ray.coords for ray in rays])
    control_boundary = np.array([ray.right_boundary for ray in rays])
    control_initial = spread(control_coords)
    deepest = pullback_spreads(
        context,
        cfg,
        control_coords,
        control_boundary,
        knobs.depths[-1:],
        context.seeds[0],
    )[0]
    builder.control(
        "different_slopes",
        "chains of different slopes order instead of synchronizing",
        f"spread ratio {deepest / control_initial:.3g} at depth {knobs.depths[-1]:g}",
        degraded=deepest > contraction * control_initial,
    )

    passed = frequency >= frequency_gate and synchronized >= frequency_gate and collapse >= frequency_gate
    return builder.finish(
        Verdict.PASS if passed else Verdict.FAIL,
        f"in ≥ {frequency_gate:g} of the seeds the pullback spread decays monotonically in depth to ≤ "
        f"{contraction:g} of its initial value, forward spreads and Gibbs ensembles contract alike",
    )


def ensemble_collapse(
    context: ExperimentContext,
    knobs: PullbackKnobs,
    cfg: SdeConfig,
    contraction: float,
    builder: ReportBuilder,
) -> float:
    """Fraction of seeds whose Gibbs-bridge ensemble concentrates under the deepest pullback"""
    if cfg.temperature == 0:
        builder.note("ensemble collapse skipped: no Gibbs bridge at temperature 0")
        return 1.0
    right = knobs.slope * (cfg.n + 1)
    bridge = GaussianBridge(n=cfg.n, beta=cfg.beta, right_endpoint=right)
    boundary = np.full(knobs.ensemble, right)

    def one_seed(seed: int) -> tuple[float, float]:
        coords = bridge.sample(knobs.ensemble, derive_seed(seed, ENSEMBLE_STREAM))
        before = spread(coords)
        after = pullback_spreads(context, cfg, coords, boundary, knobs.depths[-1:], seed)[0]
        return before, after

    seeds = context.seeds[: knobs.ensemble_seeds]
    spreads = context.fan_out(one_seed, seeds, "Ensemble collapse")
    fraction = sum(after <= contraction * before for before, after in spreads) / len(spreads)
    builder.metric("ensemble_collapse_frequency", fraction, note=f"{knobs.ensemble} Gibbs-bridge chains per seed")
    return fraction
