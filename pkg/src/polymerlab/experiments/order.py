import logging
import math

import numpy as np
from pydantic import Field, NonNegativeFloat, PositiveFloat, PositiveInt, field_validator

from polymerlab.dynamics import advance_batch
from polymerlab.experiments.harness import ExperimentContext, Knobs, ReportBuilder, mean_interval
from polymerlab.models.config import PotentialKind, SdeConfig, SteerWindow
from polymerlab.models.error import InfeasibleSteeringError, IntegrationError, OrderViolationRecord
from polymerlab.models.report import Verdict
from polymerlab.noise import NoisePath, tame_noise_windows
from polymerlab.polymer import DEFAULT_ORDER_TOLERANCE, PolymerState, Ray, crossing_indices
from polymerlab.potential import PotentialField, find_flat_window
from polymerlab.rng import derive_seed

logger = logging.getLogger(__name__)

MAX_RECORDS = 100
PAIR_STREAM = 0x50414952
CONTROL_STREAM = 0x43544C


class MonotonicityKnobs(Knobs):
    pairs: PositiveInt = 100
    near_touch: PositiveFloat = 1e-6
    tolerance: NonNegativeFloat = DEFAULT_ORDER_TOLERANCE
    control_dt: PositiveFloat = 0.6
    control_t_end: PositiveFloat = 6.0


def ordered_pairs(n: int, count: int, seed: int, near_touch: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Pairs x ⪯ y cycling through three kinds: a random positive gap, y = x + near_touch on every other
    coordinate, and y = x + 1
    :param n: chain length
    :param count: number of pairs
    :param seed: pair seed
    :param near_touch: gap of the near-touching pairs
    :return: profiles of x and y, shape (count, n + 1) each, and the kind index of every pair
    """
    rng = np.random.default_rng(derive_seed(seed, PAIR_STREAM))
    lower = np.cumsum(rng.normal(0.0, 1.0, size=(count, n + 1)), axis=1)
    kinds = np.arange(count) % 3
    gaps = np.empty_like(lower)
    for index, kind in enumerate(kinds):
        if kind == 0:
            gaps[index] = rng.exponential(0.5, size=n + 1)
        elif kind == 1:
            gaps[index] = near_touch * (np.arange(n + 1) % 2)
        else:
            gaps[index] = 1.0
    return lower, lower + gaps, kinds


class PairRun:
    """Shared-noise evolution of ordered pairs, counting every coordinate that loses the order"""

    def __init__(self, seed: int, lower: np.ndarray, upper: np.ndarray, tolerance: float):
        self.seed = seed
        self.pairs = lower.shape[0]
        self.tolerance = tolerance
        self.coords = np.concatenate([lower[:, :-1], upper[:, :-1]])
        self.boundary = np.concatenate([lower[:, -1], upper[:, -1]])
        self.violations = 0
        self.records: list[OrderViolationRecord] = []
        self.min_gap = math.inf

    def observe(self, j: int, time: float, coords: np.ndarray) -> None:
        gaps = coords[self.pairs :] - coords[: self.pairs]
        self.min_gap = min(self.min_gap, float(gaps.min()))
        broken = np.argwhere(gaps < -self.tolerance)
        self.violations += len(broken)
        room = max(0, MAX_RECORDS - len(self.records))
        for pair, k in broken[:room]:
            self.records.append(
                OrderViolationRecord(
                    seed=self.seed,
                    pair=int(pair),
                    time=time,
                    k=int(k) + 1,
                    gap=float(-gaps[pair, k]),
                ),
            )

    def run(self, field: PotentialField, path: NoisePath, cfg: SdeConfig) -> "PairRun":
        advance_batch(self.coords, self.boundary, field, path, cfg, cfg.steps(cfg.t_end), observer=self.observe)
        return self


def run_monotonicity(context: ExperimentContext, knobs: MonotonicityKnobs) -> ReportBuilder:
    builder = ReportBuilder()
    cfg = context.sde_with(t_end=10.0)
    tolerance = context.gate("order_tolerance", knobs.tolerance)

    def main(seed: int) -> PairRun:
        lower, upper, _ = ordered_pairs(cfg.n, knobs.pairs, seed, knobs.near_touch)
        return PairRun(seed, lower, upper, tolerance).run(context.field, context.noise_path(seed), cfg)

    runs = context.fan_out(main, context.seeds, "Ordered pairs")
    if context.dumping:
        lower, upper, _ = ordered_pairs(cfg.n, knobs.pairs, context.seeds[0], knobs.near_touch)
        pair = [PolymerState.from_profile(lower[0]), PolymerState.from_profile(upper[0])]
        context.dump_trajectories("monotonicity", pair, context.noise_path(context.seeds[0]), cfg)
    violations = sum(run.violations for run in runs)
    for run in runs:
        for record in run.records:
            builder.violation(record)
    context.write_csv(
        "monotonicity.csv",
        ["seed", "pairs", "violations", "min_gap"],
        [(run.seed, run.pairs, run.violations, run.min_gap) for run in runs],
    )
    builder.metric("violations", violations, note=f"{knobs.pairs} pairs per seed, ε={tolerance:g}")
    builder.metric("min_gap", min(run.min_gap for run in runs))
    if violations:
        logger.warning(f"{violations} order violation(s) across {len(runs)} seed(s)")

    control_cfg = cfg.model_copy(
        update={"dt": knobs.control_dt, "t_end": knobs.control_t_end, "enforce_step_condition": False},
    )
    seed = context.seeds[0]
    lower, upper, _ = ordered_pairs(cfg.n, knobs.pairs, seed, knobs.near_touch)
    control = PairRun(seed, lower, upper, tolerance)
    try:
        control.run(context.field, context.noise_path(seed, dt=knobs.control_dt), control_cfg)
        observed = f"{control.violations} violation(s) at dt={knobs.control_dt}"
    except IntegrationError as error:
        observed = f"integration blew up at dt={knobs.control_dt}: {error}"
        control.violations = max(control.violations, 1)
    builder.metric("control_violations", control.violations)
    builder.control(
        "large_step",
        "dt·(2 + L_f) > 1 breaks order preservation",
        observed,
        degraded=control.violations > 0,
    )
    verdict = Verdict.PASS if violations == 0 else Verdict.FAIL
    return builder.finish(verdict, f"zero coordinates with x_k > y_k + {tolerance:g} at any step")


class OrderingKnobs(Knobs):
    slopes: list[float] = Field(default_factory=lambda: [1.0, 0.0], min_length=2)
    separation: PositiveFloat = 5.0
    tolerance: NonNegativeFloat = DEFAULT_ORDER_TOLERANCE
    steer: bool = True
    steer_bound: PositiveFloat = 3.0
    steer_epsilon: PositiveFloat = 0.8
    steer_t1: PositiveFloat = 1.0
    steer_t2: PositiveFloat = 5.0
    flat_rows: PositiveInt = 4
    flat_half_width: PositiveFloat = 0.25
    flat_delta: NonNegativeFloat = 0.5
    control_seeds: PositiveInt = 10

    @field_validator("slopes")
    @classmethod
    def _check_distinct(cls, slopes: list[float]) -> list[float]:
        if len(set(slopes)) != len(slopes):
            raise ValueError("slopes must be distinct")
        return sorted(slopes, reverse=True)


def crossed_chains(n: int, slopes: list[float], separation: float) -> list[PolymerState]:
    """
    Rays of decreasing slope whose offsets increase from -c to c, so consecutive chains cross near the origin
    """
    count = len(slopes)
    offsets = [separation * (2.0 * index / (count - 1) - 1.0) for index in range(count)]
    return [Ray(slope=slope, offset=offset).materialize(n) for slope, offset in zip(slopes, offsets, strict=True)]


def crossing_height(slopes: list[float], separation: float) -> float:
    """Height at which the two steepest chains cross"""
    offsets = (-separation, separation * (2.0 / (len(slopes) - 1) - 1.0))
    k = (offsets[1] - offsets[0]) / (slopes[0] - slopes[1])
    return slopes[0] * k + offsets[0]


class OrderingRun:
    """
    Tracks the first time τ at which every consecutive pair of chains is ordered and whether order persists
    """

    def __init__(self, seed: int, tolerance: float, phase: str = "unsteered"):
        self.seed = seed
        self.tolerance = tolerance
        self.phase = phase
        self.tau: float | None = None
        self.persistence_breaks = 0
        self.records: list[OrderViolationRecord] = []
        self.ordered_at_end = False

    def observe(self, j: int, time: float, coords: np.ndarray) -> None:
        gaps = coords[:-1] - coords[1:]
        ordered = bool(np.all(gaps >= -self.tolerance))
        self.ordered_at_end = ordered
        if self.tau is None:
            if ordered:
                self.tau = time
            return
        if not ordered:
            self.persistence_breaks += 1
            if len(self.records) < 10:
                pair, k = np.unravel_index(int(np.argmin(gaps)), gaps.shape)
                self.records.append(
                    OrderViolationRecord(
                        seed=self.seed,
                        pair=int(pair),
                        time=time,
                        k=int(k) + 1,
                        gap=float(-gaps[pair, k]),
                        crossings=int(np.count_nonzero(gaps[pair] < -self.tolerance)),
                    ),
                )

    def run(
        self,
        chains: list[PolymerState],
        field: PotentialField,
        paths: NoisePath | list[NoisePath] | None,
        cfg: SdeConfig,
    ) -> "OrderingRun":
        coords = np.stack([chain.coords for chain in chains])
        boundary = np.array([chain.right_boundary for chain in chains])
        advance_batch(coords, boundary, field, paths, cfg, cfg.steps(cfg.t_end), observer=self.observe)
        return self

    @property
    def ordered(self) -> bool:
        return self.tau is not None

    @property
    def persistent(self) -> bool:
        return self.tau is not None and self.persistence_breaks == 0


def steering_windows(
    field: PotentialField,
    knobs: OrderingKnobs,
    sigma: float,
) -> tuple[list[SteerWindow], str]:
    """
    Tame-noise windows that push the crossing region of the chains into a flat stretch of the potential
    :return: the windows (empty if none qualify) and a description of the outcome
    """
    height = crossing_height(knobs.slopes, knobs.separation)
    reach = 0.95 * knobs.steer_bound * sigma
    center = find_flat_window(
        field,
        knobs.flat_rows,
        knobs.flat_half_width,
        knobs.flat_delta,
        start=height - reach,
        max_windows=max(1, math.floor(2.0 * reach / knobs.flat_half_width) + 1),
    )
    if center is None:
        return [], f"no flat window within {reach:.3g} of the crossing height {height:.3g}"
    target = (center - height) / sigma
    windows = tame_noise_windows(target, knobs.steer_t1, knobs.steer_t2, knobs.steer_bound, knobs.steer_epsilon)
    return windows, f"flat window at r={center:.3g}, noise target a={target:.3g}"


def run_ordering_by_noise(context: ExperimentContext, knobs: OrderingKnobs) -> ReportBuilder:
    builder = ReportBuilder()
    cfg = context.sde_with(n=256, t_end=200.0)
    frequency_gate = context.gate("ordering_frequency", 0.9)
    if context.field.kind is PotentialKind.RANDOM_TRIG:
        logger.warning("RandomTrig has no flat windows; ordering by noise is not guaranteed for this potential")
        builder.note("random_trig potential: flat-window hypothesis not met")
    chains = crossed_chains(cfg.n, knobs.slopes, knobs.separation)
    builder.metric(
        "initial_crossings",
        sum(len(crossing_indices(upper, lower)) for upper, lower in zip(chains, chains[1:], strict=False)),
        note="coordinates where a chain starts below its successor",
    )
    context.dump_trajectories("ordering", chains, context.noise_path(context.seeds[0]), cfg)

    def unsteered(seed: int) -> OrderingRun:
        return OrderingRun(seed, knobs.tolerance).run(chains, context.field, context.noise_path(seed), cfg)

    runs = context.fan_out(unsteered, context.seeds, "Ordering by shared noise")
    for run in runs:
        for record in run.records:
            builder.violation(record)
    ordered = [run for run in runs if run.ordered]
    frequency = len(ordered) / len(runs)
    breaks = sum(run.persistence_breaks for run in runs)
    builder.metric("ordering_frequency", frequency, note=f"{len(ordered)}/{len(runs)} seeds ordered by t={cfg.t_end:g}")
    builder.metric("persistence_breaks", breaks)
    if ordered:
        builder.add_metric("tau_mean", mean_interval([run.tau for run in ordered if run.tau is not None]))
        builder.metric("tau_median", float(np.median([run.tau for run in ordered])))

    steered_runs: list[OrderingRun] = []
    late = [run.seed for run in runs if run.tau is None or run.tau > cfg.t_end / 2]
    if knobs.steer and late:
        if context.config.noise.steering:
            builder.note("steered phase skipped: the noise section already steers every path")
        elif cfg.noise_scale == 0:
            builder.note("steered phase skipped: σ = 0")
        else:
            windows, outcome = steering_windows(context.field, knobs, cfg.noise_scale)
            builder.note(f"steered phase for {len(late)} seed(s): {outcome}")
            if windows:

                def steered(seed: int) -> OrderingRun | str:
                    try:
                        path = NoisePath(seed, cfg.dt).steered(windows)
                        return OrderingRun(seed, knobs.tolerance, "steered").run(chains, context.field, path, cfg)
                    except InfeasibleSteeringError as error:
                        return f"seed {seed}: {error}"

                for result in context.fan_out(steered, late, "Steered ordering"):
                    if isinstance(result, str):
                        builder.note(f"steering infeasible for {result}")
                    else:
                        steered_runs.append(result)
                if steered_runs:
                    builder.metric(
                        "steered_ordering_frequency",
                        sum(run.ordered for run in steered_runs) / len(steered_runs),
                        note="report only",
                    )
    context.write_csv(
        "ordering_times.csv",
        ["seed", "phase", "tau", "persistence_breaks"],
        [
            (run.seed, run.phase, run.tau if run.tau is not None else "", run.persistence_breaks)
            for run in runs + steered_runs
        ],
    )

    frozen = OrderingRun(-1, knobs.tolerance, "deterministic").run(
        chains,
        context.field,
        None,
        cfg.model_copy(update={"temperature": 0.0, "sigma": None}),
    )
    builder.metric(
        "deterministic_ordered",
        float(frozen.ordered),
        note="σ = 0 gradient flow; may stall in local minima of the potential",
    )
    if not frozen.ordered:
        builder.note(f"deterministic flow did not order the chains by t={cfg.t_end:g}")

    control_seeds = context.seeds[: knobs.control_seeds]

    def independent(seed: int) -> OrderingRun:
        paths = [NoisePath(derive_seed(seed, CONTROL_STREAM, index), cfg.dt) for index in range(len(chains))]
        return OrderingRun(seed, knobs.tolerance, "independent").run(chains, context.field, paths, cfg)

    controls = context.fan_out(independent, control_seeds, "Independent noise control")
    persistent = sum(run.persistent for run in controls) / len(controls)
    builder.control(
        "independent_noise",
        "chains driven by independent noise do not stay ordered",
        f"{persistent:.0%} of {len(controls)} runs ordered persistently",
        degraded=persistent < frequency_gate,
    )

    passed = frequency >= frequency_gate and breaks == 0
    return builder.finish(
        Verdict.PASS if passed else Verdict.FAIL,
        f"ordering frequency ≥ {frequency_gate:g} by t_end over the slope surrogates and order persists after τ",
    )
