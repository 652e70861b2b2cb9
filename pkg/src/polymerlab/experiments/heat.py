import logging
import math

import numpy as np
from pydantic import Field, PositiveFloat, PositiveInt

from polymerlab.dynamics import advance_batch, heat_config, heat_flow_trajectory
from polymerlab.experiments.harness import ExperimentContext, Knobs, ReportBuilder
from polymerlab.models.config import Scheme, SdeConfig
from polymerlab.models.report import Verdict
from polymerlab.polymer import PolymerState, Ray, discrete_laplacian, partial_order_leq
from polymerlab.potential import ZERO_POTENTIAL

logger = logging.getLogger(__name__)


class HeatFlowKnobs(Knobs):
    n: PositiveInt = 200
    dt: PositiveFloat = 0.05
    t_end: PositiveFloat = 10.0
    slopes: list[float] = Field(default_factory=lambda: [-1.0, 0.5, 2.0])
    ordering_n: int = Field(default=64, ge=3)
    ordering_dt: PositiveFloat = 1.0
    broken_offset: float = 3.0


def kinetic_energy(x: PolymerState) -> float:
    """½·Σ (x_{k+1} - x_k)² over the whole profile"""
    return float(0.5 * np.sum(np.diff(x.profile()) ** 2))


def ray_deviation(x0: PolymerState, slope: float, offset: float, cfg: SdeConfig, t_end: float) -> float:
    """Largest |x_k(t) - (u·k + a)| over the snapshots of the heat flow started at x0"""
    trajectory = heat_flow_trajectory(x0, t_end, cfg)
    line = slope * np.arange(1, x0.n + 1, dtype=np.float64) + offset
    return max(float(np.max(np.abs(state.coords - line))) for state in trajectory.states)


def convex_profile(n: int, seed: int) -> PolymerState:
    """
    Random chain with Δx ⪰ 0: increments d_1 ∈ [-1, 1] growing by non-negative steps
    """
    rng = np.random.default_rng(seed)
    growth = rng.uniform(0.0, 4.0 / (n + 1), size=n)
    increments = rng.uniform(-1.0, 1.0) + np.concatenate(([0.0], np.cumsum(growth)))
    return PolymerState.from_profile(np.cumsum(increments))


def quadratic_profile(n: int) -> PolymerState:
    k = np.arange(1, n + 2, dtype=np.float64)
    return PolymerState.from_profile(k**2 / (n + 1))


class ConvexityCheck:
    """Convexity, growth in t and energy decay along one heat flow"""

    def __init__(self, x0: PolymerState, cfg: SdeConfig, t_end: float):
        trajectory = heat_flow_trajectory(x0, t_end, cfg, snapshot_stride=cfg.dt)
        states = trajectory.states
        self.min_laplacian = min(float(np.min(discrete_laplacian(state))) for state in states)
        self.min_increment = min(
            float(np.min(later.coords - earlier.coords)) for earlier, later in zip(states, states[1:], strict=False)
        )
        self.ordered_in_time = all(
            partial_order_leq(earlier, later) for earlier, later in zip(states, states[1:], strict=False)
        )
        energies = [kinetic_energy(state) for state in states]
        self.max_energy_increase = max(
            (later - earlier) / max(1.0, abs(earlier)) for earlier, later in zip(energies, energies[1:], strict=False)
        )


def ordering_time(n: int, dt: float) -> tuple[float | None, float, list[tuple[float, float, float]]]:
    """
    Heat flow of x_k = k - 2 with boundary n - 1 until it is within reach of its harmonic limit
    :param n: number of active coordinates
    :param dt: semi-implicit step
    :return: first time every coordinate is positive, sup distance to the limit at the end, sampled (t, min x, error)
    """
    x0 = Ray(slope=1.0, offset=-2.0).materialize(n)
    limit = np.arange(1, n + 1, dtype=np.float64) * (n - 1) / (n + 1)
    horizon = math.ceil(16.0 * (n + 1) ** 2 / math.pi**2 / dt) * dt
    cfg = heat_config(SdeConfig(n=n, dt=dt, scheme=Scheme.SEMI_IMPLICIT), n, horizon)
    steps = cfg.steps(horizon)
    sample_every = max(1, steps // 200)
    first_positive: list[float] = []
    samples: list[tuple[float, float, float]] = []

    def observe(j: int, time: float, coords: np.ndarray) -> None:
        if not first_positive and np.all(coords[0] > 0):
            first_positive.append(time)
        if j % sample_every == 0:
            samples.append((time, float(coords[0].min()), float(np.max(np.abs(coords[0] - limit)))))

    boundary = np.array([x0.right_boundary])
    final = advance_batch(x0.coords[None, :], boundary, ZERO_POTENTIAL, None, cfg, steps, observer=observe)
    error = float(np.max(np.abs(final[0] - limit)))
    return (first_positive[0] if first_positive else None), error, samples


def run_heat_flow_suite(context: ExperimentContext, knobs: HeatFlowKnobs) -> ReportBuilder:
    builder = ReportBuilder()
    stationarity_tolerance = context.gate("stationarity_tolerance", 1e-10)
    convexity_tolerance = context.gate("convexity_tolerance", 1e-12)
    limit_tolerance = context.gate("limit_tolerance", 1e-6)
    cfg = SdeConfig(n=knobs.n, dt=knobs.dt, t_end=knobs.t_end)

    deviations = context.fan_out(
        lambda slope: ray_deviation(Ray(slope=slope).materialize(knobs.n), slope, 0.0, cfg, knobs.t_end),
        knobs.slopes,
        "Ray stationarity",
    )
    context.write_csv("heat_rays.csv", ["slope", "max_deviation"], list(zip(knobs.slopes, deviations, strict=True)))
    stationary = max(deviations) <= stationarity_tolerance
    builder.metric("ray_max_deviation", max(deviations))

    profiles = [("quadratic", quadratic_profile(knobs.n))]
    profiles += [(f"seed-{seed}", convex_profile(knobs.n, seed)) for seed in context.seeds]
    checks = context.fan_out(lambda item: ConvexityCheck(item[1], cfg, knobs.t_end), profiles, "Convexity")
    context.write_csv(
        "heat_convexity.csv",
        ["profile", "min_laplacian", "min_increment", "max_energy_increase"],
        [
            (name, check.min_laplacian, check.min_increment, check.max_energy_increase)
            for (name, _), check in zip(profiles, checks, strict=True)
        ],
    )
    min_laplacian = min(check.min_laplacian for check in checks)
    min_increment = min(check.min_increment for check in checks)
    energy_increase = max(check.max_energy_increase for check in checks)
    convex = min_laplacian >= -convexity_tolerance
    growing = all(check.ordered_in_time for check in checks)
    dissipative = energy_increase <= convexity_tolerance
    builder.metric("convexity_min_laplacian", min_laplacian)
    builder.metric("growth_min_increment", min_increment)
    builder.metric("energy_max_relative_increase", energy_increase)

    tau, limit_error, samples = ordering_time(knobs.ordering_n, knobs.ordering_dt)
    context.write_csv("heat_ordering.csv", ["t", "min_x", "limit_error"], samples)
    context.emit_plot_script("heat_ordering.csv", "t", "limit_error", log=False)
    ordered = tau is not None and limit_error <= limit_tolerance
    builder.metric("ordering_time", tau if tau is not None else math.inf, note=f"x_k = k - 2 at n={knobs.ordering_n}")
    builder.metric("ordering_limit_error", limit_error)

    broken = ray_deviation(
        Ray(slope=knobs.slopes[0], offset=knobs.broken_offset).materialize(knobs.n),
        knobs.slopes[0],
        knobs.broken_offset,
        cfg,
        knobs.t_end,
    )
    builder.control(
        "shifted_ray",
        "a ray shifted off the pinned origin is not stationary",
        f"max deviation {broken:.3g}",
        degraded=broken > stationarity_tolerance,
    )

    checks_passed = {
        "ray stationarity": stationary,
        "convexity": convex,
        "growth in t": growing,
        "energy decay": dissipative,
        "ordering time": ordered,
    }
    for name, passed in checks_passed.items():
        if not passed:
            logger.warning(f"Heat flow sub-check failed: {name}")
            builder.note(f"sub-check failed: {name}")
    verdict = Verdict.PASS if all(checks_passed.values()) else Verdict.FAIL
    return builder.finish(
        verdict,
        f"rays within {stationarity_tolerance:g}, Δx ⪰ -{convexity_tolerance:g}, x(t) non-decreasing, energy "
        f"non-increasing, ordered in finite time and within {limit_tolerance:g} of k(n-1)/(n+1)",
    )
