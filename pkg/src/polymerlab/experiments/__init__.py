"""Theorem checks and their registry"""

from pathlib import Path

from polymerlab.experiments.geometry import (
    GalerkinKnobs,
    ShearKnobs,
    SlopeKnobs,
    run_galerkin_convergence,
    run_shear_equivariance,
    run_slope_invariance,
)
from polymerlab.experiments.harness import ExperimentDefinition, run_experiment
from polymerlab.experiments.heat import HeatFlowKnobs, run_heat_flow_suite
from polymerlab.experiments.invariance import (
    FluctuationKnobs,
    GibbsKnobs,
    run_fluctuation_exponent,
    run_gibbs_invariance,
)
from polymerlab.experiments.order import (
    MonotonicityKnobs,
    OrderingKnobs,
    run_monotonicity,
    run_ordering_by_noise,
)
from polymerlab.experiments.pullback import PullbackKnobs, run_pullback
from polymerlab.models.config import RunConfig
from polymerlab.models.report import ExperimentReport

_SDE_KEYS = ["potential", "noise.seed", "sde.n", "sde.dt", "sde.temperature", "sde.t_end"]

EXPERIMENTS: dict[str, ExperimentDefinition] = {
    definition.name: definition
    for definition in [
        ExperimentDefinition(
            name="exp_monotonicity",
            theorem="monotonicity lemma: comparison principle",
            summary="comparison principle: ordered chains stay ordered under shared noise",
            knobs=MonotonicityKnobs,
            runner=run_monotonicity,
            config_keys=[*_SDE_KEYS, "knobs.pairs"],
        ),
        ExperimentDefinition(
            name="exp_slope_invariance",
            theorem="invariance of slope classes",
            summary="slope classes are invariant under the dynamics (tail slope surrogate)",
            knobs=SlopeKnobs,
            runner=run_slope_invariance,
            default_seed_count=2,
            config_keys=[*_SDE_KEYS, "knobs.slopes"],
        ),
        ExperimentDefinition(
            name="exp_gibbs_invariance",
            theorem="Gibbs measures are invariant; DLR consistency",
            summary="finite-volume Gibbs measures are invariant and the dynamics mixes towards them",
            knobs=GibbsKnobs,
            runner=run_gibbs_invariance,
            config_keys=[*_SDE_KEYS, "knobs.trajectories", "gates.z"],
        ),
        ExperimentDefinition(
            name="exp_shear_equivariance",
            theorem="shear invariance of the dynamics",
            summary="the dynamics is equivariant under joint shears of chain and potential",
            knobs=ShearKnobs,
            runner=run_shear_equivariance,
            config_keys=[*_SDE_KEYS, "knobs.shears"],
        ),
        ExperimentDefinition(
            name="exp_ordering_by_noise",
            theorem="monotonization: ordering by noise",
            summary="shared noise orders chains of distinct slopes after a finite random time",
            knobs=OrderingKnobs,
            runner=run_ordering_by_noise,
            default_seed_count=50,
            config_keys=[*_SDE_KEYS, "knobs.slopes", "knobs.separation", "seed_count"],
        ),
        ExperimentDefinition(
            name="exp_1f1s_pullback",
            theorem="one force, one solution: pullback attractor",
            summary="one force, one solution: pullback attraction to a single chain per slope",
            knobs=PullbackKnobs,
            runner=run_pullback,
            default_seed_count=50,
            config_keys=[*_SDE_KEYS, "knobs.slope", "knobs.depths", "gates.contraction"],
        ),
        ExperimentDefinition(
            name="exp_galerkin_convergence",
            theorem="convergence of Galerkin approximations",
            summary="Galerkin truncations converge as the truncation length doubles",
            knobs=GalerkinKnobs,
            runner=run_galerkin_convergence,
            default_seed_count=16,
            config_keys=[*_SDE_KEYS, "knobs.sizes"],
        ),
        ExperimentDefinition(
            name="exp_fluctuation_exponent",
            theorem="transversal fluctuation bound ξ ≤ 3/4",
            summary="transversal fluctuations grow sublinearly (exponent below 1, at most 3/4 expected)",
            knobs=FluctuationKnobs,
            runner=run_fluctuation_exponent,
            default_seed_count=8,
            config_keys=[*_SDE_KEYS, "knobs.slope", "knobs.burn_in"],
        ),
        ExperimentDefinition(
            name="exp_heat_flow_suite",
            theorem="deterministic ordering and convexity of the heat flow",
            summary="discrete heat flow: stationary rays, convexity, finite ordering time",
            knobs=HeatFlowKnobs,
            runner=run_heat_flow_suite,
            default_seed_count=3,
            config_keys=["knobs.n", "knobs.dt", "knobs.slopes"],
        ),
    ]
}


def _run(name: str, config: RunConfig, output_dir: Path | None) -> ExperimentReport:
    if config.experiment != name:
        config = config.model_copy(update={"experiment": name})
    directory = output_dir if output_dir is not None else Path(config.output_dir) / name
    return run_experiment(EXPERIMENTS[name], config, directory)


def exp_monotonicity(config: RunConfig, output_dir: Path | None = None) -> ExperimentReport:
    return _run("exp_monotonicity", config, output_dir)


def exp_slope_invariance(config: RunConfig, output_dir: Path | None = None) -> ExperimentReport:
    return _run("exp_slope_invariance", config, output_dir)


def exp_gibbs_invariance(config: RunConfig, output_dir: Path | None = None) -> ExperimentReport:
    return _run("exp_gibbs_invariance", config, output_dir)


def exp_shear_equivariance(config: RunConfig, output_dir: Path | None = None) -> ExperimentReport:
    return _run("exp_shear_equivariance", config, output_dir)


def exp_ordering_by_noise(config: RunConfig, output_dir: Path | None = None) -> ExperimentReport:
    return _run("exp_ordering_by_noise", config, output_dir)


def exp_1f1s_pullback(config: RunConfig, output_dir: Path | None = None) -> ExperimentReport:
    return _run("exp_1f1s_pullback", config, output_dir)


def exp_galerkin_convergence(config: RunConfig, output_dir: Path | None = None) -> ExperimentReport:
    return _run("exp_galerkin_convergence", config, output_dir)


def exp_fluctuation_exponent(config: RunConfig, output_dir: Path | None = None) -> ExperimentReport:
    return _run("exp_fluctuation_exponent", config, output_dir)


def exp_heat_flow_suite(config: RunConfig, output_dir: Path | None = None) -> ExperimentReport:
    return _run("exp_heat_flow_suite", config, output_dir)
