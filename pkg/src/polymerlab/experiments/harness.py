import csv
import hashlib
import logging
import math
import os
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from importlib import metadata
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import stats

from polymerlab.dynamics import evolve_ensemble
from polymerlab.gibbs import SampleSidecar, write_samples
from polymerlab.models.config import RunConfig, SdeConfig
from polymerlab.models.error import OrderViolationRecord
from polymerlab.models.report import ExperimentReport, Metric, NegativeControl, Verdict
from polymerlab.noise import NoisePath
from polymerlab.polymer import PolymerState
from polymerlab.potential import PotentialField, build_potential

logger = logging.getLogger(__name__)

WORKERS_ENV = "POLYMERLAB_WORKERS"
DEFAULT_Z = 3.0
MAX_REPORTED_VIOLATIONS = 100
DUMP_DIR = "dumps"

T = TypeVar("T")
R = TypeVar("R")

ProgressHook = Callable[[str, int], Callable[[], None]]
"""Given a description and a total, returns the callback advancing that task by one"""


def code_version() -> str:
    try:
        return metadata.version("polymerlab")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def default_workers() -> int:
    """Worker pool size, capped by POLYMERLAB_WORKERS"""
    configured = os.getenv(WORKERS_ENV)
    if configured:
        try:
            return max(1, int(configured))
        except ValueError:
            logger.warning(f"Ignoring {WORKERS_ENV}={configured!r}: not an integer")
    return min(8, os.cpu_count() or 1)


def config_digest(config: RunConfig) -> str:
    return hashlib.sha256(config.canonical_json().encode()).hexdigest()


def sidak_z(family: int, z: float = DEFAULT_Z) -> float:
    """
    Per-test z threshold that gives a family of `family` two-sided tests the error rate of one z-level test
    """
    if family <= 1:
        return z
    alpha = 2.0 * stats.norm.sf(z)
    per_test = 1.0 - (1.0 - alpha) ** (1.0 / family)
    return float(stats.norm.isf(per_test / 2.0))


def mean_interval(values: Sequence[float] | np.ndarray, level: float = 0.95) -> Metric:
    """Sample mean with a Student-t confidence interval"""
    data = np.asarray(values, dtype=np.float64)
    mean = float(data.mean())
    if data.size < 2:
        return Metric(value=mean)
    stderr = float(data.std(ddof=1) / math.sqrt(data.size))
    half = float(stats.t.ppf(0.5 + level / 2.0, data.size - 1)) * stderr
    return Metric(value=mean, ci_low=mean - half, ci_high=mean + half, stderr=stderr)


def batch_means_stderr(series: np.ndarray, batches: int = 20) -> np.ndarray:
    """
    Standard error of a time average from non-overlapping batch means
    :param series: samples along axis 0
    :param batches: number of batches
    :return: standard error per trailing index
    """
    length = series.shape[0] // batches
    if length < 1:
        raise ValueError(f"series of length {series.shape[0]} is too short for {batches} batches")
    means = series[: length * batches].reshape((batches, length) + series.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(batches)


class Knobs(BaseModel):
    """
    Base of the experiment-specific knob models
    """

    model_config = ConfigDict(extra="forbid", frozen=True)


class ReportBuilder:
    """
    Collects the findings of one experiment before they are frozen into an ExperimentReport
    """

    def __init__(self) -> None:
        self.metrics: dict[str, Metric] = {}
        self.controls: list[NegativeControl] = []
        self.notes: list[str] = []
        self.violations: list[OrderViolationRecord] = []
        self.verdict = Verdict.INCONCLUSIVE
        self.rule = ""

    def metric(self, name: str, value: float, **details: Any) -> None:
        self.metrics[name] = Metric(value=float(value), **details)

    def add_metric(self, name: str, metric: Metric) -> None:
        self.metrics[name] = metric

    def control(self, name: str, expectation: str, observed: str, degraded: bool) -> None:
        self.controls.append(
            NegativeControl(name=name, expectation=expectation, observed=observed, degraded=bool(degraded)),
        )

    def note(self, text: str) -> None:
        self.notes.append(text)

    def violation(self, record: OrderViolationRecord) -> None:
        self.violations.append(record)

    def finish(self, verdict: Verdict, rule: str) -> "ReportBuilder":
        """
        Record the verdict; a passing check whose negative controls did not degrade is inconclusive
        """
        undegraded = [control.name for control in self.controls if not control.degraded]
        if verdict is Verdict.PASS and undegraded:
            logger.warning(f"Negative control(s) {', '.join(undegraded)} did not degrade; verdict is inconclusive")
            self.note(f"negative controls that did not degrade: {', '.join(undegraded)}")
            verdict = Verdict.INCONCLUSIVE
        self.verdict = verdict
        self.rule = rule
        return self


class ExperimentContext:
    """
    Everything an experiment needs besides its knobs: the run config, the quenched potential,
    noise paths per seed, the worker pool and the artifact directory
    """

    def __init__(
        self,
        config: RunConfig,
        output_dir: Path,
        seeds: list[int],
        workers: int | None = None,
        progress: ProgressHook | None = None,
    ):
        self.config = config
        self.output_dir = output_dir
        self.seeds = seeds
        self.workers = workers if workers is not None else default_workers()
        self.progress = progress
        self.field: PotentialField = build_potential(config.potential)
        self.gates: dict[str, float] = {}
        self.artifacts: list[str] = []

    @property
    def sde(self) -> SdeConfig:
        return self.config.sde

    def sde_with(self, **defaults: Any) -> SdeConfig:
        """The run's SDE config with experiment defaults for the fields the config file did not set"""
        update = {key: value for key, value in defaults.items() if key not in self.config.sde.model_fields_set}
        return self.config.sde.model_copy(update=update)

    def noise_path(self, seed: int, dt: float | None = None) -> NoisePath:
        """Noise path of one seed, steered as the noise section prescribes"""
        if dt is None:
            return NoisePath.from_spec(self.config.noise, seed=seed)
        return NoisePath(seed, dt).steered(self.config.noise.steering)

    def gate(self, name: str, default: float) -> float:
        """Threshold `name`, overridable through the config's gates section; recorded in the report"""
        value = float(self.config.gates.get(name, default))
        self.gates[name] = value
        return value

    def fan_out(self, fn: Callable[[T], R], items: Sequence[T], description: str) -> list[R]:
        """
        Run fn over items on the worker pool
        :param fn: work per item
        :param items: inputs
        :param description: progress label
        :return: results in the order of items
        """
        advance = self.progress(description, len(items)) if self.progress is not None else None
        results: dict[int, R] = {}
        if self.workers <= 1 or len(items) <= 1:
            for index, item in enumerate(items):
                results[index] = fn(item)
                if advance is not None:
                    advance()
        else:
            with ThreadPoolExecutor(max_workers=min(self.workers, len(items))) as executor:
                futures = {executor.submit(fn, item): index for index, item in enumerate(items)}
                for future in as_completed(futures):
                    results[futures[future]] = future.result()
                    if advance is not None:
                        advance()
        return [results[index] for index in range(len(items))]

    def write_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        """Write an artifact CSV into the run directory"""
        path = self.output_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as csvfile:
            writer = csv.writer(csvfile)
            writer.writerow(header)
            writer.writerows(rows)
        self.artifacts.append(name)
        logger.debug(f"Wrote {len(rows)} rows to {path}")
        return path

    @property
    def dumping(self) -> bool:
        return self.config.dump_trajectories

    def dump_trajectories(
        self,
        name: str,
        states: Sequence[PolymerState],
        paths: NoisePath | Sequence[NoisePath] | None,
        cfg: SdeConfig,
    ) -> None:
        """
        Re-run `states` at full resolution and write every member in the CSV and binary formats.
        The noise keys are those of the experiment's own run, so the dump shows the analysed chains
        """
        if not self.dumping:
            return
        trajectories = evolve_ensemble(states, self.field, paths, cfg, full_resolution=True)
        for member, trajectory in enumerate(trajectories):
            for suffix, writer in ((".csv", trajectory.write_csv), (".bin", trajectory.write_binary)):
                relative = Path(DUMP_DIR) / f"{name}_{member}{suffix}"
                writer(self.output_dir / relative)
                self.artifacts.append(relative.as_posix())
        logger.info(f"Dumped {len(trajectories)} full-resolution trajectories for {name}")

    def dump_samples(self, name: str, samples: np.ndarray, sidecar: SampleSidecar) -> None:
        """Write Gibbs samples with their JSON sidecar"""
        if not self.dumping:
            return
        relative = Path(DUMP_DIR) / f"{name}.csv"
        csv_path, sidecar_path = write_samples(self.output_dir / relative, samples, sidecar)
        self.artifacts += [relative.as_posix(), relative.with_name(sidecar_path.name).as_posix()]
        logger.debug(f"Wrote {samples.shape[0]} samples to {csv_path}")

    def emit_plot_script(self, csv_name: str, x: str, y: str, group: str | None = None, log: bool = False) -> None:
        """Self-contained matplotlib script plotting y against x from an artifact CSV"""
        if not self.config.emit_plot_scripts:
            return
        script_name = Path(csv_name).with_suffix(".plot.py").name
        scale = '\nplt.xscale("log")\nplt.yscale("log")' if log else ""
        grouping = (
            f"""groups = {{}}
for row in rows:
    groups.setdefault(row["{group}"], []).append(row)
for label, members in sorted(groups.items()):
    plt.plot([float(r["{x}"]) for r in members], [float(r["{y}"]) for r in members], label=label)
plt.legend(title="{group}")"""
            if group
            else f"""plt.plot([float(r["{x}"]) for r in rows], [float(r["{y}"]) for r in rows])"""
        )
        script = f'''import csv
from pathlib import Path

import matplotlib.pyplot as plt

with open(Path(__file__).with_name("{Path(csv_name).name}"), newline="") as handle:
    rows = list(csv.DictReader(handle))
{grouping}
plt.xlabel("{x}")
plt.ylabel("{y}"){scale}
plt.savefig(Path(__file__).with_suffix(".png"), dpi=150)
'''
        path = self.output_dir / script_name
        path.write_text(script)
        self.artifacts.append(script_name)


class ExperimentDefinition(BaseModel):
    """
    Registry entry of a theorem check
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    theorem: str
    summary: str
    knobs: type[BaseModel]
    runner: Callable[[ExperimentContext, Any], ReportBuilder]
    default_seed_count: int = 1
    config_keys: list[str]

    def parse_knobs(self, raw: dict[str, Any]) -> BaseModel:
        return self.knobs.model_validate(raw)

    def describe(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "theorem": self.theorem,
            "summary": self.summary,
            "config_keys": self.config_keys,
            "knobs": sorted(self.knobs.model_fields),
            "default_seed_count": self.default_seed_count,
        }


def run_experiment(
    definition: ExperimentDefinition,
    config: RunConfig,
    output_dir: Path,
    workers: int | None = None,
    progress: ProgressHook | None = None,
) -> ExperimentReport:
    """
    Execute one experiment and freeze its findings
    :param definition: registry entry
    :param config: validated run config
    :param output_dir: run directory for artifacts
    :param workers: worker pool size
    :param progress: progress hook
    :return:
    """
    knobs = definition.parse_knobs(config.knobs)
    seeds = config.resolve_seeds(definition.default_seed_count)
    output_dir.mkdir(parents=True, exist_ok=True)
    context = ExperimentContext(config, output_dir, seeds, workers, progress)
    logger.info(f"Running {definition.name} over {len(seeds)} seed(s) with {context.workers} worker(s)")
    started = time.perf_counter()
    builder = definition.runner(context, knobs)
    wall_time = time.perf_counter() - started
    logger.info(f"{definition.name}: {builder.verdict.value} after {wall_time:.1f}s ({builder.rule})")
    return ExperimentReport(
        name=definition.name,
        summary=definition.summary,
        verdict=builder.verdict,
        verdict_rule=builder.rule,
        config_digest=config_digest(config),
        code_version=code_version(),
        seeds=seeds,
        metrics=builder.metrics,
        gates=context.gates,
        controls=builder.controls,
        artifacts=context.artifacts,
        notes=builder.notes,
        violations=builder.violations[:MAX_REPORTED_VIOLATIONS],
        wall_time=wall_time,
        config=config.model_dump(mode="json", by_alias=True, exclude_unset=True),
    )
