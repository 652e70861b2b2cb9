import json
import logging
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from polymerlab.experiments import EXPERIMENTS
from polymerlab.experiments.harness import (
    ExperimentDefinition,
    ProgressHook,
    code_version,
    config_digest,
    run_experiment,
)
from polymerlab.models.config import RunConfig
from polymerlab.models.error import ConfigError, ReplayError
from polymerlab.models.report import ExperimentReport

logger = logging.getLogger(__name__)

REPLAY_DIR = "replay"


def locate(text: str, loc: tuple[int | str, ...]) -> int | None:
    """
    Line of the JSON key addressed by a validation error location
    :param text: raw config text
    :param loc: pydantic error location
    :return: 1-based line number of the deepest key found, None if no key of the location occurs in the text
    """
    position = 0
    found: int | None = None
    for key in loc:
        if not isinstance(key, str):
            continue
        index = text.find(f'"{key}"', position)
        if index < 0:
            break
        position = index
        found = index
    if found is None:
        return None
    return text.count("\n", 0, found) + 1


class Lab:
    """Runs, replays and lists theorem checks"""

    REPORT_NAME = "report.json"
    REPLAY_NAME = "replay.json"

    def __init__(self, workers: int | None = None, progress: ProgressHook | None = None):
        """constructor"""
        self.workers = workers
        self.progress = progress

    @classmethod
    def load_config(cls, path: Path) -> RunConfig:
        """
        Read and validate a run config
        :param path: JSON config file
        :return: validated config
        :raises ConfigError: unreadable file, malformed JSON, schema violation or unknown experiment
        """
        try:
            text = path.read_text()
        except OSError as ex:
            raise ConfigError(f"cannot read config {path}: {ex}") from ex
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as ex:
            raise ConfigError(f"malformed JSON: {ex.msg} (column {ex.colno})", line=ex.lineno) from ex
        try:
            config = RunConfig.model_validate(raw)
        except ValidationError as ex:
            error = ex.errors()[0]
            location = ".".join(str(part) for part in error["loc"]) or "config"
            raise ConfigError(f"{location}: {error['msg']}", line=locate(text, error["loc"])) from ex
        cls.definition(config.experiment)
        logger.info(f"Loaded config for {config.experiment} from {path}")
        return config

    @staticmethod
    def definition(name: str) -> ExperimentDefinition:
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")
        return EXPERIMENTS[name]

    @staticmethod
    def list_experiments() -> list[dict[str, Any]]:
        """Registry entries in their stable order"""
        return [definition.describe() for definition in EXPERIMENTS.values()]

    def run(self, config: RunConfig, output_dir: Path | None = None) -> tuple[ExperimentReport, Path]:
        """
        Execute the configured experiment and store its report
        :param config: validated run config
        :param output_dir: root directory overriding the config's output_dir
        :return: report and the path it was written to
        """
        definition = self.definition(config.experiment)
        root = output_dir if output_dir is not None else Path(config.output_dir)
        run_dir = root / f"{definition.name}-{config_digest(config)[:12]}"
        report = run_experiment(definition, config, run_dir, workers=self.workers, progress=self.progress)
        return report, self.store_report(report, run_dir / self.REPORT_NAME)

    @staticmethod
    def load_report(path: Path) -> ExperimentReport:
        try:
            return ExperimentReport.model_validate_json(path.read_text())
        except (OSError, ValidationError) as ex:
            raise ReplayError(f"cannot load report {path}: {ex}") from ex

    @staticmethod
    def store_report(report: ExperimentReport, path: Path) -> Path:
        path.parent.mkdir(exist_ok=True, parents=True)
        path.write_text(report.model_dump_json(indent=2))
        logger.info(f"Stored report at {path}")
        return path

    def replay(self, report_path: Path, seeds_extend: int = 0) -> tuple[ExperimentReport, Path]:
        """
        Re-execute a report's embedded config.
        Without seed extension the metrics must reproduce bitwise; with it the extra seeds follow the largest
        recorded seed and the merged run is stored as a new report beside the original run directory.
        Bitwise replays write their artifacts into the replay/ subdirectory, leaving the original files untouched.
        :param report_path: report written by run
        :param seeds_extend: number of seeds to add
        :return: replayed report and its path
        :raises ReplayError: code version differs or metrics did not reproduce
        """
        original = self.load_report(report_path)
        current = code_version()
        if original.code_version != current:
            raise ReplayError(f"report was produced by polymerlab {original.code_version}, this is {current}")
        raw = dict(original.config)
        if seeds_extend > 0:
            start = max(original.seeds) + 1
            raw["seeds"] = [*original.seeds, *range(start, start + seeds_extend)]
            raw.pop("seed_count", None)
        try:
            config = RunConfig.model_validate(raw)
        except ValidationError as ex:
            raise ReplayError(f"embedded config no longer validates: {ex}") from ex
        definition = self.definition(config.experiment)
        run_dir = report_path.parent / REPLAY_DIR
        if seeds_extend > 0:
            logger.info(f"Extending {original.name} from {len(original.seeds)} to {len(raw['seeds'])} seeds")
            run_dir = report_path.parent.parent / f"{definition.name}-{config_digest(config)[:12]}"
        replayed = run_experiment(definition, config, run_dir, workers=self.workers, progress=self.progress)
        if seeds_extend > 0:
            return replayed, self.store_report(replayed, run_dir / self.REPORT_NAME)
        if replayed.metrics_digest() != original.metrics_digest():
            differing = sorted(
                name
                for name in original.metrics.keys() | replayed.metrics.keys()
                if original.metrics.get(name) != replayed.metrics.get(name)
            )
            detail = ", ".join(differing) or "verdict or controls"
            raise ReplayError(f"{original.name} did not reproduce; differing metrics: {detail}")
        logger.info(f"{original.name} reproduced bitwise ({len(original.metrics)} metrics)")
        return replayed, self.store_report(replayed, report_path.with_name(self.REPLAY_NAME))
