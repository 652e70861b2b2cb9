import os
import tempfile
import unittest
from pathlib import Path
from typing import Any

from polymerlab.experiments import EXPERIMENTS
from polymerlab.experiments.harness import run_experiment
from polymerlab.models.config import RunConfig
from polymerlab.models.report import ExperimentReport

IN_GITHUB_ACTIONS = os.getenv("GITHUB_ACTIONS") == "true"


class BaseTest(unittest.TestCase):
    """Test case with a scratch directory and helpers for small experiment runs"""

    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp_path = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    @staticmethod
    def config(experiment: str, **sections: Any) -> RunConfig:
        return RunConfig.model_validate({"experiment": experiment, **sections})

    def run_small(self, experiment: str, workers: int = 2, **sections: Any) -> ExperimentReport:
        """Run an experiment into the scratch directory"""
        config = self.config(experiment, **sections)
        return run_experiment(EXPERIMENTS[experiment], config, self.tmp_path / experiment, workers=workers)
