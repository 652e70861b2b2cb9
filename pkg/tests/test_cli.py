import json
from pathlib import Path

from typer.testing import CliRunner

from polymerlab.cli import ERROR_EXIT_CODE, app
from polymerlab.experiments import EXPERIMENTS
from tests.basetest import BaseTest

SMALL_HEAT = {"experiment": "exp_heat_flow_suite", "knobs": {"n": 30, "t_end": 1.0, "ordering_n": 8}}


class TestCli(BaseTest):
    """test the polymerlab command line"""

    def setUp(self) -> None:
        super().setUp()
        self.runner = CliRunner()

    def write_config(self, content: dict | str, name: str = "config.json") -> Path:
        path = self.tmp_path / name
        path.write_text(content if isinstance(content, str) else json.dumps(content))
        return path

    def run_cli(self, *args: str):
        return self.runner.invoke(app, [str(arg) for arg in args])

    def run_config(self, content: dict | str):
        return self.run_cli("run", self.write_config(content), "--output-dir", self.tmp_path / "runs")

    def reports(self) -> list[Path]:
        return sorted((self.tmp_path / "runs").glob("*/report.json"))

    def test_minimal_config(self):
        result = self.run_config({"experiment": "exp_heat_flow_suite"})
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("exp_heat_flow_suite: PASS", result.stdout)
        self.assertEqual(len(self.reports()), 1)

    def test_temperature_mismatch(self):
        config = {"experiment": "exp_monotonicity", "sde": {"temperature": 1.0, "sigma": 0.5}}
        self.assertEqual(self.run_config(config).exit_code, ERROR_EXIT_CODE)

    def test_unknown_experiment(self):
        self.assertEqual(self.run_config({"experiment": "exp_unknown"}).exit_code, ERROR_EXIT_CODE)

    def test_malformed_json(self):
        self.assertEqual(self.run_config('{"experiment": "exp_heat_flow_suite",').exit_code, ERROR_EXIT_CODE)

    def test_missing_config(self):
        self.assertEqual(self.run_cli("run", self.tmp_path / "absent.json").exit_code, ERROR_EXIT_CODE)

    def test_list_json(self):
        result = self.run_cli("list", "--json")
        self.assertEqual(result.exit_code, 0)
        names = [entry["name"] for entry in json.loads(result.stdout)]
        self.assertEqual(names, list(EXPERIMENTS))

    def test_list_table(self):
        self.assertEqual(self.run_cli("list").exit_code, 0)

    def test_replay_reproduces(self):
        self.assertEqual(self.run_config(SMALL_HEAT).exit_code, 0)
        report_path = self.reports()[0]
        result = self.run_cli("replay", report_path)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(report_path.with_name("replay.json").exists())
        self.assertTrue((report_path.parent / "replay" / "heat_rays.csv").exists())

    def test_replay_rejects_other_version(self):
        self.assertEqual(self.run_config(SMALL_HEAT).exit_code, 0)
        report_path = self.reports()[0]
        raw = json.loads(report_path.read_text())
        raw["code_version"] = "0.0.0+other"
        report_path.write_text(json.dumps(raw))
        self.assertEqual(self.run_cli("replay", report_path).exit_code, ERROR_EXIT_CODE)

    def test_replay_extends_seeds(self):
        self.assertEqual(self.run_config(SMALL_HEAT).exit_code, 0)
        result = self.run_cli("replay", self.reports()[0], "--seeds-extend", "2")
        self.assertEqual(result.exit_code, 0, result.output)
        seeds = sorted(len(json.loads(path.read_text())["seeds"]) for path in self.reports())
        self.assertEqual(seeds, [3, 5])

    def test_replay_missing_report(self):
        self.assertEqual(self.run_cli("replay", self.tmp_path / "absent.json").exit_code, ERROR_EXIT_CODE)

    def test_list_shows_theorems(self):
        result = self.run_cli("list", "--json")
        theorems = {entry["name"]: entry["theorem"] for entry in json.loads(result.stdout)}
        self.assertEqual(theorems["exp_1f1s_pullback"], EXPERIMENTS["exp_1f1s_pullback"].theorem)
        self.assertTrue(all(theorems.values()))

    def test_unwritable_output_dir(self):
        blocker = self.tmp_path / "runs"
        blocker.write_text("not a directory")
        result = self.run_config(SMALL_HEAT)
        self.assertEqual(result.exit_code, ERROR_EXIT_CODE)
        self.assertNotIn("Traceback", result.output)

    def test_dump_trajectories(self):
        config = {
            "experiment": "exp_monotonicity",
            "sde": {"n": 16, "t_end": 1.0},
            "knobs": {"pairs": 9},
            "seeds": [0],
        }
        result = self.run_cli(
            "run",
            self.write_config(config),
            "--output-dir",
            self.tmp_path / "runs",
            "--dump-trajectories",
        )
        self.assertEqual(result.exit_code, 0, result.output)
        report_path = self.reports()[0]
        dumps = report_path.parent / "dumps"
        for name in ("monotonicity_0.csv", "monotonicity_0.bin", "monotonicity_1.csv", "monotonicity_1.bin"):
            self.assertTrue((dumps / name).exists(), name)
        report = json.loads(report_path.read_text())
        self.assertTrue(report["config"]["dump_trajectories"])
        self.assertIn("dumps/monotonicity_0.csv", report["artifacts"])
