import time
import unittest

import numpy as np
from pydantic import ValidationError

from polymerlab.experiments.harness import (
    ExperimentContext,
    ReportBuilder,
    batch_means_stderr,
    config_digest,
    mean_interval,
    sidak_z,
)
from polymerlab.lab import Lab, locate
from polymerlab.models.config import RunConfig, SdeConfig
from polymerlab.models.error import ConfigError
from polymerlab.models.report import ExperimentReport, Verdict
from tests.basetest import BaseTest


class TestRunConfig(unittest.TestCase):
    """test RunConfig validation"""

    def test_minimal(self):
        config = RunConfig.model_validate({"experiment": "exp_heat_flow_suite"})
        self.assertEqual(config.sde.n, 128)
        self.assertEqual(config.resolve_seeds(3), [0, 1, 2])

    def test_noise_dt_must_match(self):
        with self.assertRaises(ValidationError):
            RunConfig.model_validate({"experiment": "x", "sde": {"dt": 0.05}})
        RunConfig.model_validate({"experiment": "x", "sde": {"dt": 0.05}, "noise": {"dt": 0.05}})

    def test_temperature_mismatch(self):
        raw = {"experiment": "x", "sde": {"temperature": 1.0, "sigma": 1.0}}
        with self.assertRaises(ValidationError):
            RunConfig.model_validate(raw)
        config = RunConfig.model_validate({**raw, "allow_temperature_mismatch": True})
        self.assertFalse(config.sde.temperature_consistent())

    def test_seeds_or_seed_count(self):
        with self.assertRaises(ValidationError):
            RunConfig.model_validate({"experiment": "x", "seeds": [1], "seed_count": 2})
        config = RunConfig.model_validate({"experiment": "x", "seed_count": 2, "noise": {"seed": 10}})
        self.assertEqual(config.resolve_seeds(5), [10, 11])
        self.assertEqual(RunConfig(experiment="x", seeds=[4, 2]).resolve_seeds(5), [4, 2])

    def test_unknown_field(self):
        with self.assertRaises(ValidationError):
            RunConfig.model_validate({"experiment": "x", "sde": {"steps": 10}})

    def test_steps(self):
        cfg = SdeConfig(dt=0.01)
        self.assertEqual(cfg.steps(2.5), 250)
        with self.assertRaises(ValueError):
            cfg.steps(0.015)

    def test_zero_temperature(self):
        cfg = SdeConfig(temperature=0.0)
        self.assertEqual(cfg.noise_scale, 0.0)
        self.assertEqual(cfg.beta, float("inf"))

    def test_digest_is_stable(self):
        first = RunConfig.model_validate({"experiment": "x", "knobs": {"a": 1, "b": 2}})
        second = RunConfig.model_validate({"knobs": {"b": 2, "a": 1}, "experiment": "x"})
        self.assertEqual(config_digest(first), config_digest(second))
        self.assertNotEqual(config_digest(first), config_digest(RunConfig(experiment="y")))


class TestStatistics(unittest.TestCase):
    """test the statistical helpers"""

    def test_sidak_z(self):
        self.assertEqual(sidak_z(1), 3.0)
        self.assertGreater(sidak_z(50), sidak_z(5))
        self.assertGreater(sidak_z(5), 3.0)

    def test_mean_interval(self):
        metric = mean_interval([1.0, 2.0, 3.0])
        self.assertEqual(metric.value, 2.0)
        self.assertLess(metric.ci_low, 2.0)
        self.assertGreater(metric.ci_high, 2.0)
        self.assertIsNone(mean_interval([5.0]).ci_low)

    def test_batch_means_stderr(self):
        series = np.random.default_rng(0).normal(size=(20_000, 2))
        stderr = batch_means_stderr(series)
        self.assertEqual(stderr.shape, (2,))
        self.assertTrue(np.allclose(stderr, 1.0 / np.sqrt(20_000), rtol=0.5))
        with self.assertRaises(ValueError):
            batch_means_stderr(np.zeros(5))


class TestReportBuilder(unittest.TestCase):
    """test verdict bookkeeping"""

    def test_pass_with_degraded_control(self):
        builder = ReportBuilder()
        builder.control("broken", "should fail", "failed", degraded=True)
        self.assertIs(builder.finish(Verdict.PASS, "rule").verdict, Verdict.PASS)

    def test_undegraded_control_is_inconclusive(self):
        builder = ReportBuilder()
        builder.control("broken", "should fail", "passed", degraded=False)
        builder.finish(Verdict.PASS, "rule")
        self.assertIs(builder.verdict, Verdict.INCONCLUSIVE)
        self.assertTrue(any("broken" in note for note in builder.notes))

    def test_fail_stays_fail(self):
        builder = ReportBuilder()
        builder.control("broken", "should fail", "passed", degraded=False)
        self.assertIs(builder.finish(Verdict.FAIL, "rule").verdict, Verdict.FAIL)

    def test_exit_codes(self):
        self.assertEqual([verdict.exit_code for verdict in Verdict], [0, 1, 2])


class TestExperimentContext(BaseTest):
    """test the context handed to experiments"""

    def context(self, **sections) -> ExperimentContext:
        return ExperimentContext(self.config("exp_monotonicity", **sections), self.tmp_path, [0], workers=4)

    def test_sde_with_keeps_explicit_fields(self):
        context = self.context(sde={"n": 12})
        cfg = context.sde_with(n=64, t_end=1.0)
        self.assertEqual(cfg.n, 12)
        self.assertEqual(cfg.t_end, 1.0)

    def test_gate_recorded(self):
        context = self.context(gates={"tolerance": 0.5})
        self.assertEqual(context.gate("tolerance", 1e-3), 0.5)
        self.assertEqual(context.gate("other", 2.0), 2.0)
        self.assertEqual(context.gates, {"tolerance": 0.5, "other": 2.0})

    def test_fan_out_keeps_order(self):
        context = self.context()
        calls = []

        def hook(description, total):
            calls.append((description, total))
            return lambda: None

        context.progress = hook

        def slow(item):
            time.sleep(0.01 * (5 - item))
            return item * item

        self.assertEqual(context.fan_out(slow, [0, 1, 2, 3, 4], "squares"), [0, 1, 4, 9, 16])
        self.assertEqual(calls, [("squares", 5)])

    def test_write_csv(self):
        context = self.context()
        path = context.write_csv("table.csv", ["a", "b"], [[1, 2], [3, 4]])
        self.assertEqual(path.read_text().splitlines(), ["a,b", "1,2", "3,4"])
        self.assertEqual(context.artifacts, ["table.csv"])

    def test_plot_script_only_when_enabled(self):
        self.context().emit_plot_script("table.csv", "a", "b")
        self.assertFalse((self.tmp_path / "table.plot.py").exists())
        context = self.context(emit_plot_scripts=True)
        context.emit_plot_script("table.csv", "a", "b", group="c", log=True)
        script = (self.tmp_path / "table.plot.py").read_text()
        self.assertIn("matplotlib", script)
        self.assertIn("table.plot.py", context.artifacts)

    def test_noise_path_dt(self):
        context = self.context()
        self.assertEqual(context.noise_path(3).dt, 0.01)
        self.assertEqual(context.noise_path(3, dt=0.05).dt, 0.05)


class TestLoadConfig(BaseTest):
    """test config loading errors"""

    def write(self, text: str):
        path = self.tmp_path / "config.json"
        path.write_text(text)
        return path

    def test_valid(self):
        config = Lab.load_config(self.write('{"experiment": "exp_heat_flow_suite"}'))
        self.assertEqual(config.experiment, "exp_heat_flow_suite")

    def test_validation_error_line(self):
        text = '{\n  "experiment": "exp_monotonicity",\n  "sde": {\n    "n": -4\n  }\n}\n'
        with self.assertRaises(ConfigError) as context:
            Lab.load_config(self.write(text))
        self.assertEqual(context.exception.line, 4)

    def test_malformed_json(self):
        with self.assertRaises(ConfigError) as context:
            Lab.load_config(self.write('{\n  "experiment": \n}'))
        self.assertEqual(context.exception.line, 3)

    def test_unknown_experiment(self):
        with self.assertRaises(ConfigError) as context:
            Lab.load_config(self.write('{"experiment": "exp_nothing"}'))
        self.assertIn("exp_heat_flow_suite", str(context.exception))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            Lab.load_config(self.tmp_path / "absent.json")

    def test_locate(self):
        self.assertEqual(locate('{\n"a": {\n"b": 1}}', ("a", "b")), 3)
        self.assertIsNone(locate("{}", ("a",)))


class TestReport(unittest.TestCase):
    """test ExperimentReport helpers"""

    def test_metrics_digest_ignores_wall_time(self):
        report = ExperimentReport(
            name="exp",
            summary="",
            verdict=Verdict.PASS,
            verdict_rule="",
            config_digest="0",
            code_version="0",
            seeds=[0],
            wall_time=1.0,
        )
        slower = report.model_copy(update={"wall_time": 5.0})
        self.assertEqual(report.metrics_digest(), slower.metrics_digest())
        self.assertEqual(report.headline("r.json"), "exp: PASS (r.json)")
