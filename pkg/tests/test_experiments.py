import unittest
from unittest import skipIf

import numpy as np
from pydantic import ValidationError

from polymerlab.experiments import EXPERIMENTS, exp_heat_flow_suite
from polymerlab.experiments.geometry import GalerkinKnobs, contraction_ratios
from polymerlab.experiments.invariance import Moments, bridge_scale, diagonal_positions, fit_exponent
from polymerlab.experiments.order import crossed_chains, crossing_height
from polymerlab.gibbs import GaussianBridge
from polymerlab.models.report import Verdict
from polymerlab.polymer import partial_order_leq
from tests.basetest import IN_GITHUB_ACTIONS, BaseTest

ZERO = {"kind": "zero"}
SMALL_GIBBS = {"mixing_t_end": 200.0, "mixing_burn_in": 20.0, "mixing_stride": 0.5, "mixing_batches": 20}


class TestRegistry(unittest.TestCase):
    """test the experiment registry"""

    def test_stable_order(self):
        self.assertEqual(
            list(EXPERIMENTS),
            [
                "exp_monotonicity",
                "exp_slope_invariance",
                "exp_gibbs_invariance",
                "exp_shear_equivariance",
                "exp_ordering_by_noise",
                "exp_1f1s_pullback",
                "exp_galerkin_convergence",
                "exp_fluctuation_exponent",
                "exp_heat_flow_suite",
            ],
        )

    def test_describe(self):
        for name, definition in EXPERIMENTS.items():
            with self.subTest(name=name):
                description = definition.describe()
                self.assertEqual(description["name"], name)
                self.assertTrue(description["summary"])
                self.assertTrue(description["config_keys"])
                self.assertTrue(description["theorem"])

    def test_unknown_knob(self):
        with self.assertRaises(ValidationError):
            EXPERIMENTS["exp_heat_flow_suite"].parse_knobs({"no_such_knob": 1})


class TestHeatFlowSuite(BaseTest):
    """test the zero-potential heat flow suite"""

    def test_small_run_passes(self):
        report = self.run_small(
            "exp_heat_flow_suite",
            knobs={"n": 50, "t_end": 2.0, "ordering_n": 16},
        )
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertEqual(report.metrics["ray_max_deviation"].value, 0.0)
        self.assertLessEqual(report.metrics["ordering_limit_error"].value, 1e-6)
        self.assertTrue(all(control.degraded for control in report.controls))
        self.assertIn("heat_rays.csv", report.artifacts)
        self.assertTrue((self.tmp_path / "exp_heat_flow_suite" / "heat_ordering.csv").exists())

    def test_module_entry_point(self):
        config = self.config("exp_monotonicity", knobs={"n": 20, "t_end": 1.0, "ordering_n": 8})
        report = exp_heat_flow_suite(config, self.tmp_path / "heat")
        self.assertEqual(report.name, "exp_heat_flow_suite")
        self.assertEqual(report.seeds, [0, 1, 2])


class TestMonotonicity(BaseTest):
    """test exp_monotonicity"""

    def test_small_run_passes(self):
        report = self.run_small("exp_monotonicity", sde={"n": 16, "t_end": 1.0}, knobs={"pairs": 9})
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertEqual(report.metrics["violations"].value, 0.0)
        self.assertGreater(report.metrics["control_violations"].value, 0.0)
        self.assertEqual(report.violations, [])


class TestShearEquivariance(BaseTest):
    """test exp_shear_equivariance"""

    def test_small_run_passes(self):
        report = self.run_small(
            "exp_shear_equivariance",
            sde={"n": 32, "t_end": 1.0},
            knobs={"random_shears": 1},
        )
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertLessEqual(report.metrics["max_discrepancy"].value, 1e-8)
        self.assertEqual(report.gates["shear_tolerance"], 1e-8)


class TestOrderingByNoise(BaseTest):
    """test exp_ordering_by_noise"""

    def test_crossing_geometry(self):
        upper, lower = crossed_chains(16, [1.0, 0.0], 2.0)
        self.assertEqual(upper.coords[0], -1.0)
        self.assertEqual(lower.coords[0], 2.0)
        self.assertFalse(partial_order_leq(upper, lower))
        self.assertFalse(partial_order_leq(lower, upper))
        self.assertEqual(crossing_height([1.0, 0.0], 2.0), 2.0)

    def test_zero_potential_orders(self):
        report = self.run_small(
            "exp_ordering_by_noise",
            potential=ZERO,
            sde={"n": 16, "t_end": 100.0},
            knobs={"slopes": [1.0, 0.0], "separation": 2.0, "steer": False, "control_seeds": 2},
            seeds=[0, 1, 2, 3],
        )
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertEqual(report.metrics["ordering_frequency"].value, 1.0)
        self.assertEqual(report.metrics["persistence_breaks"].value, 0.0)
        self.assertEqual(report.metrics["deterministic_ordered"].value, 1.0)

    @skipIf(IN_GITHUB_ACTIONS, "Shot-noise ensemble; run locally")
    def test_shot_noise_orders(self):
        report = self.run_small(
            "exp_ordering_by_noise",
            potential={"kind": "shot_noise", "seed": 3},
            sde={"n": 16, "t_end": 100.0},
            knobs={"slopes": [1.0, 0.0], "separation": 2.0, "steer": False, "control_seeds": 4},
            seeds=list(range(10)),
        )
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertGreaterEqual(report.metrics["ordering_frequency"].value, 0.9)
        self.assertGreater(report.metrics["initial_crossings"].value, 0.0)

    def test_late_seeds_get_steered_phase(self):
        report = self.run_small(
            "exp_ordering_by_noise",
            potential=ZERO,
            sde={"n": 16, "t_end": 3.0},
            knobs={"slopes": [1.0, 0.0], "separation": 2.0, "steer_t1": 1.0, "steer_t2": 2.0, "control_seeds": 1},
            seeds=[0, 1, 2],
        )
        self.assertTrue(any(note.startswith("steered phase for 3 seed(s)") for note in report.notes), report.notes)
        infeasible = [note for note in report.notes if note.startswith("steering infeasible")]
        rows = (self.tmp_path / "exp_ordering_by_noise" / "ordering_times.csv").read_text().splitlines()
        steered = [row for row in rows if ",steered," in row]
        self.assertEqual(len(steered) + len(infeasible), 3)

    def test_slopes_must_differ(self):
        with self.assertRaises(ValidationError):
            EXPERIMENTS["exp_ordering_by_noise"].parse_knobs({"slopes": [1.0, 1.0]})


class TestPullback(BaseTest):
    """test exp_1f1s_pullback"""

    def test_zero_potential_synchronizes(self):
        report = self.run_small("exp_1f1s_pullback", potential=ZERO, seeds=[0, 1, 2])
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertEqual(report.metrics["pullback_frequency"].value, 1.0)
        self.assertLess(report.metrics["median_final_ratio"].value, 1e-3)
        self.assertEqual(report.controls[0].name, "different_slopes")
        self.assertTrue(report.controls[0].degraded)
        rows = (self.tmp_path / "exp_1f1s_pullback" / "pullback.csv").read_text().splitlines()[1:]
        depths = {row.split(",")[1] for row in rows}
        self.assertEqual(depths, {"50.0", "100.0", "200.0", "400.0"})


@skipIf(IN_GITHUB_ACTIONS, "Long chain; run locally")
class TestSlopeInvariance(BaseTest):
    """test exp_slope_invariance"""

    def test_long_chain_passes(self):
        report = self.run_small("exp_slope_invariance", sde={"n": 1000, "t_end": 2.0}, seeds=[0])
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertTrue(report.controls[0].degraded)


class TestGalerkinConvergence(BaseTest):
    """test exp_galerkin_convergence"""

    def test_contraction_ratios(self):
        self.assertEqual(contraction_ratios([1.0, 0.5, 0.1], 1e-14), [0.5, 0.2])
        self.assertEqual(contraction_ratios([1.0, 1e-15, 0.0], 1e-14), [0.0, 0.0])
        self.assertEqual(contraction_ratios([1e-15, 1.0], 1e-14), [float("inf")])

    def test_sizes_must_double(self):
        with self.assertRaises(ValidationError):
            GalerkinKnobs(sizes=[16, 24])

    def test_small_run_contracts(self):
        report = self.run_small(
            "exp_galerkin_convergence",
            sde={"t_end": 1.0},
            knobs={"sizes": [16, 32], "control_sizes": [4, 8]},
            seeds=[0, 1],
        )
        self.assertLessEqual(report.metrics["interior_worst_ratio"].value, 0.7)
        self.assertIn("interior_gap_n16", report.metrics)

    def test_resolved_levels_pass(self):
        report = self.run_small(
            "exp_galerkin_convergence",
            sde={"t_end": 1.0},
            knobs={"sizes": [8, 16], "control_sizes": [4, 8]},
            seeds=list(range(64)),
        )
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertGreater(report.metrics["interior_gap_n8"].value, 1e-14)
        self.assertGreater(report.metrics["interior_gap_n16"].value, 1e-14)
        self.assertTrue(report.controls[0].degraded)


class TestGibbsInvariance(BaseTest):
    """test exp_gibbs_invariance"""

    def test_diagonal_positions(self):
        self.assertEqual(diagonal_positions(3), [0, 3, 5])

    def test_moments(self):
        bridge = GaussianBridge(n=2, beta=1.0, right_endpoint=3.0)
        mean = bridge.mean()
        exact = Moments.exact(mean, bridge.covariance() + np.outer(mean, mean))
        self.assertEqual(exact.size, 5)
        samples = bridge.sample(4000, seed=2)
        empirical = Moments.from_units(samples[:, None, :])
        self.assertLess(float(np.max(np.abs(empirical.z_scores(exact)))), 4.5)

    def test_chain_standard_errors_see_autocorrelation(self):
        rng = np.random.default_rng(11)
        phi = 0.9
        draws = np.empty((2000, 4, 1))
        draws[0] = rng.normal(0.0, 1.0 / np.sqrt(1.0 - phi**2), size=(4, 1))
        for step in range(1, draws.shape[0]):
            draws[step] = phi * draws[step - 1] + rng.normal(size=(4, 1))
        moments = Moments.from_chains(draws)
        naive = draws.std() / np.sqrt(draws.size)
        self.assertGreater(float(moments.mean_se[0]), 2.5 * naive)
        self.assertEqual(moments.size, 2)

    @skipIf(IN_GITHUB_ACTIONS, "Mixing run; run locally")
    def test_control_degrades(self):
        report = self.run_small(
            "exp_gibbs_invariance",
            potential=ZERO,
            sde={"n": 4, "t_end": 3.0},
            knobs={
                "trajectories": 200,
                "mixing_t_end": 100.0,
                "mixing_burn_in": 10.0,
                "mixing_stride": 0.5,
                "covariance_trajectories": 2000,
            },
            seeds=[0],
        )
        self.assertLessEqual(report.metrics["eigenvalue_error"].value, 1e-10)
        self.assertTrue(report.controls[0].degraded)
        self.assertTrue(any("gaussian bridge" in note for note in report.notes))
        self.assertAlmostEqual(report.metrics["spectral_gap"].value, 2.0 - 2.0 * np.cos(np.pi / 5))

    def test_zero_potential_covariance_passes(self):
        report = self.run_small(
            "exp_gibbs_invariance",
            potential=ZERO,
            sde={"n": 2, "t_end": 1.0},
            knobs=SMALL_GIBBS | {"covariance_trajectories": 30_000},
            seeds=[0],
        )
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertLessEqual(report.metrics["covariance_resolution"].value, 0.05)
        self.assertLessEqual(report.metrics["covariance_max_relative_error"].value, 0.05)
        self.assertLessEqual(report.metrics["dlr_ks_max"].value, report.metrics["dlr_ks_critical"].value)
        self.assertEqual(report.metrics["dlr_hits"].value, 10_000)

    def test_small_covariance_ensemble_is_inconclusive(self):
        report = self.run_small(
            "exp_gibbs_invariance",
            potential=ZERO,
            sde={"n": 2, "t_end": 1.0},
            knobs=SMALL_GIBBS | {"covariance_trajectories": 200, "dlr_check": False},
            seeds=[0],
        )
        self.assertGreater(report.metrics["covariance_resolution"].value, 0.05)
        self.assertIs(report.verdict, Verdict.INCONCLUSIVE)
        self.assertTrue(any("raise covariance_trajectories" in note for note in report.notes))

    @skipIf(IN_GITHUB_ACTIONS, "MALA-initialized run; run locally")
    def test_shot_noise_passes(self):
        report = self.run_small(
            "exp_gibbs_invariance",
            potential={"kind": "shot_noise", "seed": 3},
            sde={"n": 2, "t_end": 1.0},
            knobs=SMALL_GIBBS | {"dlr_check": False},
            seeds=[0],
        )
        self.assertIs(report.verdict, Verdict.PASS, report.notes)
        self.assertTrue(any("grid oracle" in note for note in report.notes))
        self.assertTrue(any("covariance gate skipped" in note for note in report.notes))

    def test_dlr_volumes_must_nest(self):
        with self.assertRaises(ValidationError):
            EXPERIMENTS["exp_gibbs_invariance"].parse_knobs({"dlr_outer_n": 3, "dlr_inner_n": 3})

    def test_zero_temperature_is_inconclusive(self):
        report = self.run_small("exp_gibbs_invariance", sde={"temperature": 0.0}, seeds=[0])
        self.assertIs(report.verdict, Verdict.INCONCLUSIVE)


class TestFluctuationExponent(BaseTest):
    """test exp_fluctuation_exponent"""

    def test_fit_of_exact_profile(self):
        n = 64
        self.assertAlmostEqual(fit_exponent(np.sqrt(bridge_scale(n)), n, (0.1, 0.5)), 0.5, places=10)

    def test_fit_of_bridge_samples(self):
        n = 64
        samples = GaussianBridge(n=n, beta=1.0).sample(4000, seed=5)
        self.assertAlmostEqual(fit_exponent(np.abs(samples).mean(axis=0), n, (0.1, 0.5)), 0.5, delta=0.03)

    def test_wrong_slope_control(self):
        report = self.run_small(
            "exp_fluctuation_exponent",
            potential=ZERO,
            sde={"n": 32},
            knobs={"burn_in": 10.0, "measure_time": 20.0},
            seeds=[0],
        )
        self.assertTrue(report.controls[0].degraded)
        self.assertIs(report.verdict, Verdict.INCONCLUSIVE)

    def test_no_time_after_burn_in(self):
        with self.assertRaises(ValueError):
            self.run_small("exp_fluctuation_exponent", sde={"n": 8, "t_end": 5.0}, knobs={"burn_in": 10.0})
