import json
import tempfile
import unittest
from pathlib import Path
from unittest import skipIf

import numpy as np

from polymerlab.gibbs import (
    GaussianBridge,
    GibbsSpec,
    SampleSidecar,
    SamplerSettings,
    default_mala_step,
    dlr_check,
    energy,
    energy_gradient,
    exact_gaussian_sample,
    grid_oracle,
    mala_sample,
    spectral_gap,
    write_samples,
)
from polymerlab.models.config import ShotNoiseSpec
from polymerlab.models.error import OracleError
from polymerlab.potential import build_potential
from tests.basetest import IN_GITHUB_ACTIONS


class TestGaussianBridge(unittest.TestCase):
    """test the exact zero-potential measure"""

    def test_eigenvalues(self):
        for n in (2, 5, 64):
            with self.subTest(n=n):
                bridge = GaussianBridge(n=n, beta=1.0)
                error = np.abs(bridge.eigenvalues() - bridge.reference_eigenvalues())
                self.assertLessEqual(float(np.max(error)), 1e-10)
                self.assertAlmostEqual(spectral_gap(n), float(bridge.reference_eigenvalues()[0]), places=12)

    def test_covariance_inverts_precision(self):
        bridge = GaussianBridge(n=6, beta=2.0)
        precision = 2.0 * (2.0 * np.eye(6) - np.eye(6, k=1) - np.eye(6, k=-1))
        self.assertTrue(np.allclose(bridge.covariance() @ precision, np.eye(6), atol=1e-12))

    def test_mean_is_linear(self):
        self.assertEqual(GaussianBridge(n=3, beta=1.0, right_endpoint=4.0).mean().tolist(), [1.0, 2.0, 3.0])

    def test_exact_sample_moments(self):
        bridge = GaussianBridge(n=3, beta=2.0, right_endpoint=1.0)
        samples = exact_gaussian_sample(bridge, 20_000, seed=1)
        self.assertEqual(samples.shape, (20_000, 3))
        self.assertTrue(np.allclose(samples.mean(axis=0), bridge.mean(), atol=0.03))
        self.assertTrue(np.allclose(np.cov(samples, rowvar=False), bridge.covariance(), atol=0.03))
        self.assertTrue(np.array_equal(bridge.sample(10, seed=4), exact_gaussian_sample(bridge, 10, seed=4)))


class TestEnergy(unittest.TestCase):
    """test the polymer energy"""

    def test_energy_of_line(self):
        spec = GibbsSpec(n=2, beta=1.0, right_endpoint=3.0)
        self.assertEqual(energy(spec, [1.0, 2.0]), 1.5)
        self.assertEqual(energy(spec, np.array([[1.0, 2.0], [0.0, 0.0]])).tolist(), [1.5, 4.5])
        with self.assertRaises(ValueError):
            energy(spec, [1.0])

    def test_gradient_of_zero_potential(self):
        self.assertEqual(energy_gradient(GibbsSpec(n=1, beta=1.0), [1.5]).tolist(), [3.0])

    def test_gradient_matches_finite_difference(self):
        spec = GibbsSpec(n=3, beta=1.0, right_endpoint=0.5, potential=build_potential(ShotNoiseSpec(seed=3)))
        x = np.array([0.3, -0.2, 1.1])
        h = 1e-6
        numeric = [(energy(spec, x + h * e) - energy(spec, x - h * e)) / (2.0 * h) for e in np.eye(3)]
        self.assertTrue(np.allclose(energy_gradient(spec, x), numeric, atol=1e-5))


class TestGridOracle(unittest.TestCase):
    """test the quadrature oracle"""

    def test_single_coordinate(self):
        moments = grid_oracle(GibbsSpec(n=1, beta=1.0), bounds=[(-8.0, 8.0)])
        self.assertAlmostEqual(moments.mean[0], 0.0, places=10)
        self.assertAlmostEqual(moments.covariance[0][0], 0.5, places=6)
        self.assertAlmostEqual(moments.log_partition, 0.5 * np.log(np.pi), places=6)

    def test_matches_bridge_covariance(self):
        spec = GibbsSpec(n=2, beta=1.0)
        moments = grid_oracle(spec, bounds=[(-10.0, 10.0), (-10.0, 10.0)])
        self.assertTrue(np.allclose(moments.covariance, spec.bridge().covariance(), atol=1e-6))
        self.assertEqual(moments.resolution % 2, 1)

    def test_dimension_cap(self):
        with self.assertRaises(OracleError):
            grid_oracle(GibbsSpec(n=4, beta=1.0))

    def test_narrow_box(self):
        with self.assertRaises(OracleError):
            grid_oracle(GibbsSpec(n=1, beta=1.0), bounds=[(-0.5, 0.5)])


class TestMala(unittest.TestCase):
    """test the MALA sampler"""

    def test_gaussian_moments(self):
        spec = GibbsSpec(n=2, beta=1.0)
        result = mala_sample(
            spec,
            np.zeros(2),
            default_mala_step(spec),
            burn_in=200,
            count=2000,
            thin=5,
            seed=3,
            chains=8,
        )
        self.assertEqual(result.samples.shape, (16_000, 2))
        self.assertGreater(result.acceptance_rate, 0.0)
        self.assertLessEqual(result.acceptance_rate, 1.0)
        self.assertTrue(np.allclose(result.samples.mean(axis=0), 0.0, atol=0.05))
        self.assertTrue(np.allclose(np.cov(result.samples, rowvar=False), spec.bridge().covariance(), atol=0.08))

    def test_seeded(self):
        spec = GibbsSpec(n=2, beta=1.0)
        first = mala_sample(spec, np.zeros(2), 0.5, burn_in=10, count=20, seed=1)
        second = mala_sample(spec, np.zeros(2), 0.5, burn_in=10, count=20, seed=1)
        self.assertTrue(np.array_equal(first.samples, second.samples))

    def test_invalid_step(self):
        with self.assertRaises(ValueError):
            mala_sample(GibbsSpec(n=2, beta=1.0), np.zeros(2), 0.0, burn_in=0, count=1)


class TestDlrCheck(unittest.TestCase):
    """test the conditional consistency check"""

    def test_zero_potential_is_consistent(self):
        spec = GibbsSpec(n=4, beta=1.0)
        settings = SamplerSettings(count=10_000, chains=100, seed=4)
        report = dlr_check(4, 2, spec, settings, min_hits=10_000, alpha=0.01)
        self.assertEqual(report.hits, 10_000)
        self.assertEqual(len(report.statistics), 2)
        self.assertLess(report.bin_half_width, 0.05)
        self.assertTrue(report.consistent, report.statistics)

    @skipIf(IN_GITHUB_ACTIONS, "Long MALA run; run locally")
    def test_shot_noise_is_consistent(self):
        field = build_potential(ShotNoiseSpec(seed=3))
        spec = GibbsSpec(n=4, beta=1.0, potential=field)
        settings = SamplerSettings(burn_in=2000, count=320, thin=100, chains=1024, seed=6)
        report = dlr_check(4, 2, spec, settings, min_hits=10_000, alpha=0.01)
        self.assertEqual(report.hits, 10_000)
        self.assertTrue(report.consistent, report.statistics)

    def test_volume_guards(self):
        spec = GibbsSpec(n=4, beta=1.0)
        with self.assertRaises(ValueError):
            dlr_check(3, 3, spec)
        with self.assertRaises(ValueError):
            dlr_check(12, 2, spec)


class TestWriteSamples(unittest.TestCase):
    """test the sample dump"""

    def test_csv_and_sidecar(self):
        spec = GibbsSpec(n=2, beta=1.0)
        samples = exact_gaussian_sample(spec.bridge(), 5, seed=0)
        sidecar = SampleSidecar(spec=spec.describe(), seed=0, acceptance_rate=None, step=None, count=5)
        with tempfile.TemporaryDirectory() as tmp:
            csv_path, json_path = write_samples(Path(tmp) / "out" / "samples.csv", samples, sidecar)
            lines = csv_path.read_text().splitlines()
            self.assertEqual(lines[0], "x_1,x_2")
            self.assertEqual(len(lines), 6)
            self.assertEqual(json.loads(json_path.read_text())["spec"]["potential"]["kind"], "zero")
