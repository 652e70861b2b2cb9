import unittest

import numpy as np
from pydantic import ValidationError

from polymerlab.polymer import (
    LATTICE_NORM,
    STAR_NORM,
    NormSpec,
    PolymerState,
    Ray,
    crossing_indices,
    discrete_laplacian,
    distance,
    estimate_slope,
    partial_order_leq,
    shear,
    weighted_norm,
)


class TestNormSpec(unittest.TestCase):
    """test NormSpec"""

    def test_parse_infinity(self):
        for value in ("inf", "∞", float("inf")):
            with self.subTest(value=value):
                self.assertTrue(NormSpec(alpha=1.0, p=value).is_sup)

    def test_reject_small_exponent(self):
        with self.assertRaises(ValidationError):
            NormSpec(alpha=1.0, p=0.5)

    def test_admissibility(self):
        self.assertTrue(STAR_NORM.is_admissible())
        self.assertTrue(LATTICE_NORM.is_admissible())
        self.assertFalse(NormSpec(alpha=0.4, p=2.0).is_admissible())


class TestPolymerState(unittest.TestCase):
    """test PolymerState and its helpers"""

    def test_from_profile(self):
        state = PolymerState.from_profile([1.0, 2.0, 3.0])
        self.assertEqual(state.n, 2)
        self.assertEqual(state.right_boundary, 3.0)
        self.assertEqual(state.profile().tolist(), [0.0, 1.0, 2.0, 3.0])

    def test_json_checkpoint(self):
        state = PolymerState.from_profile([0.5, -1.25, 2.0])
        text = state.model_dump_json()
        self.assertIn('"n":2', text.replace(" ", ""))
        self.assertEqual(PolymerState.model_validate_json(text), state)

    def test_declared_length_mismatch(self):
        with self.assertRaises(ValidationError):
            PolymerState.model_validate({"n": 3, "coords": [1.0, 2.0], "right_boundary": 0.0})

    def test_non_finite_coords(self):
        with self.assertRaises(ValidationError):
            PolymerState(coords=[1.0, float("nan")], right_boundary=0.0)

    def test_ray_materialize(self):
        state = Ray(slope=2.0, offset=1.0).materialize(4)
        self.assertEqual(state.coords.tolist(), [3.0, 5.0, 7.0, 9.0])
        self.assertEqual(state.right_boundary, 11.0)
        with self.assertRaises(ValueError):
            Ray(slope=1.0).materialize(0)

    def test_ray_is_harmonic(self):
        for slope in (-1.0, 0.5, 2.0):
            with self.subTest(slope=slope):
                laplacian = discrete_laplacian(Ray(slope=slope).materialize(50))
                self.assertEqual(float(np.max(np.abs(laplacian))), 0.0)

    def test_shifted_ray_is_not_harmonic(self):
        laplacian = discrete_laplacian(Ray(slope=1.0, offset=3.0).materialize(10))
        self.assertEqual(laplacian[0], -3.0)
        self.assertTrue(np.all(laplacian[1:] == 0.0))


class TestNorms(unittest.TestCase):
    """test weighted norms and distances"""

    def test_lattice_norm_of_ray(self):
        self.assertEqual(weighted_norm(Ray(slope=1.0).materialize(20), LATTICE_NORM), 1.0)

    def test_star_norm(self):
        x = np.array([1.0, 0.0, 0.0])
        self.assertAlmostEqual(weighted_norm(x, STAR_NORM), 1.0)
        self.assertEqual(weighted_norm(np.zeros(5), STAR_NORM), 0.0)

    def test_batch(self):
        batch = np.stack([np.arange(1.0, 6.0), 2.0 * np.arange(1.0, 6.0)])
        self.assertEqual(weighted_norm(batch, LATTICE_NORM).tolist(), [1.0, 2.0])

    def test_distance(self):
        x = Ray(slope=1.0).materialize(5)
        y = Ray(slope=0.0).materialize(5)
        self.assertEqual(distance(x, y), 1.0)
        with self.assertRaises(ValueError):
            distance(x, Ray(slope=0.0).materialize(6))


class TestOrder(unittest.TestCase):
    """test the partial order"""

    def test_rays(self):
        lower = Ray(slope=0.0).materialize(8)
        upper = Ray(slope=1.0).materialize(8)
        self.assertTrue(partial_order_leq(lower, upper))
        self.assertFalse(partial_order_leq(upper, lower))
        self.assertTrue(partial_order_leq(lower, lower, tolerance=0.0))

    def test_tolerance(self):
        x = PolymerState(coords=[1.0 + 1e-13], right_boundary=0.0)
        y = PolymerState(coords=[1.0], right_boundary=0.0)
        self.assertTrue(partial_order_leq(x, y))
        self.assertFalse(partial_order_leq(x, y, tolerance=0.0))
        with self.assertRaises(ValueError):
            partial_order_leq(x, y, tolerance=-1.0)

    def test_crossing_indices(self):
        x = PolymerState(coords=[0.0, 2.0, 0.0, 5.0], right_boundary=0.0)
        y = PolymerState(coords=[1.0, 1.0, 1.0, 1.0], right_boundary=0.0)
        self.assertEqual(crossing_indices(x, y), [1, 3])


class TestShearAndSlope(unittest.TestCase):
    """test shear and slope estimation"""

    def test_shear_of_ray(self):
        self.assertEqual(shear(Ray(slope=0.0).materialize(6), 0.5), Ray(slope=0.5).materialize(6))

    def test_shear_inverse(self):
        x = PolymerState.from_profile(np.random.default_rng(3).normal(size=11))
        back = shear(shear(x, 0.7), -0.7)
        self.assertTrue(np.allclose(back.coords, x.coords, atol=1e-12))

    def test_estimate_slope_of_ray(self):
        estimate = estimate_slope(Ray(slope=0.7, offset=0.0).materialize(100))
        self.assertAlmostEqual(estimate.slope, 0.7, places=10)
        self.assertAlmostEqual(estimate.lower, 0.7, places=12)
        self.assertAlmostEqual(estimate.upper, 0.7, places=12)
        self.assertEqual(estimate.window, 50)

    def test_bracket_shrinks_with_length(self):
        rng = np.random.default_rng(11)
        widths = []
        for n in (50, 5000):
            k = np.arange(1, n + 2, dtype=np.float64)
            widths.append(estimate_slope(PolymerState.from_profile(0.3 * k + rng.uniform(-1, 1, n + 1))).width)
        self.assertLess(widths[1], widths[0])

    def test_degenerate_window(self):
        with self.assertRaises(ValueError):
            estimate_slope(Ray(slope=1.0).materialize(10), tail_fraction=0.0)
        with self.assertRaises(ValueError):
            estimate_slope(Ray(slope=1.0).materialize(2), tail_fraction=0.5)
