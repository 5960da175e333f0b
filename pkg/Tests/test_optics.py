import math
import unittest

import numpy as np

from core.errors import DomainError
from optics.aperture import ApertureKind, ApertureShape, polygon_factor, scatter_weight, scatter_weight_derivative
from optics.thin_lens import LensSpec, coc_diameter, coc_diameter_exact, signed_defocus


class TestThinLens(unittest.TestCase):

    def test_coc_diameter_values(self):
        self.assertEqual(coc_diameter(15.0, 2.0, 2.0), 0.0)
        self.assertAlmostEqual(coc_diameter(15.0, 2.0, 4.0), 3.75, places=12)
        for depth in (0.3, 1.0, 7.5):
            self.assertEqual(coc_diameter(0.0, 1.0, depth), 0.0)

    def test_signed_defocus_sign(self):
        self.assertAlmostEqual(signed_defocus(10.0, 2.0, 1.0), 5.0, places=12)
        self.assertEqual(signed_defocus(10.0, 2.0, 2.0), 0.0)
        self.assertAlmostEqual(signed_defocus(10.0, 2.0, 4.0), -2.5, places=12)

    def test_coc_is_magnitude_of_signed_defocus(self):
        rng = np.random.default_rng(3)
        k = rng.uniform(0.0, 20.0, 200)
        f = rng.uniform(0.1, 5.0, 200)
        h = rng.uniform(0.1, 5.0, 200)
        np.testing.assert_array_equal(coc_diameter(k, f, h), np.abs(signed_defocus(k, f, h)))

    def test_non_positive_depth_rejected(self):
        with self.assertRaises(DomainError):
            coc_diameter(1.0, 0.0, 1.0)
        with self.assertRaises(DomainError):
            coc_diameter(1.0, 1.0, -2.0)
        with self.assertRaises(DomainError):
            signed_defocus(1.0, 1.0, math.nan)

    def test_coc_diameter_exact_values(self):
        lens = LensSpec(0.035, 0.01)
        self.assertEqual(coc_diameter_exact(lens, 2.0, 2.0), 0.0)
        self.assertAlmostEqual(coc_diameter_exact(lens, 2.0, 4.0), 0.035 * 0.01 * 2.0 / (4.0 * 1.965), places=15)
        self.assertAlmostEqual(lens.aperture_parameter, 0.035 * 0.01, places=15)

    def test_exact_requires_real_image(self):
        lens = LensSpec(0.05, 0.01)
        with self.assertRaises(DomainError):
            coc_diameter_exact(lens, 0.05, 1.0)
        with self.assertRaises(DomainError):
            coc_diameter_exact(lens, 1.0, 0.01)
        with self.assertRaises(DomainError):
            LensSpec(0.0, 0.01)
        with self.assertRaises(DomainError):
            LensSpec(0.05, -1.0)

    def test_approximation_gap_bound(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            f = rng.uniform(0.01, 0.1)
            lens = LensSpec(f, rng.uniform(0.001, 0.05))
            focus = rng.uniform(1.5 * f, 50.0 * f)
            depth = rng.uniform(1.5 * f, 50.0 * f)
            if abs(depth - focus) < 1e-9:
                continue
            exact = coc_diameter_exact(lens, focus, depth)
            approx = coc_diameter(lens.aperture_parameter, focus, depth)
            self.assertLess(abs(approx - exact) / exact, f / (focus - f))

    def test_gap_shrinks_with_focus_distance(self):
        f = 0.035
        lens = LensSpec(f, 0.01)
        gaps = []
        for ratio in (10.0, 100.0, 1000.0):
            focus = ratio * f
            depth = 2.0 * focus
            exact = coc_diameter_exact(lens, focus, depth)
            gaps.append(abs(coc_diameter(lens.aperture_parameter, focus, depth) - exact) / exact)
        self.assertGreater(gaps[0], gaps[1])
        self.assertGreater(gaps[1], gaps[2])

    def test_linear_in_aperture(self):
        depths = np.linspace(0.5, 4.0, 9)
        np.testing.assert_allclose(coc_diameter(6.0, 2.0, depths), 2.0 * coc_diameter(3.0, 2.0, depths), rtol=1e-14)


class TestScatterWeight(unittest.TestCase):

    def test_values(self):
        self.assertAlmostEqual(scatter_weight(1.0, 0.0), (0.5 + 0.5 * math.tanh(4.0)) / 1.2, places=14)
        self.assertAlmostEqual(scatter_weight(1.0, 0.0), 0.83305, places=4)
        self.assertAlmostEqual(scatter_weight(0.0, 0.0), 2.5, places=14)

    def test_positive_and_decreasing(self):
        distances = np.linspace(0.0, 20.0, 401)
        for radius in (0.0, 0.5, 3.0, 12.0):
            weights = np.asarray(scatter_weight(radius, distances))
            self.assertTrue(np.all(weights > 0.0))
            self.assertTrue(np.all(np.diff(weights) <= 0.0))

    def test_far_tail_stays_positive(self):
        for distance in (17.0, 20.0, 40.0, 80.0):
            self.assertGreater(scatter_weight(0.0, distance), 0.0)
        tail = np.asarray(scatter_weight(0.0, np.array([17.0, 18.0, 19.0, 20.0])))
        self.assertTrue(np.all(np.diff(tail) < 0.0))
        self.assertAlmostEqual(scatter_weight(0.0, 20.0) / scatter_weight(0.0, 19.0), math.exp(-8.0), places=12)
        self.assertGreater(scatter_weight_derivative(0.0, 20.0), 0.0)

    def test_derivative_matches_finite_differences(self):
        step = 1e-6
        for radius in (0.1, 0.7, 2.3, 5.0):
            for distance in (0.0, 0.5, 1.0, 2.4, 4.9):
                numeric = (scatter_weight(radius + step, distance) - scatter_weight(radius - step, distance)) / (2.0 * step)
                analytic = scatter_weight_derivative(radius, distance)
                self.assertLess(abs(numeric - analytic), 1e-6 * max(1.0, abs(analytic)))


class TestPolygonFactor(unittest.TestCase):

    def test_vertex_and_edge_midpoint(self):
        self.assertAlmostEqual(polygon_factor(6, 0.0, 1.0, 0.0), 1.0, places=14)
        angle = math.pi / 6
        self.assertAlmostEqual(polygon_factor(6, 0.0, math.cos(angle), math.sin(angle)), math.cos(math.pi / 6), places=12)

    def test_zero_offset_is_one(self):
        self.assertEqual(polygon_factor(5, 0.3, 0.0, 0.0), 1.0)

    def test_range_and_period(self):
        angles = np.linspace(-math.pi, math.pi, 721)
        for blades in (3, 4, 5, 8):
            k = np.asarray(polygon_factor(blades, 0.2, np.cos(angles), np.sin(angles)))
            self.assertTrue(np.all(k >= math.cos(math.pi / blades) - 1e-12))
            self.assertTrue(np.all(k <= 1.0 + 1e-12))
            shifted = angles + 2.0 * math.pi / blades
            k_shifted = np.asarray(polygon_factor(blades, 0.2, np.cos(shifted), np.sin(shifted)))
            np.testing.assert_allclose(k_shifted, k, atol=1e-9)

    def test_many_blades_approach_circle(self):
        angles = np.linspace(0.0, 2.0 * math.pi, 2000)
        k = np.asarray(polygon_factor(64, 0.0, np.cos(angles), np.sin(angles)))
        self.assertLess(float(np.max(np.abs(k - 1.0))), 0.0013)

    def test_too_few_blades(self):
        with self.assertRaises(DomainError):
            polygon_factor(2, 0.0, 1.0, 0.0)
        with self.assertRaises(DomainError):
            ApertureShape.polygonal(2)


class TestApertureShape(unittest.TestCase):

    def test_from_blades(self):
        self.assertIs(ApertureShape.from_blades(None).kind, ApertureKind.CIRCULAR)
        self.assertIs(ApertureShape.from_blades(0).kind, ApertureKind.CIRCULAR)
        shape = ApertureShape.from_blades(6, 0.1)
        self.assertIs(shape.kind, ApertureKind.POLYGONAL)
        self.assertEqual(shape.blade_count, 6)

    def test_radius_factor(self):
        dx = np.array([1.0, 0.0, -2.0])
        dy = np.array([0.0, 3.0, 2.0])
        np.testing.assert_array_equal(ApertureShape.circular().radius_factor(dx, dy), np.ones(3))
        np.testing.assert_array_equal(ApertureShape.polygonal(5, 0.4).radius_factor(dx, dy), polygon_factor(5, 0.4, dx, dy))


if __name__ == '__main__':
    unittest.main()
