import math
import unittest

import numpy as np

from core.errors import DomainError, ShapeMismatchError
from metrics.image_quality import ViewScore, evaluate_images, luma, mean_score, psnr, ssim


class TestPsnr(unittest.TestCase):

    def test_known_values(self):
        zeros = np.zeros((4, 4, 3))
        self.assertAlmostEqual(psnr(zeros, np.full((4, 4, 3), 0.1)), 20.0, places=10)
        self.assertAlmostEqual(psnr(zeros, np.full((4, 4, 3), 0.01)), 40.0, places=10)
        self.assertAlmostEqual(psnr(zeros, np.full((4, 4, 3), 25.5), peak=255.0), 20.0, places=10)

    def test_identical_is_infinite(self):
        image = np.random.default_rng(0).uniform(size=(5, 5, 3))
        self.assertEqual(psnr(image, image.copy()), math.inf)

    def test_invalid(self):
        with self.assertRaises(ShapeMismatchError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))
        with self.assertRaises(DomainError):
            psnr(np.zeros(3), np.ones(3), peak=0.0)


class TestSsim(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(1)
        self.image = rng.uniform(size=(24, 20, 3))
        self.noisy = np.clip(self.image + rng.normal(scale=0.1, size=self.image.shape), 0.0, 1.0)

    def test_identical(self):
        self.assertAlmostEqual(ssim(self.image, self.image), 1.0, places=12)

    def test_symmetric_and_bounded(self):
        forward, backward = ssim(self.image, self.noisy), ssim(self.noisy, self.image)
        self.assertAlmostEqual(forward, backward, places=12)
        self.assertLess(forward, 1.0)
        self.assertGreater(forward, -1.0)

    def test_more_noise_scores_lower(self):
        rng = np.random.default_rng(2)
        noisier = np.clip(self.image + rng.normal(scale=0.3, size=self.image.shape), 0.0, 1.0)
        self.assertGreater(ssim(self.image, self.noisy), ssim(self.image, noisier))

    def test_grayscale_input(self):
        gray = luma(self.image)
        self.assertEqual(gray.shape, (24, 20))
        self.assertEqual(luma(gray).shape, gray.shape)
        self.assertAlmostEqual(ssim(gray, luma(self.noisy)), ssim(self.image, self.noisy), places=12)

    def test_too_small(self):
        with self.assertRaises(DomainError):
            ssim(np.zeros((10, 30, 3)), np.zeros((10, 30, 3)))
        with self.assertRaises(ShapeMismatchError):
            ssim(np.zeros((12, 12)), np.zeros((12, 13)))

    def test_flat_images_follow_luminance_term(self):
        dark, light = np.full((16, 16), 0.2), np.full((16, 16), 0.4)
        self.assertAlmostEqual(ssim(dark, light), (0.16 + 1e-4) / (0.2 + 1e-4), places=10)
        self.assertAlmostEqual(ssim(dark, light, dynamic_range=2.0), (0.16 + 4e-4) / (0.2 + 4e-4), places=10)
        with self.assertRaises(DomainError):
            ssim(dark, light, dynamic_range=0.0)

    def test_blur_scores_below_one(self):
        blurred = (self.image + np.roll(self.image, 1, axis=0) + np.roll(self.image, 1, axis=1)) / 3.0
        score = ssim(self.image, blurred)
        self.assertLess(score, 0.9)
        self.assertGreater(score, 0.0)


class TestEvaluation(unittest.TestCase):

    def test_scores_per_view(self):
        rng = np.random.default_rng(3)
        truths = [rng.uniform(size=(12, 12, 3)) for _ in range(2)]
        renders = [truths[0].copy(), np.clip(truths[1] + 0.05, 0.0, 1.0)]
        scores = evaluate_images(renders, truths, [4, 9])
        self.assertEqual([score.view for score in scores], [4, 9])
        self.assertEqual(scores[0].psnr, math.inf)
        self.assertAlmostEqual(scores[0].ssim, 1.0, places=12)
        self.assertTrue(math.isfinite(scores[1].psnr))
        self.assertEqual(evaluate_images(renders, truths)[1].view, 1)

    def test_mismatched_lists(self):
        with self.assertRaises(DomainError):
            evaluate_images([np.zeros((12, 12))], [])
        with self.assertRaises(DomainError):
            evaluate_images([], [])

    def test_mean(self):
        mean_psnr, mean_ssim = mean_score((ViewScore(0, 20.0, 0.5), ViewScore(1, 30.0, 0.7)))
        self.assertAlmostEqual(mean_psnr, 25.0)
        self.assertAlmostEqual(mean_ssim, 0.6)


if __name__ == '__main__':
    unittest.main()
