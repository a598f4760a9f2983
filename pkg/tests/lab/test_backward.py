#!/usr/bin/env python3
"""
Unit tests for the gradient estimators and the bias/variance harness
"""

import os
import unittest
from pathlib import Path

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from core.backward import (
    EstimatorRule,
    EstimatorSpec,
    ScalarLoss,
    estimate,
    grad_ep_rate,
    grad_ep_scalar,
    grad_ep_vector_bruteforce,
    grad_pge,
    grad_standard,
    grad_ste,
    measure_grad_stats,
    rate_term_stats,
)
from core.errors import DimensionTooLarge, InvalidParameter, UnsupportedForward
from core.numerics import Quadrature, Seed, integrate
from core.sources import Gaussian1D
from core.surrogates import (
    SurrogateKind,
    SurrogateSpec,
    ceil_probability,
    denoise_r,
    soft_fn,
)


SLOW = os.environ.get("QUANTLAB_SLOW") == "1"

SQUARE = ScalarLoss(value=lambda t: np.asarray(t) ** 2, grad=lambda t: 2.0 * np.asarray(t), name="square")


def product_loss(points):
    return np.prod(np.asarray(points), axis=-1)


class TestEstimatorSpec(unittest.TestCase):
    """Test rule/forward pairing."""

    def test_valid_pairs(self):
        self.assertEqual(EstimatorSpec(SurrogateSpec(SurrogateKind.AUN), "PGE").label, "PGE/AUN")
        self.assertEqual(EstimatorSpec(SurrogateSpec(SurrogateKind.SUA, alpha=5.0), EstimatorRule.STE).label, "STE/SUA5")

    def test_invalid_pairs(self):
        with self.assertRaises(UnsupportedForward):
            EstimatorSpec(SurrogateSpec(SurrogateKind.SR), "PGE")
        with self.assertRaises(UnsupportedForward):
            EstimatorSpec(SurrogateSpec(SurrogateKind.ROUND), "EP")
        with self.assertRaises(UnsupportedForward):
            EstimatorSpec(SurrogateSpec(SurrogateKind.AUN), "STANDARD")

    def test_samples_per_estimate(self):
        with self.assertRaises(UnsupportedForward):
            EstimatorSpec(SurrogateSpec(SurrogateKind.AUN), "PGE", samples_per_estimate=0)


class TestSingleEstimates(unittest.TestCase):
    """Test the per-sample gradient rules."""

    def test_pge_aun(self):
        self.assertAlmostEqual(grad_pge(SurrogateSpec(SurrogateKind.AUN), SQUARE.grad, 1.0, 0.25), 2.5, places=15)

    def test_pge_rejects_rounding(self):
        with self.assertRaises(UnsupportedForward):
            grad_pge(SurrogateSpec(SurrogateKind.SR), SQUARE.grad, 0.3, 0.5)

    def test_ste_stochastic_rounding(self):
        spec = SurrogateSpec(SurrogateKind.SR)
        self.assertEqual(grad_ste(spec, SQUARE.grad, 0.3, 0.1), 2.0)
        self.assertEqual(grad_ste(spec, SQUARE.grad, 0.3, 0.9), 0.0)

    def test_ste_keeps_soft_slope(self):
        spec = SurrogateSpec(SurrogateKind.SRA, alpha=5.0)
        slope = (soft_fn(0.3 + 1e-6, 5.0) - soft_fn(0.3 - 1e-6, 5.0)) / 2e-6
        self.assertAlmostEqual(grad_ste(spec, SQUARE.grad, 0.3, 0.99), 0.0, places=15)
        self.assertAlmostEqual(grad_ste(spec, SQUARE.grad, 0.3, 0.0), 2.0 * slope, delta=1e-6)

    def test_ste_rejects_soft_forwards(self):
        for kind in (SurrogateKind.SHA, SurrogateKind.AUN, SurrogateKind.SUA_N):
            with self.assertRaises(UnsupportedForward):
                grad_ste(SurrogateSpec(kind, alpha=5.0), SQUARE.grad, 0.3, 0.1)

    def test_standard_matches_finite_difference(self):
        spec = SurrogateSpec(SurrogateKind.SHA, alpha=5.0)
        h = 1e-6
        numeric = (soft_fn(0.4 + h, 5.0) ** 2 - soft_fn(0.4 - h, 5.0) ** 2) / (2 * h)
        self.assertAlmostEqual(grad_standard(spec, SQUARE.grad, 0.4), numeric, delta=1e-6)
        with self.assertRaises(UnsupportedForward):
            grad_standard(SurrogateSpec(SurrogateKind.AUN), SQUARE.grad, 0.4)


class TestExpectedGradients(unittest.TestCase):
    """Test the exact expected gradients."""

    def test_scalar_uniform(self):
        self.assertAlmostEqual(grad_ep_scalar(SQUARE.value, 1.0), 2.0, places=14)
        np.testing.assert_allclose(grad_ep_scalar(SQUARE.value, np.array([0.0, -0.7])), [0.0, -1.4], atol=1e-14)

    def test_stochastic_rounding(self):
        spec = SurrogateSpec(SurrogateKind.SR)
        self.assertAlmostEqual(grad_ep_rate(spec, 0.3, SQUARE.value), 1.0, places=15)
        self.assertAlmostEqual(grad_ep_rate(spec, -0.4, SQUARE.value), -1.0, places=15)

    def test_sra_zero_at_integers(self):
        spec = SurrogateSpec(SurrogateKind.SRA, alpha=5.0)
        self.assertEqual(grad_ep_rate(spec, 2.0, SQUARE.value), 0.0)

    def test_round_is_zero(self):
        np.testing.assert_array_equal(grad_ep_rate(SurrogateSpec(SurrogateKind.ROUND), [0.3, 1.2], SQUARE.value), [0.0, 0.0])

    def test_decision_kinds_match_finite_difference(self):
        h = 1e-6
        for spec in (SurrogateSpec(SurrogateKind.SGA, tau=1.0), SurrogateSpec(SurrogateKind.SRA, alpha=5.0)):
            def expected_loss(y):
                p = ceil_probability(spec, y)
                return (1.0 - p) * np.floor(y) ** 2 + p * (np.floor(y) + 1.0) ** 2
            numeric = (expected_loss(0.3 + h) - expected_loss(0.3 - h)) / (2 * h)
            self.assertAlmostEqual(grad_ep_rate(spec, 0.3, SQUARE.value), numeric, delta=1e-5, msg=spec.label)

    def test_sua_matches_finite_difference(self):
        alpha, y, h = 5.0, 0.3, 1e-4
        q = Quadrature()

        def expected_loss(y0):
            s = soft_fn(y0, alpha)
            return integrate(lambda u: np.asarray(denoise_r(s + u, alpha)) ** 2, -0.5, 0.5, q, [0.5 - s])

        numeric = (expected_loss(y + h) - expected_loss(y - h)) / (2 * h)
        spec = SurrogateSpec(SurrogateKind.SUA, alpha=alpha)
        self.assertAlmostEqual(grad_ep_rate(spec, y, SQUARE.value), numeric, delta=1e-4)

    def test_unsupported_kind(self):
        with self.assertRaises(UnsupportedForward):
            grad_ep_rate(SurrogateSpec(SurrogateKind.UQ_I), 0.3, SQUARE.value)


class TestBruteForce(unittest.TestCase):
    """Test the vector expected gradient on a non-separable loss."""

    def test_product_loss_unbiased_forwards(self):
        y = np.array([0.2, -0.4, 1.3])
        expected = np.array([y[1] * y[2], y[0] * y[2], y[0] * y[1]])
        for spec in (SurrogateSpec(SurrogateKind.SR), SurrogateSpec(SurrogateKind.AUN)):
            np.testing.assert_allclose(grad_ep_vector_bruteforce(product_loss, y, spec), expected, atol=1e-8, err_msg=spec.label)

    def test_two_dimensions(self):
        grad = grad_ep_vector_bruteforce(product_loss, [0.2, -0.4], SurrogateSpec(SurrogateKind.AUN))
        np.testing.assert_allclose(grad, [-0.4, 0.2], atol=1e-10)

    def test_separable_matches_scalar_rule(self):
        spec = SurrogateSpec(SurrogateKind.SUA, alpha=5.0)
        y = np.array([0.3, -0.8])
        grad = grad_ep_vector_bruteforce(lambda p: np.sum(np.asarray(p) ** 2, axis=-1), y, spec)
        np.testing.assert_allclose(grad, grad_ep_rate(spec, y, SQUARE.value), atol=1e-8)

    def test_limits(self):
        with self.assertRaises(DimensionTooLarge):
            grad_ep_vector_bruteforce(product_loss, np.zeros(4), SurrogateSpec(SurrogateKind.SR))
        with self.assertRaises(UnsupportedForward):
            grad_ep_vector_bruteforce(product_loss, np.zeros(2), SurrogateSpec(SurrogateKind.UQ_S))


class TestGradStats(unittest.TestCase):
    """Test the bias and variance harness."""

    def test_estimate_shape(self):
        est = EstimatorSpec(SurrogateSpec(SurrogateKind.AUN), "PGE", samples_per_estimate=3)
        y = np.full((5, 3, 1), 0.2)
        noise = np.zeros_like(y)
        np.testing.assert_allclose(estimate(est, SQUARE, y, noise), np.full(5, 0.4))

    def test_ep_has_no_error(self):
        est = EstimatorSpec(SurrogateSpec(SurrogateKind.AUN), "EP")
        stats = measure_grad_stats(est, SQUARE, [0.1, 0.7, -1.2], n_trials=4, seed=Seed(root=1))
        self.assertAlmostEqual(stats.bias, 0.0, places=12)
        self.assertAlmostEqual(stats.variance, 0.0, places=12)
        self.assertEqual(stats.n_y, 3)

    def test_pge_uniform_noise(self):
        est = EstimatorSpec(SurrogateSpec(SurrogateKind.AUN), "PGE")
        stats = measure_grad_stats(est, SQUARE, Gaussian1D(0.0, 1.0), n_trials=200, seed=Seed(root=2), n_y=50)
        self.assertAlmostEqual(stats.variance, 1.0 / 3.0, delta=0.02)
        self.assertLess(stats.bias, 0.1)
        self.assertLessEqual(abs(stats.mean_error), 4 * stats.mean_error_se + 1e-12)
        self.assertGreaterEqual(stats.abs_error, stats.bias - 1e-12)

    def test_samples_per_estimate_reduce_variance(self):
        est = EstimatorSpec(SurrogateSpec(SurrogateKind.AUN), "PGE", samples_per_estimate=4)
        stats = measure_grad_stats(est, SQUARE, Gaussian1D(0.0, 1.0), n_trials=200, seed=Seed(root=2), n_y=50)
        self.assertAlmostEqual(stats.variance, 1.0 / 12.0, delta=0.01)

    def test_reproducible(self):
        est = EstimatorSpec(SurrogateSpec(SurrogateKind.SR), "STE")
        a = measure_grad_stats(est, SQUARE, [0.3, 0.6], n_trials=10, seed=Seed(root=3))
        b = measure_grad_stats(est, SQUARE, [0.3, 0.6], n_trials=10, seed=Seed(root=3))
        self.assertEqual(a.to_dict(), b.to_dict())

    def test_needs_two_trials(self):
        est = EstimatorSpec(SurrogateSpec(SurrogateKind.AUN), "PGE")
        with self.assertRaises(InvalidParameter):
            measure_grad_stats(est, SQUARE, [0.3], n_trials=1, seed=Seed(root=1))

    def test_rate_term_cell(self):
        stats = rate_term_stats("STE", "SUA", 5.0, 0.3, n_y=20, n_trials=20, seed=Seed(root=4))
        self.assertTrue(np.isfinite(stats.bias))
        self.assertGreaterEqual(stats.variance, 0.0)
        self.assertEqual(stats.n_trials, 20)
        self.assertEqual(set(stats.to_dict()) >= {"bias", "bias_se", "variance", "variance_se"}, True)

    def test_rate_term_rejects_bad_pair(self):
        with self.assertRaises(UnsupportedForward):
            rate_term_stats("PGE", "SR", None, 0.3, n_y=5, n_trials=5, seed=Seed(root=4))

    def test_pge_rate_term_unbiased(self):
        for kind, alpha in (("AUN", None), ("SUA", 5.0), ("SUA", 10.0)):
            stats = rate_term_stats("PGE", kind, alpha, 0.3, n_y=50, n_trials=400, seed=Seed(root=8))
            self.assertLessEqual(abs(stats.mean_error), 4 * stats.mean_error_se + 1e-12, msg=f"{kind} {alpha}")

    @unittest.skipUnless(SLOW, "set QUANTLAB_SLOW=1 for the estimator ordering study")
    def test_rate_term_orderings(self):
        def cell(rule, kind, alpha, sigma_q):
            return rate_term_stats(rule, kind, alpha, sigma_q, n_y=200, n_trials=500, seed=Seed(root=11))

        def above(a, b, key):
            value_a, se_a = getattr(a, key), getattr(a, key + "_se")
            value_b, se_b = getattr(b, key), getattr(b, key + "_se")
            return value_a - 3 * se_a > value_b + 3 * se_b

        for sigma_q in (0.3, 1.0):
            aun = cell("PGE", "AUN", None, sigma_q)
            sua5 = cell("PGE", "SUA", 5.0, sigma_q)
            sua10 = cell("PGE", "SUA", 10.0, sigma_q)
            self.assertTrue(above(sua10, sua5, "variance"))
            self.assertTrue(above(sua5, aun, "variance"))
        for kind, alpha in (("AUN", None), ("SUA", 5.0), ("SUA", 10.0)):
            self.assertLess(cell("PGE", kind, alpha, 1.0).variance, cell("PGE", kind, alpha, 0.3).variance)

        ste5 = cell("STE", "SUA", 5.0, 0.3)
        ste10 = cell("STE", "SUA", 10.0, 0.3)
        self.assertTrue(above(ste10, ste5, "bias"))
        self.assertGreater(ste5.bias - 3 * ste5.bias_se, 0.0)
        sr = cell("STE", "SR", None, 0.3)
        self.assertTrue(above(sr, cell("STE", "SR", None, 1.0), "bias"))
        self.assertGreater(sr.bias - 3 * sr.bias_se, 0.0)


if __name__ == "__main__":
    unittest.main()
