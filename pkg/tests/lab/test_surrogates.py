#!/usr/bin/env python3
"""
Unit tests for the forward calculations
"""

import math
import unittest
from pathlib import Path

import numpy as np
from scipy import stats

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from core.errors import DegenerateInput, DimensionMismatch, InvalidParameter
from core.numerics import Seed
from core.surrogates import (
    AnnealSchedule,
    SurrogateKind,
    SurrogateSpec,
    ceil_probability,
    denoise_r,
    denoise_r_grad,
    draw_noise,
    forward,
    forward_jacobian,
    round_half,
    sga_probs,
    soft_curves,
    soft_fn,
    soft_fn_grad,
    soft_inv,
)


class TestRounding(unittest.TestCase):
    """Test rounding with ties away from zero."""

    def test_examples(self):
        self.assertEqual(round_half(1.2), 1.0)
        self.assertEqual(round_half(-0.5), -1.0)
        self.assertEqual(round_half(2.5), 3.0)
        self.assertEqual(round_half(0.49), 0.0)

    def test_array(self):
        np.testing.assert_array_equal(round_half(np.array([1.3, -0.2, -1.5])), [1.0, 0.0, -2.0])

    def test_inexact_half_offsets(self):
        below_half = np.nextafter(0.5, 0.0)
        self.assertEqual(round_half(below_half), 0.0)
        self.assertEqual(round_half(-below_half), 0.0)
        self.assertEqual(round_half(2.0 ** 52 + 1), 2.0 ** 52 + 1)
        self.assertEqual(round_half(-(2.0 ** 52 + 1)), -(2.0 ** 52 + 1))
        self.assertEqual(round_half(2.0 ** 51 + 0.5), 2.0 ** 51 + 1)


class TestSoftFunctions(unittest.TestCase):
    """Test s_alpha, its inverse and the denoiser."""

    def test_fixed_points(self):
        for alpha in (0.5, 5.0, 50.0):
            self.assertAlmostEqual(soft_fn(2.0, alpha), 2.0, places=12)
            self.assertAlmostEqual(soft_fn(0.5, alpha), 0.5, places=12)
            self.assertEqual(soft_inv(2.0, alpha), 2.0)
            self.assertAlmostEqual(denoise_r(0.5, alpha), 0.5, places=12)
            self.assertAlmostEqual(denoise_r(1.5, alpha), 1.5, places=12)

    def test_worked_value(self):
        self.assertAlmostEqual(soft_fn(0.75, 5.0), 0.9299, delta=1e-4)
        self.assertAlmostEqual(soft_inv(0.92990, 5.0), 0.75, delta=1e-4)

    def test_inverse_contract(self):
        self.assertAlmostEqual(soft_inv(soft_fn(0.3, 8.0), 8.0), 0.3, delta=1e-10)
        y = np.linspace(-2.9, 2.9, 59)
        np.testing.assert_allclose(soft_fn(soft_inv(y, 5.0), 5.0), y, atol=1e-10)

    def test_monotone_and_periodic(self):
        y = np.linspace(-2.0, 2.0, 401)
        s = soft_fn(y, 5.0)
        self.assertTrue(np.all(np.diff(s) > 0))
        np.testing.assert_allclose(soft_fn(y + 1.0, 5.0), s + 1.0, atol=1e-12)

    def test_denoiser_bracket(self):
        value = denoise_r(0.9, 10.0)
        self.assertGreater(value, 0.5)
        self.assertLess(value, 1.0)

    def test_small_alpha_is_identity(self):
        self.assertAlmostEqual(soft_fn(0.3, 1e-3), 0.3, delta=1e-6)

    def test_derivatives_match_finite_differences(self):
        h = 1e-6
        for y in (0.1, 0.3, 0.62, -1.8):
            numeric = (soft_fn(y + h, 5.0) - soft_fn(y - h, 5.0)) / (2 * h)
            self.assertAlmostEqual(soft_fn_grad(y, 5.0), numeric, delta=1e-6 * max(1.0, abs(numeric)))
        for z in (0.2, 0.7, 1.35):
            numeric = (denoise_r(z + h, 5.0) - denoise_r(z - h, 5.0)) / (2 * h)
            self.assertAlmostEqual(denoise_r_grad(z, 5.0), numeric, delta=1e-5 * max(1.0, abs(numeric)))

    def test_rejects_bad_alpha(self):
        with self.assertRaises(InvalidParameter):
            soft_fn(0.3, 0.0)

    def test_soft_curves(self):
        curves = soft_curves(5.0, np.linspace(-1, 1, 11))
        self.assertEqual(set(curves), {"y", "s", "s_grad", "r", "r_grad"})
        self.assertEqual(curves["s"].shape, (11,))


class TestSurrogateSpec(unittest.TestCase):
    """Test SurrogateSpec validation and parsing."""

    def test_annealed_kinds_need_alpha(self):
        with self.assertRaises(InvalidParameter):
            SurrogateSpec(SurrogateKind.SUA)
        with self.assertRaises(InvalidParameter):
            SurrogateSpec(SurrogateKind.SRA, alpha=float("inf"))

    def test_parse(self):
        spec = SurrogateSpec.parse("SUA@5")
        self.assertEqual(spec.kind, SurrogateKind.SUA)
        self.assertEqual(spec.alpha, 5.0)
        self.assertEqual(spec.label, "SUA5")
        self.assertEqual(SurrogateSpec.parse("sga").tau, 1.0)
        self.assertEqual(SurrogateSpec.parse("UQ-S").kind, SurrogateKind.UQ_S)

    def test_noise_shapes(self):
        self.assertIsNone(SurrogateSpec(SurrogateKind.ROUND).noise_shape((4, 3)))
        self.assertEqual(SurrogateSpec(SurrogateKind.UQ_S).noise_shape((4, 3)), (4, 1))
        self.assertEqual(SurrogateSpec(SurrogateKind.AUN).noise_shape((4, 3)), (4, 3))

    def test_stochastic_flag(self):
        self.assertFalse(SurrogateSpec(SurrogateKind.SHA, alpha=2.0).is_stochastic)
        self.assertTrue(SurrogateSpec(SurrogateKind.SR).is_stochastic)


class TestAnnealSchedule(unittest.TestCase):
    """Test the linear temperature schedule."""

    def test_endpoints_and_clamp(self):
        schedule = AnnealSchedule(alpha_start=1.0, alpha_max=12.0, total_steps=100)
        self.assertEqual(schedule.alpha(0), 1.0)
        self.assertEqual(schedule.alpha(100), 12.0)
        self.assertEqual(schedule.alpha(50), 6.5)
        self.assertEqual(schedule.alpha(1000), 12.0)
        self.assertEqual(schedule.alpha(-5), 1.0)

    def test_rejects_zero_steps(self):
        with self.assertRaises(InvalidParameter):
            AnnealSchedule(total_steps=0)


class TestForward(unittest.TestCase):
    """Test the forward calculations."""

    def test_examples(self):
        np.testing.assert_array_equal(forward(SurrogateSpec(SurrogateKind.ROUND), [1.3, -0.2]), [1.0, 0.0])
        np.testing.assert_array_equal(forward(SurrogateSpec(SurrogateKind.AUN), [0.0], [0.25]), [0.25])
        np.testing.assert_allclose(forward(SurrogateSpec(SurrogateKind.UQ_S), [0.3, 0.4], 0.4), [0.6, 0.6], atol=1e-15)
        np.testing.assert_array_equal(forward(SurrogateSpec(SurrogateKind.SR), [0.75], [0.5]), [1.0])

    def test_sua_n_and_sua(self):
        y, u = np.array([0.3]), np.array([0.1])
        np.testing.assert_allclose(forward(SurrogateSpec(SurrogateKind.SUA_N, alpha=5.0), y, u), soft_fn(y, 5.0) + u)
        np.testing.assert_allclose(
            forward(SurrogateSpec(SurrogateKind.SUA, alpha=5.0), y, u), denoise_r(soft_fn(y, 5.0) + u, 5.0)
        )

    def test_noise_rule_enforced(self):
        with self.assertRaises(DimensionMismatch):
            forward(SurrogateSpec(SurrogateKind.AUN), [0.1, 0.2], [0.1])
        with self.assertRaises(DimensionMismatch):
            forward(SurrogateSpec(SurrogateKind.AUN), [0.1, 0.2])
        with self.assertRaises(DimensionMismatch):
            forward(SurrogateSpec(SurrogateKind.UQ_S), np.zeros((3, 2)), np.zeros((3, 2)))

    def test_integer_shift_equivariance(self):
        generator = Seed(root=4).generator()
        y = generator.uniform(-2.0, 2.0, 64)
        specs = [
            SurrogateSpec(SurrogateKind.ROUND), SurrogateSpec(SurrogateKind.SHA, alpha=5.0),
            SurrogateSpec(SurrogateKind.AUN), SurrogateSpec(SurrogateKind.UQ_I),
            SurrogateSpec(SurrogateKind.UQ_S), SurrogateSpec(SurrogateKind.SGA, tau=0.5),
            SurrogateSpec(SurrogateKind.SUA, alpha=5.0), SurrogateSpec(SurrogateKind.SUA_N, alpha=5.0),
            SurrogateSpec(SurrogateKind.SR), SurrogateSpec(SurrogateKind.SRA, alpha=5.0),
        ]
        for spec in specs:
            noise = draw_noise(spec, y.shape, Seed(root=5).generator())
            shifted = forward(spec, y + 3.0, noise)
            np.testing.assert_allclose(shifted, np.asarray(forward(spec, y, noise)) + 3.0, atol=1e-9, err_msg=spec.label)

    def test_sua_annealing_limit(self):
        spec = SurrogateSpec(SurrogateKind.SUA, alpha=50.0)
        frac = np.concatenate([np.linspace(0.05, 0.45, 41), np.linspace(0.55, 0.95, 41)])
        y = np.concatenate([frac, frac - 2.0])
        for u in np.linspace(-0.45, 0.45, 19):
            deviation = np.abs(np.asarray(forward(spec, y, np.full_like(y, u))) - np.asarray(round_half(y)))
            self.assertLess(deviation.max(), 0.035)

    def test_sha_limit(self):
        frac = np.concatenate([np.linspace(0.05, 0.45, 41), np.linspace(0.55, 0.95, 41)])
        deviation = np.abs(np.asarray(soft_fn(frac, 50.0)) - np.asarray(round_half(frac)))
        self.assertLess(deviation.max(), 0.01)

    def test_uq_i_marginal_is_uniform(self):
        spec = SurrogateSpec(SurrogateKind.UQ_I)
        y = Seed(root=8).generator().normal(0.0, 1.0, 100000)
        noise = draw_noise(spec, y.shape, Seed(root=9).generator())
        error = np.asarray(forward(spec, y, noise)) - y
        statistic = stats.kstest(error, stats.uniform(loc=-0.5, scale=1.0).cdf).statistic
        self.assertLess(statistic, 1.95 / math.sqrt(y.size))

    def test_sr_unbiased(self):
        spec = SurrogateSpec(SurrogateKind.SR)
        y = np.full(100000, 0.3)
        values = np.asarray(forward(spec, y, draw_noise(spec, y.shape, Seed(root=2).generator())))
        se = values.std(ddof=1) / math.sqrt(values.size)
        self.assertLess(abs(values.mean() - 0.3), 4 * se)
        self.assertTrue(np.all(np.isin(values, [0.0, 1.0])))

    def test_sr_deterministic_at_integers(self):
        spec = SurrogateSpec(SurrogateKind.SR)
        self.assertEqual(ceil_probability(spec, 2.0), 0.0)
        np.testing.assert_array_equal(forward(spec, [2.0, -1.0], [0.0, 0.0]), [2.0, -1.0])

    def test_sra_concentrates(self):
        spec = SurrogateSpec(SurrogateKind.SRA, alpha=50.0)
        for y in (0.3, 0.7, 1.45, -0.2):
            p_ceil = ceil_probability(spec, y)
            p_round = p_ceil if round_half(y) > math.floor(y) else 1.0 - p_ceil
            self.assertGreater(p_round, 0.99)

    def test_jacobian_matches_finite_difference(self):
        spec = SurrogateSpec(SurrogateKind.SUA, alpha=5.0)
        y, u, h = np.array([0.3, 1.1]), np.array([0.1, -0.2]), 1e-6
        numeric = (np.asarray(forward(spec, y + h, u)) - np.asarray(forward(spec, y - h, u))) / (2 * h)
        np.testing.assert_allclose(forward_jacobian(spec, y, u), numeric, rtol=1e-5)
        np.testing.assert_array_equal(forward_jacobian(SurrogateSpec(SurrogateKind.SR), y, [0.5, 0.5]), [0.0, 0.0])

    def test_draw_noise(self):
        generator = Seed(root=1).generator()
        additive = draw_noise(SurrogateSpec(SurrogateKind.AUN), (4, 3), generator)
        self.assertEqual(additive.shape, (4, 3))
        self.assertTrue(np.all((additive >= -0.5) & (additive < 0.5)))
        decisions = draw_noise(SurrogateSpec(SurrogateKind.SR), (5,), generator)
        self.assertTrue(np.all((decisions >= 0.0) & (decisions < 1.0)))
        self.assertEqual(draw_noise(SurrogateSpec(SurrogateKind.UQ_S), (4, 3), generator).shape, (4, 1))
        self.assertIsNone(draw_noise(SurrogateSpec(SurrogateKind.ROUND), (4, 3), generator))


class TestSga(unittest.TestCase):
    """Test the SGA rounding probabilities."""

    def test_symmetric_point(self):
        for tau in (1.0, 1e-3):
            p_floor, p_ceil = sga_probs(0.5, tau)
            self.assertAlmostEqual(p_floor, 0.5, places=12)
            self.assertAlmostEqual(p_ceil, 0.5, places=12)

    def test_worked_value(self):
        p_floor, p_ceil = sga_probs(0.2, 1.0)
        a, b = math.exp(-math.atanh(0.2)), math.exp(-math.atanh(0.8))
        self.assertAlmostEqual(p_floor, a / (a + b), places=12)
        self.assertAlmostEqual(p_floor + p_ceil, 1.0, places=15)

    def test_floor_limit(self):
        p_floor, _ = sga_probs(1e-9, 1.0)
        self.assertGreater(p_floor, 0.99)

    def test_degenerate_input(self):
        with self.assertRaises(DegenerateInput):
            sga_probs(float("nan"), 1.0)


if __name__ == "__main__":
    unittest.main()
