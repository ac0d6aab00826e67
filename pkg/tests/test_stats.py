import math
import unittest

import numpy as np

from stats import (EstimateResult, EstimatorError, Tally, effective_size, integrated_autocorr, merge,
                   summarize, summarize_ratio)


class TestAutocorrelation(unittest.TestCase):
    def test_constant_series(self):
        self.assertEqual(integrated_autocorr([1] * 50), 0.5)
        self.assertEqual(integrated_autocorr([3]), 0.5)

    def test_independent_series(self):
        x = np.random.default_rng(0).standard_normal(20000)
        self.assertAlmostEqual(integrated_autocorr(x), 0.5, delta=0.1)

    def test_ar1_series(self):
        rho = 0.8
        rng = np.random.default_rng(1)
        noise = rng.standard_normal(200000)
        x = np.empty_like(noise)
        x[0] = noise[0]
        for i in range(1, len(x)):
            x[i] = rho * x[i - 1] + noise[i]
        expected = (1 + rho) / (2 * (1 - rho))
        self.assertAlmostEqual(integrated_autocorr(x), expected, delta=0.15 * expected)


class TestTally(unittest.TestCase):
    def test_from_values_keeps_integers(self):
        t = Tally.from_values(np.array([0, 1, 1, 0, 1]), chain_id=2)
        self.assertEqual((t.n, t.sx, t.sxx, t.sy), (5, 3, 3, 0))
        self.assertIsInstance(t.sx, int)
        self.assertEqual(t.chain_id, 2)

    def test_merge_is_order_independent(self):
        rng = np.random.default_rng(2)
        tallies = [Tally.from_values(rng.integers(2, size=50), rng.integers(2, size=50), chain_id=i)
                   for i in range(6)]
        a = merge(tallies)
        b = merge(list(reversed(tallies)))
        self.assertEqual(a.to_dict(), b.to_dict())
        self.assertEqual(a.n, 300)

    def test_to_dict_round_trips(self):
        t = Tally.from_values([1, 0, 1], [1, 1, 1], chain_id=4, agree=6)
        self.assertEqual(Tally(**t.to_dict()), t)


class TestSummaries(unittest.TestCase):
    def test_binary_mean_and_stderr(self):
        t = Tally(n=100, sx=30, sxx=30, tau=0.5)
        result = summarize(t, seed=9)
        self.assertAlmostEqual(result.mean, 0.3)
        self.assertAlmostEqual(result.stderr, math.sqrt(0.3 * 0.7 / 100))
        self.assertEqual(result.n_effective, 100)
        self.assertEqual(result.seed, 9)

    def test_autocorrelation_shrinks_effective_size(self):
        t = Tally(n=100, sx=30, sxx=30, tau=5.0)
        self.assertEqual(effective_size(t), 10)
        self.assertAlmostEqual(summarize(t).stderr, math.sqrt(0.3 * 0.7 / 10))
        self.assertEqual(effective_size(Tally(n=10, tau=100.0)), 1.0)

    def test_stderr_scales_with_sample_size(self):
        rng = np.random.default_rng(4)
        small = summarize(Tally.from_values(rng.random(20000) < 0.3))
        large = summarize(Tally.from_values(rng.random(40000) < 0.3))
        self.assertAlmostEqual(large.stderr / small.stderr, 1 / math.sqrt(2), delta=0.2 / math.sqrt(2))

    def test_ratio_with_constant_denominator(self):
        x = np.array([0, 1, 1, 0, 0, 1, 0, 0, 0, 1])
        t = Tally.from_values(x, np.ones_like(x))
        t.tau = 0.5
        result = summarize_ratio(t)
        self.assertAlmostEqual(result.mean, 0.4)
        self.assertAlmostEqual(result.stderr, math.sqrt(0.4 * 0.6 / 10))

    def test_ratio_degenerate_denominator(self):
        t = Tally.from_values([1, 0, 1], [0, 0, 0])
        with self.assertRaises(EstimatorError):
            summarize_ratio(t)

    def test_empty_tally(self):
        with self.assertRaises(EstimatorError):
            summarize(Tally())

    def test_result_validation(self):
        with self.assertRaises(EstimatorError):
            EstimateResult(mean=0.1, stderr=-1, n_effective=1, tau_int=0.5, n_raw=1, seed=0)
        with self.assertRaises(EstimatorError):
            EstimateResult(mean=0.1, stderr=0.1, n_effective=5, tau_int=0.5, n_raw=1, seed=0)
        result = EstimateResult(mean=0.2, stderr=0.02, n_effective=1, tau_int=0.5, n_raw=1, seed=0)
        self.assertAlmostEqual(result.relative_error, 0.1)


if __name__ == "__main__":
    unittest.main()
