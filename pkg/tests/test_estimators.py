import os
import tempfile
import unittest

import numpy as np

from estimators import (ChainJob, EstimatorError, ExponentFit, SamplingPlan, estimate_delta_R,
                        estimate_delta_R_independent, estimate_delta_rR, estimate_nested_sign, estimate_ratio_A,
                        fit_exponent, run_chain)
from lattice import build_box
from rcm import RcmParams, UnsupportedParameterError, exact_delta
from runner import Checkpoint
from stats import EstimateResult
from tests import slow

QUICK = SamplingPlan(burn_in=20, subsample=1)


def result(mean: float, stderr: float) -> EstimateResult:
    return EstimateResult(mean=mean, stderr=stderr, n_effective=100, tau_int=0.5, n_raw=100, seed=0)


class TestSamplingPlan(unittest.TestCase):
    def test_from_tau(self):
        plan = SamplingPlan.from_tau(2.3)
        self.assertEqual((plan.burn_in, plan.subsample), (230, 5))
        self.assertEqual(SamplingPlan.from_tau(0.5).subsample, 1)

    def test_validation(self):
        with self.assertRaises(EstimatorError):
            SamplingPlan(burn_in=-1, subsample=1)
        with self.assertRaises(EstimatorError):
            SamplingPlan(burn_in=0, subsample=0)

    def test_pilot_overrides(self):
        plan = SamplingPlan.pilot(RcmParams.critical(2), 2, seed=1, sweeps=40, subsample=3)
        self.assertEqual(plan.subsample, 3)
        self.assertGreaterEqual(plan.burn_in, 50)
        self.assertGreaterEqual(plan.tau_pilot, 0.5)

    def test_pilot_kept_half_spans_tau(self):
        plan = SamplingPlan.pilot(RcmParams.critical(2), 4, seed=2)
        self.assertGreaterEqual(plan.pilot_sweeps, 200)
        self.assertGreaterEqual(plan.pilot_sweeps - plan.pilot_sweeps // 2, 50 * plan.tau_pilot)

    def test_pilot_tau_grows_with_size(self):
        params = RcmParams.critical(2)
        small = SamplingPlan.pilot(params, 2, seed=3)
        large = SamplingPlan.pilot(params, 12, seed=3)
        self.assertGreater(large.tau_pilot, small.tau_pilot)
        self.assertGreater(large.burn_in, small.burn_in)

    def test_pilot_sweep_cap(self):
        plan = SamplingPlan.pilot(RcmParams.critical(2), 12, seed=3, max_sweeps=64)
        self.assertEqual(plan.pilot_sweeps, 64)

    def test_job_key(self):
        params = RcmParams.critical(2)
        a = ChainJob("delta-R", params, 4, 1, QUICK)
        self.assertEqual(a.key(), ChainJob("delta-R", params, 4, 1, QUICK).key())
        self.assertNotEqual(a.key(), ChainJob("delta-R", params, 4, 2, QUICK).key())


# ────────────────────────────────────────────────────────────────
# Coupled estimators
# ────────────────────────────────────────────────────────────────
class TestDeltaR(unittest.TestCase):
    def setUp(self):
        self.params = RcmParams.critical(2)
        self.lat = build_box(1)

    def test_matches_enumeration(self):
        res = estimate_delta_R(self.params, 1, n=16000, seed=3, plan=QUICK, chains=4)
        self.assertAlmostEqual(res.mean, exact_delta(self.lat, self.params), delta=max(5 * res.stderr, 0.01))
        self.assertEqual(res.n_raw, 16000)
        self.assertEqual(res.params["chains"], 4)
        self.assertEqual(res.params["R"], 1)

    def test_reproducible(self):
        a = estimate_delta_R(self.params, 2, n=200, seed=5, plan=QUICK, chains=3)
        b = estimate_delta_R(self.params, 2, n=200, seed=5, plan=QUICK, chains=3)
        self.assertEqual((a.mean, a.stderr), (b.mean, b.stderr))

    def test_worker_count_does_not_change_result(self):
        a = estimate_delta_R(self.params, 2, n=120, seed=6, plan=QUICK, chains=4, workers=1)
        b = estimate_delta_R(self.params, 2, n=120, seed=6, plan=QUICK, chains=4, workers=2)
        self.assertEqual((a.mean, a.stderr, a.n_effective), (b.mean, b.stderr, b.n_effective))

    def test_checkpoint_resume(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.checkpoint.json")
            full = estimate_delta_R(self.params, 2, n=90, seed=7, plan=QUICK, chains=3,
                                    checkpoint=Checkpoint(path))
            job = ChainJob("delta-R", self.params, 2, 7, QUICK)
            ckpt = Checkpoint(path)
            done = ckpt.load(job.key())
            self.assertEqual(sorted(done), [0, 1, 2])
            # drop one chain as if interrupted; the rerun recomputes only that chain
            del done[1]
            ckpt.save(job.key(), done)
            resumed = estimate_delta_R(self.params, 2, n=90, seed=7, plan=QUICK, chains=3, checkpoint=ckpt)
            self.assertEqual((full.mean, full.stderr), (resumed.mean, resumed.stderr))

    def test_percolation_is_exactly_zero(self):
        res = estimate_delta_R(RcmParams.critical(1), 3, n=200, seed=4, plan=QUICK, chains=2)
        self.assertEqual((res.mean, res.stderr), (0.0, 0.0))

    def test_small_q_rejected(self):
        with self.assertRaises(UnsupportedParameterError):
            estimate_delta_R(RcmParams.critical(0.5), 2, n=10, seed=0, plan=QUICK)

    def test_needs_samples(self):
        with self.assertRaises(EstimatorError):
            estimate_delta_R(self.params, 2, n=0, seed=0, plan=QUICK)

    def test_independent_reference(self):
        coupled = estimate_delta_R(self.params, 1, n=4000, seed=8, plan=QUICK, chains=2)
        independent = estimate_delta_R_independent(self.params, 1, n=4000, seed=8, plan=QUICK, chains=2)
        self.assertLess(coupled.stderr, independent.stderr)
        self.assertAlmostEqual(independent.mean, exact_delta(self.lat, self.params),
                               delta=5 * independent.stderr)


class TestBoxCrossing(unittest.TestCase):
    def test_nonnegative(self):
        res = estimate_delta_rR(RcmParams.critical(2), 1, 3, n=200, seed=1, plan=QUICK, chains=2)
        self.assertGreaterEqual(res.mean, 0)
        self.assertEqual(res.params["r"], 1)

    def test_radius_range(self):
        for r in (0, 3):
            with self.assertRaises(EstimatorError):
                estimate_delta_rR(RcmParams.critical(2), r, 3, n=10, seed=1, plan=QUICK)

    def test_percolation_is_exactly_zero(self):
        res = estimate_delta_rR(RcmParams.critical(1), 1, 4, n=200, seed=4, plan=QUICK, chains=2)
        self.assertEqual(res.mean, 0.0)


class TestRatioA(unittest.TestCase):
    def test_percolation_ratio_vanishes(self):
        # at q = 1 the coupled chains coincide after one sweep
        res = estimate_ratio_A(RcmParams.critical(1), 2, 2, 8, n=300, seed=2, plan=QUICK, chains=2)
        self.assertEqual(res.mean, 0.0)
        self.assertEqual(res.params["r_outer"], 6)
        self.assertEqual(res.params["detector_checks"], 2 * 300)

    def test_annulus_must_fit(self):
        with self.assertRaises(EstimatorError):
            estimate_ratio_A(RcmParams.critical(2), 2, 1, 3, n=10, seed=0, plan=QUICK)
        with self.assertRaises(EstimatorError):
            estimate_ratio_A(RcmParams.critical(2), 2, 0.5, 6, n=10, seed=0, plan=QUICK)


class TestNestedSign(unittest.TestCase):
    def test_unit_weight(self):
        res = estimate_nested_sign(RcmParams.critical(2), 2, 1.0, n=40, seed=1, plan=QUICK, chains=2)
        self.assertEqual(res.mean, 1.0)
        self.assertEqual(res.stderr, 0.0)

    def test_sign_weight_bounded(self):
        res = estimate_nested_sign(RcmParams.critical(2), 2, -1.0, n=40, seed=1, plan=QUICK, chains=2)
        self.assertLessEqual(abs(res.mean), 1.0)

    def test_boundary_condition_choice(self):
        params = RcmParams.critical(2)
        res = estimate_nested_sign(params, 2, 1.0, n=40, seed=1, plan=QUICK, chains=2, bc="free")
        self.assertEqual(res.mean, 1.0)
        self.assertEqual(res.params["bc"], "free")
        empty = estimate_nested_sign(params, 3, 0.0, n=40, seed=1, plan=QUICK, chains=2, bc="free")
        self.assertGreaterEqual(empty.mean, 0.0)
        self.assertLessEqual(empty.mean, 1.0)
        with self.assertRaises(EstimatorError):
            estimate_nested_sign(params, 2, 1.0, n=40, seed=1, plan=QUICK, bc="both")

    def test_job_key_names_boundary_condition(self):
        params = RcmParams.critical(2)
        free = ChainJob("nested-sign", params, 2, 1, QUICK, a=-1.0, bc="free")
        wired = ChainJob("nested-sign", params, 2, 1, QUICK, a=-1.0, bc="wired")
        self.assertNotEqual(free.key(), wired.key())

    def test_unknown_observable(self):
        job = ChainJob("magnetization", RcmParams.critical(2), 2, 0, QUICK)
        with self.assertRaises(EstimatorError):
            run_chain(job, 0, 5)


# ────────────────────────────────────────────────────────────────
# Exponent fit
# ────────────────────────────────────────────────────────────────
class TestFitExponent(unittest.TestCase):
    def test_recovers_power_law(self):
        points = [(R, result(0.8 * R ** -0.75, 1e-4 * R ** -0.75)) for R in (8, 16, 32, 64)]
        fit = fit_exponent(points, resamples=2000, seed=1)
        self.assertAlmostEqual(fit.exponent, 0.75, places=6)
        self.assertAlmostEqual(fit.intercept, -0.22314355131420976, places=6)
        self.assertLess(fit.ci95[0], 0.75)
        self.assertGreater(fit.ci95[1], 0.75)
        self.assertLess(fit.ci95[1] - fit.ci95[0], 0.01)

    def test_exact_points_without_errors(self):
        points = [(R, result(2 * R ** -1.5, 0.0)) for R in (4, 8, 16)]
        fit = fit_exponent(points, resamples=100)
        self.assertAlmostEqual(fit.exponent, 1.5, places=9)
        self.assertAlmostEqual(fit.ci95[0], 1.5, places=9)
        self.assertAlmostEqual(fit.ci95[1], 1.5, places=9)

    def test_needs_three_points(self):
        with self.assertRaises(EstimatorError):
            fit_exponent([(8, result(0.1, 0.01)), (16, result(0.05, 0.01))])

    def test_nonpositive_mean(self):
        points = [(8, result(0.1, 0.01)), (16, result(0.0, 0.01)), (32, result(0.02, 0.01))]
        with self.assertRaises(EstimatorError):
            fit_exponent(points)

    def test_to_dict(self):
        points = [(R, result(R ** -1.0, 0.01 * R ** -1.0)) for R in (4, 8, 16)]
        data = fit_exponent(points, resamples=200).to_dict()
        self.assertEqual(set(data), {"exponent", "stderr", "intercept", "ci95", "points"})

    def test_interval_coverage(self):
        rng = np.random.default_rng(2024)
        sizes = (8, 16, 32, 64)
        covered = 0
        for _ in range(100):
            points = []
            for R in sizes:
                truth = 0.5 / R
                points.append((R, result(truth * (1 + 0.05 * rng.standard_normal()), 0.05 * truth)))
            fit = fit_exponent(points, resamples=2000, seed=int(rng.integers(1 << 31)))
            covered += fit.ci95[0] <= 1.0 <= fit.ci95[1]
        self.assertGreaterEqual(covered, 90)

    def test_interval_is_not_forced_around_exponent(self):
        points = [(R, result(R ** -1.0, 0.01 * R ** -1.0)) for R in (4, 8, 16)]
        fit = fit_exponent(points, resamples=1000, seed=3)
        self.assertGreater(fit.ci95[1] - fit.ci95[0], 0)
        self.assertAlmostEqual((fit.ci95[0] + fit.ci95[1]) / 2, fit.exponent, delta=0.01)

    def test_signed_estimates_fit_by_magnitude(self):
        points = [(8, result(-0.2, 0.01)), (16, result(-0.12, 0.01)), (32, result(-0.07, 0.01))]
        with self.assertRaises(EstimatorError):
            fit_exponent(points)
        fit = fit_exponent(points, resamples=1000, magnitude=True)
        self.assertGreater(fit.exponent, 0.5)
        self.assertLess(fit.exponent, 1.0)
        self.assertEqual([p[1] for p in fit.points], [0.2, 0.12, 0.07])

    def test_overlaps(self):
        a = ExponentFit(1.0, 0.1, 0.0, (0.8, 1.2))
        self.assertTrue(a.overlaps(ExponentFit(1.3, 0.1, 0.0, (1.1, 1.5))))
        self.assertTrue(a.overlaps(ExponentFit(1.0, 0.01, 0.0, (0.99, 1.01))))
        self.assertFalse(a.overlaps(ExponentFit(1.5, 0.1, 0.0, (1.3, 1.7))))


@unittest.skipUnless(slow, "set FKLAB_SLOW=1 for long Monte Carlo runs")
class TestMixingExponentSlow(unittest.TestCase):
    def test_q2_delta_decays(self):
        params = RcmParams.critical(2)
        plan = SamplingPlan(burn_in=200, subsample=2)
        points = [(R, estimate_delta_R(params, R, n=40000, seed=11, plan=plan, workers=4)) for R in (2, 4, 8)]
        fit = fit_exponent(points)
        self.assertGreater(fit.exponent, 0.3)
        self.assertLess(fit.exponent, 2.0)


@unittest.skipUnless(slow, "set FKLAB_SLOW=1 for long Monte Carlo runs")
class TestFkIsingSlow(unittest.TestCase):
    params = RcmParams.critical(2)

    def test_mixing_exponent_is_one(self):
        points = [(R, estimate_delta_R(self.params, R, n=200000, seed=17, workers=8)) for R in (8, 16, 32, 64)]
        fit = fit_exponent(points, seed=17)
        self.assertGreaterEqual(fit.exponent, 0.75)
        self.assertLessEqual(fit.exponent, 1.25)
        self.assertLessEqual(fit.ci95[0], 1.0)
        self.assertGreaterEqual(fit.ci95[1], 1.0)

    def test_ratio_sign_below_six(self):
        res = estimate_ratio_A(self.params, 8, 0.5, 32, n=100000, seed=19, workers=8)
        self.assertGreater(res.mean, 3 * res.stderr)

    def test_quasi_multiplicativity(self):
        kw = dict(n=100000, seed=23, workers=8)
        crossing = estimate_delta_rR(self.params, 8, 32, **kw).mean
        factor = crossing * estimate_delta_R(self.params, 8, **kw).mean / estimate_delta_R(self.params, 32, **kw).mean
        self.assertGreaterEqual(factor, 1 / 5)
        self.assertLessEqual(factor, 5)

if __name__ == "__main__":
    unittest.main()
