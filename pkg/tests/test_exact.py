import cmath
import math
import unittest

from exact import (AccuracyError, CleParams, ExactError, ModulusPoint, MomentKind, SeriesAccuracy, complex_gamma,
                   dedekind_eta, laplace_lhs, laplace_rhs, laplace_rhs_from_moments, modulus_density,
                   predicted_amplitude, predicted_iota, qa_moment, rn_ratio, rn_ratio_asymptotic,
                   spine_moment_from_forested, verify_channels, verify_laplace, z_even_closed, z_even_open,
                   z_odd_closed, z_odd_open)

DENSE = (16 / 3, 5.0, 6.0, 7.0)


# ────────────────────────────────────────────────────────────────
# Parameters and predictions
# ────────────────────────────────────────────────────────────────
class TestParameters(unittest.TestCase):
    def test_range(self):
        for kappa in (8 / 3, 8, 2, 9):
            with self.assertRaises(ExactError):
                CleParams(kappa)

    def test_from_q(self):
        self.assertAlmostEqual(CleParams.from_q(2).kappa, 16 / 3)
        self.assertAlmostEqual(CleParams.from_q(1).kappa, 6)
        with self.assertRaises(ExactError):
            CleParams.from_q(5)

    def test_central_charge(self):
        self.assertAlmostEqual(CleParams(6).central_charge, 0)
        self.assertAlmostEqual(CleParams(16 / 3).central_charge, 0.5)
        self.assertAlmostEqual(CleParams(4).central_charge, 1)
        self.assertAlmostEqual(CleParams(3).central_charge, 0.5)

    def test_lqg_gamma(self):
        self.assertAlmostEqual(CleParams(4).gamma_lqg, 2)
        self.assertAlmostEqual(CleParams(6).gamma_lqg, math.sqrt(8 / 3))
        self.assertAlmostEqual(CleParams(3).gamma_lqg, math.sqrt(3))
        self.assertFalse(CleParams(3).dense)
        self.assertTrue(CleParams(4).dense)

    def test_predictions(self):
        self.assertAlmostEqual(predicted_iota(6), 1.25)
        self.assertAlmostEqual(predicted_iota(16 / 3), 1)
        self.assertAlmostEqual(predicted_amplitude(6), 0, places=12)
        self.assertAlmostEqual(predicted_amplitude(16 / 3), 4 * math.cos(math.pi / 3))
        self.assertAlmostEqual(CleParams(5).predicted_iota, 0.875)

    def test_modulus_point(self):
        pt = ModulusPoint.from_r(0.1)
        self.assertAlmostEqual(pt.r, 0.1)
        self.assertAlmostEqual(pt.q_open, math.exp(-math.pi / pt.tau))
        with self.assertRaises(ExactError):
            ModulusPoint(0)
        with self.assertRaises(ExactError):
            ModulusPoint.from_r(1)

    def test_series_accuracy_floor(self):
        with self.assertRaises(ExactError):
            SeriesAccuracy(tol=1e-17)


# ────────────────────────────────────────────────────────────────
# Series
# ────────────────────────────────────────────────────────────────
class TestSeries(unittest.TestCase):
    def test_dedekind_eta_at_i(self):
        expected = math.gamma(0.25) / (2 * math.pi ** 0.75)
        self.assertAlmostEqual(dedekind_eta(1.0), expected, places=13)

    def test_dedekind_eta_modular(self):
        for t in (0.3, 0.7, 2.0):
            self.assertAlmostEqual(dedekind_eta(1 / t), math.sqrt(t) * dedekind_eta(t), places=12)

    def test_rn_ratio_at_six_is_one(self):
        for r in (0.01, 0.1, 0.5, 0.9):
            self.assertAlmostEqual(rn_ratio(6, r), 1.0, delta=1e-12)

    def test_rn_ratio_asymptotics(self):
        for kappa in (16 / 3, 5.0, 7.0):
            iota = predicted_iota(kappa)
            for r in (1e-2, 1e-3):
                gap = abs(rn_ratio(kappa, r) - rn_ratio_asymptotic(kappa, r))
                self.assertLessEqual(gap, 10 * r ** (2 * iota))

    def test_rn_ratio_sign_follows_amplitude(self):
        self.assertGreater(rn_ratio(16 / 3, 0.05), 1)
        self.assertLess(rn_ratio(7.0, 0.05), 1)

    def test_rn_ratio_arguments(self):
        with self.assertRaises(ExactError):
            rn_ratio(6, 0)
        with self.assertRaises(ExactError):
            rn_ratio(9, 0.5)

    def test_term_cap(self):
        with self.assertRaises(AccuracyError):
            rn_ratio(5, 0.5, SeriesAccuracy(max_terms=2))

    def test_rn_ratio_is_partition_function_ratio(self):
        # ratios at r near 1 reach 1e19 and more; the closed-channel sums cancel to many digits there
        grid = {3.0: (0.01, 0.1, 0.5, 0.8, 0.9),
                4.5: (0.01, 0.1, 0.5, 0.8, 0.9, 0.97, 0.99),
                16 / 3: (0.01, 0.1, 0.5, 0.8, 0.9, 0.97, 0.99),
                7.0: (0.01, 0.1, 0.5, 0.8, 0.9, 0.97, 0.99)}
        for kappa, rs in grid.items():
            params = CleParams(kappa)
            for r in rs:
                pt = ModulusPoint.from_r(r)
                expected = z_odd_closed(pt, params) / z_even_closed(pt, params)
                value = rn_ratio(kappa, r)
                self.assertGreater(value, 0, msg=f"kappa={kappa} r={r}")
                self.assertAlmostEqual(value / expected, 1, delta=1e-10, msg=f"kappa={kappa} r={r}")

    def test_rn_ratio_large_near_one(self):
        self.assertAlmostEqual(rn_ratio(3.0, 0.8) / 1.62e19, 1, delta=0.01)
        self.assertAlmostEqual(rn_ratio(16 / 3, 0.97) / 2.75e17, 1, delta=0.01)

    def test_halving_tol_is_stable(self):
        for kappa in (3.5, 5.0, 7.0):
            params = CleParams(kappa)
            for kind in ("odd", "even"):
                for tau in (0.05, 0.5, 2.0):
                    tol = 1e-6
                    prev = modulus_density(kind, tau, params, SeriesAccuracy(tol=tol))
                    while tol / 2 >= 1e-15:
                        value = modulus_density(kind, tau, params, SeriesAccuracy(tol=tol / 2))
                        self.assertLessEqual(abs(value - prev), tol * abs(prev),
                                             msg=f"kappa={kappa} {kind} tau={tau} tol={tol}")
                        prev, tol = value, tol / 2


class TestPartitionFunctions(unittest.TestCase):
    def test_channels_agree(self):
        for kappa in (3.0, 4.0, 16 / 3, 5.0, 6.0, 7.0):
            for check in verify_channels(CleParams(kappa), (0.05, 0.1, 0.5, 1.0, 2.0, 5.0)):
                self.assertLessEqual(check.residual, 1e-9, msg=f"kappa={kappa} {check.kind} tau={check.tau}")

    def test_named_channels(self):
        params, pt = CleParams(5.0), ModulusPoint(0.4)
        self.assertAlmostEqual(z_odd_open(pt, params) / z_odd_closed(pt, params), 1, places=9)
        self.assertAlmostEqual(z_even_open(pt, params) / z_even_closed(pt, params), 1, places=9)

    def test_density_channels_agree(self):
        for kappa in (3.5, 16 / 3, 7.0):
            params = CleParams(kappa)
            for kind in ("odd", "even"):
                for tau in (0.1, 0.2, 0.5):
                    a = modulus_density(kind, tau, params, channel="open")
                    b = modulus_density(kind, tau, params, channel="closed")
                    self.assertAlmostEqual(a / b, 1, places=9)

    def test_density_positive_between_four_and_six(self):
        taus = [0.02 * 1.5 ** k for k in range(16)]
        for kappa in (4.2, 4.5, 5.0, 16 / 3, 5.5, 5.8):
            params = CleParams(kappa)
            for kind in ("odd", "even"):
                for tau in taus:
                    self.assertGreater(modulus_density(kind, tau, params), 0,
                                       msg=f"kappa={kappa} {kind} tau={tau}")

    def test_density_gap_decays_at_iota(self):
        # 1 - m_odd/m_even ~ C r^ι with r = e^{-2πτ}
        for kappa in (3.5, 5.0, 16 / 3, 7.0):
            params = CleParams(kappa)
            gaps = []
            for tau in (1.0, 1.5):
                gap = 1 - modulus_density("odd", tau, params) / modulus_density("even", tau, params)
                gaps.append(abs(gap))
            exponent = -math.log(gaps[1] / gaps[0]) / (2 * math.pi * 0.5)
            self.assertAlmostEqual(exponent, predicted_iota(kappa), delta=1e-3 * predicted_iota(kappa),
                                   msg=f"kappa={kappa}")

    def test_density_arguments(self):
        with self.assertRaises(ExactError):
            modulus_density("odd", -1, CleParams(6))
        with self.assertRaises(ExactError):
            modulus_density("third", 1, CleParams(6))
        with self.assertRaises(ExactError):
            modulus_density("odd", 1, CleParams(6), channel="both")


# ────────────────────────────────────────────────────────────────
# Moments and the Laplace identity
# ────────────────────────────────────────────────────────────────
class TestMoments(unittest.TestCase):
    def test_complex_gamma(self):
        self.assertAlmostEqual(abs(complex_gamma(5) - 24), 0, places=10)
        self.assertAlmostEqual(abs(complex_gamma(0.5) - math.sqrt(math.pi)), 0, places=12)
        self.assertAlmostEqual(abs(complex_gamma(-0.5) + 2 * math.sqrt(math.pi)), 0, places=12)
        for x in (0.3, 1.0, 2.5):
            self.assertAlmostEqual(abs(complex_gamma(1 + 1j * x)) ** 2, math.pi * x / math.sinh(math.pi * x),
                                   places=12)
        with self.assertRaises(ExactError):
            complex_gamma(-2)

    def test_moment_power_law(self):
        params = CleParams(5.0)
        a = qa_moment(MomentKind.ODD, 1.0, 0.7, params)
        b = qa_moment(MomentKind.ODD, 2.0, 0.7, params)
        self.assertAlmostEqual(abs(b / a - cmath.exp(complex(-1, -0.7) * math.log(2))), 0, places=12)

    def test_forest_removal(self):
        for kappa in DENSE:
            params = CleParams(kappa)
            for t, x in ((1.0, 0.4), (0.5, 1.3), (3.0, 0.8)):
                direct = qa_moment(MomentKind.ODD, t, x, params)
                via_forest = spine_moment_from_forested(t, x, params)
                self.assertAlmostEqual(abs(via_forest / direct - 1), 0, places=9)

    def test_phase_guards(self):
        with self.assertRaises(ExactError):
            qa_moment(MomentKind.ODD, 1, 0.5, CleParams(3))
        with self.assertRaises(ExactError):
            qa_moment(MomentKind.ODD_SIMPLE, 1, 0.5, CleParams(5))
        with self.assertRaises(ExactError):
            qa_moment(MomentKind.K_FORESTED, 1, 0.5, CleParams(5), k=0)
        with self.assertRaises(ValueError):
            qa_moment("QA_9", 1, 0.5, CleParams(5))

    def test_forested_k_one(self):
        params = CleParams(6)
        shape = qa_moment(MomentKind.K_FORESTED, 1, 0.5, params) / complex_gamma(1 + 0.5j)
        expected = 2 * math.cos(params.chi) / (2 * math.cosh(0.5 * math.pi))
        self.assertAlmostEqual(abs(shape - expected), 0, places=12)


class TestLaplace(unittest.TestCase):
    def test_closed_forms_agree(self):
        for kappa in (3.0, 3.5, 16 / 3, 5.0, 7.0):
            params = CleParams(kappa)
            for kind in ("odd", "even"):
                for x in (0.25, 1.0, 2.0):
                    a = laplace_rhs(kind, x, params)
                    b = laplace_rhs_from_moments(kind, x, params)
                    self.assertAlmostEqual(a / b, 1, places=9)

    def test_identity_dense(self):
        for kappa in (5.0, 16 / 3, 7.0):
            for kind in ("odd", "even"):
                for x in (0.25, 0.5, 1.0, 2.0):
                    self.assertLessEqual(verify_laplace(kind, x, CleParams(kappa)), 1e-6)

    def test_identity_simple(self):
        for kind in ("odd", "even"):
            self.assertLessEqual(verify_laplace(kind, 1.0, CleParams(3.5)), 1e-6)

    def test_small_x_is_finite(self):
        params = CleParams(5.0)
        for kind in ("odd", "even"):
            near = laplace_rhs(kind, 0.01, params)
            self.assertTrue(math.isfinite(near))
            self.assertAlmostEqual(near / laplace_rhs(kind, 0.02, params), 1, delta=0.01)
            self.assertAlmostEqual(laplace_lhs(kind, 0.01, params) / near, 1, delta=1e-6)

    def test_x_must_be_positive(self):
        with self.assertRaises(ExactError):
            laplace_rhs("odd", 0, CleParams(5))


if __name__ == "__main__":
    unittest.main()
