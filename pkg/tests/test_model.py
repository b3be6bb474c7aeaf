# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

import unittest
import math

import numpy as np

from ppsolab.pl_model import PLPolicyParams, PLFeeCase, PLRegime, classify_fee_case, crediting_rate, \
    derive_thresholds, drift_pi, drift_zero_point, generator_H, intrinsic_value, payoff_h, running_cost


class TestPolicyParams(unittest.TestCase):
    def test_init(self):
        """
        Test normal initialisazion with the reference parameters.
        """

        p = PLPolicyParams()

        self.assertEqual(p.maturity_T, 10.0)
        self.assertEqual(p.risk_free_r, 0.015)
        self.assertEqual(p.volatility_sigma, 0.18)
        self.assertEqual(p.guaranteed_rg, 0.01)
        self.assertEqual(p.participation_delta, 0.1)
        self.assertEqual(p.buffer_beta, 3.0)
        self.assertEqual(p.bonus_gamma, 0.4)
        self.assertEqual(p.share_alpha, 0.1)
        self.assertFalse(p.has_fees)

    def test_invalid_values(self):
        """
        Test parameters outside their domain.
        """

        with self.assertRaises(AssertionError):
            PLPolicyParams(guaranteed_rg=0.02)

        with self.assertRaises(AssertionError):
            PLPolicyParams(guaranteed_rg=0.0)

        with self.assertRaises(AssertionError):
            PLPolicyParams(share_alpha=1.0)

        with self.assertRaises(AssertionError):
            PLPolicyParams(bonus_gamma=0.0)

        with self.assertRaises(AssertionError):
            PLPolicyParams(maturity_T=0.0)

        with self.assertRaises(AssertionError):
            PLPolicyParams(fee_p=-1e-6)

    def test_replace(self):
        p = PLPolicyParams()
        q = p.replace(bonus_gamma=0.7)

        self.assertEqual(q.bonus_gamma, 0.7)
        self.assertEqual(p.bonus_gamma, 0.4)

        with self.assertRaises(AssertionError):
            p.replace(risk_free_r=0.005)


class TestThresholds(unittest.TestCase):
    def test_reference_thresholds(self):
        """
        Test the landmark levels of the reference parameters.
        """

        t = derive_thresholds(PLPolicyParams())

        self.assertAlmostEqual(t.x_alpha, math.log(10.0), places=14)
        self.assertAlmostEqual(t.x_bar0, 3.15, places=14)
        self.assertAlmostEqual(t.x_g, 3.1, places=14)
        self.assertEqual(t.fee_case, PLFeeCase.NoFeeBaseline)
        self.assertEqual(t.regime, PLRegime.B)
        self.assertEqual(t.band_top, t.x_bar0)
        self.assertIsNone(t.hat_x1)

    def test_ordering(self):
        p = PLPolicyParams(fee_q=0.002)
        t = derive_thresholds(p)

        self.assertLess(t.x_g, t.x_bar0)
        self.assertLess(t.x_bar0, t.x_bar_q)
        self.assertLess(t.x_bar_q, t.x_bar_q_gamma)
        self.assertEqual(t.band_top, t.x_bar_q_gamma)

    def test_regime_boundary(self):
        """
        Test alpha chosen so that x_alpha = x_bar0.
        """

        p = PLPolicyParams(share_alpha=math.exp(-3.15))
        t = derive_thresholds(p)

        self.assertAlmostEqual(t.x_alpha, t.x_bar0, places=12)

        p = PLPolicyParams(share_alpha=math.exp(-3.3))
        self.assertEqual(derive_thresholds(p).regime, PLRegime.A)


class TestGainFunction(unittest.TestCase):
    def test_values(self):
        p = PLPolicyParams()

        self.assertEqual(payoff_h(0.0, p), 1.0)
        self.assertAlmostEqual(payoff_h(math.log(10.0), p), 0.1, places=14)
        self.assertAlmostEqual(payoff_h(50.0, p), p.share_alpha * p.bonus_gamma, places=14)

    def test_negative(self):
        with self.assertRaises(AssertionError):
            payoff_h(-0.1, PLPolicyParams())

    def test_shape(self):
        """
        Test that h is decreasing, convex and 1-Lipschitz.
        """

        p = PLPolicyParams()
        x = np.linspace(0.0, 10.0, 2001)
        h = payoff_h(x, p)
        dh = np.diff(h)

        self.assertIsInstance(h, np.ndarray)
        self.assertTrue(np.all(dh < 0.0))
        self.assertTrue(np.all(np.abs(dh) <= (x[1] - x[0]) + 1e-15))
        self.assertTrue(np.all(np.diff(dh) >= -1e-15))
        self.assertTrue(np.all(h >= p.share_alpha * p.bonus_gamma))


class TestDrift(unittest.TestCase):
    def test_values(self):
        p = PLPolicyParams()

        self.assertAlmostEqual(drift_pi(2.3, p), 0.0212, places=14)
        self.assertAlmostEqual(drift_pi(0.0, p), 0.0212, places=14)
        self.assertAlmostEqual(drift_pi(4.0, p), 0.0212 - 0.09, places=14)
        self.assertAlmostEqual(drift_pi(drift_zero_point(p), p), 0.0, places=14)

    def test_lipschitz(self):
        """
        Test that pi is nonincreasing and delta-Lipschitz.
        """

        p = PLPolicyParams()
        x = np.linspace(0.0, 20.0, 4001)
        d = np.diff(drift_pi(x, p))

        self.assertTrue(np.all(d <= 0.0))
        self.assertTrue(np.all(np.abs(d) <= p.participation_delta * (x[1] - x[0]) + 1e-15))


class TestRates(unittest.TestCase):
    def test_crediting_rate(self):
        p = PLPolicyParams()

        self.assertEqual(crediting_rate(1000.0, 100.0, p), p.guaranteed_rg)
        self.assertAlmostEqual(crediting_rate(math.exp(4.0), 1.0, p), 0.1, places=14)

        with self.assertRaises(AssertionError):
            crediting_rate(0.0, 100.0, p)

        with self.assertRaises(AssertionError):
            crediting_rate(1000.0, -1.0, p)

    def test_intrinsic_value(self):
        p = PLPolicyParams()

        self.assertEqual(intrinsic_value(1000.0, 100.0, p), 100.0)
        self.assertAlmostEqual(intrinsic_value(1000.0, 50.0, p), 50.0 + 0.4 * 50.0, places=12)
        self.assertEqual(intrinsic_value(1000.0, 0.0, p), 40.0)

        with self.assertRaises(AssertionError):
            intrinsic_value(-1.0, 10.0, p)

    def test_intrinsic_matches_h(self):
        """
        Test g(a, R) / a = h(ln(a / R)).
        """

        p = PLPolicyParams()
        a = 1000.0

        for reserve in (10.0, 50.0, 100.0, 400.0, 999.0):
            x = math.log(a / reserve)
            self.assertAlmostEqual(intrinsic_value(a, reserve, p) / a, payoff_h(x, p), places=13)

    def test_running_cost(self):
        p = PLPolicyParams(fee_p=0.001, fee_q=0.002)

        self.assertAlmostEqual(running_cost(0.0, p), 0.003, places=15)
        self.assertAlmostEqual(running_cost(math.log(10.0), p), 0.001 + 0.0002, places=15)
        self.assertEqual(running_cost(1.0, PLPolicyParams()), 0.0)


class TestGenerator(unittest.TestCase):
    def test_sign_change(self):
        """
        Test that H without fees is negative below x_bar0 and positive above it.
        """

        p = PLPolicyParams()
        t = derive_thresholds(p)
        x = np.linspace(0.0, 12.0, 6001)
        H = generator_H(x, p)

        self.assertTrue(np.all(H[x < t.x_bar0 - 1e-9] < 0.0))
        self.assertTrue(np.all(H[x > t.x_bar0 + 1e-9] > 0.0))

    def test_bounds(self):
        """
        Test (1 - gamma) (e^{-x} (sigma^2/2 - pi)) <= H <= e^{-x} (sigma^2/2 - pi) where the
        bracket is positive.
        """

        p = PLPolicyParams()
        x = np.linspace(0.0, 12.0, 1201)
        base = np.exp(-x) * (0.5 * p.volatility_sigma ** 2 - drift_pi(x, p))
        H = generator_H(x, p)
        positive = base > 0.0

        self.assertTrue(np.all(H[positive] <= base[positive] + 1e-15))
        self.assertTrue(np.all(H[positive] >= (1.0 - p.bonus_gamma) * base[positive] - 1e-15))

    def test_left_branch_at_x_alpha(self):
        p = PLPolicyParams()
        xa = math.log(10.0)
        expected = math.exp(-xa) * (0.5 * p.volatility_sigma ** 2 - drift_pi(xa, p))

        self.assertAlmostEqual(generator_H(xa, p), expected, places=15)

    def test_fees(self):
        p = PLPolicyParams(fee_p=0.001, fee_q=0.002)
        x = 1.0
        base = 0.5 * p.volatility_sigma ** 2 - drift_pi(x, p)

        self.assertAlmostEqual(generator_H(x, p), math.exp(-x) * (base - 0.002) - 0.001, places=15)


class TestFeeCase(unittest.TestCase):
    def test_no_portfolio_fee(self):
        report = classify_fee_case(PLPolicyParams(fee_q=0.001))

        self.assertEqual(report.case, PLFeeCase.NoFeeBaseline)
        self.assertIsNone(report.roots)

    def test_case_two(self):
        """
        Test the two roots for a small portfolio fee.
        """

        p = PLPolicyParams(fee_p=1e-5)
        report = classify_fee_case(p)

        self.assertEqual(report.case, PLFeeCase.CaseII)
        self.assertIsNotNone(report.roots)
        assert report.roots is not None
        hat_x1, hat_x2 = report.roots
        self.assertLessEqual(report.root_residuals, 1e-10)
        self.assertLess(3.15, hat_x1)
        self.assertLess(hat_x1, hat_x2)
        self.assertAlmostEqual(hat_x1 - 3.15, (1e-5 / 0.06) * math.exp(hat_x1), places=9)

        t = derive_thresholds(p)
        self.assertEqual(t.band_top, hat_x1)
        self.assertEqual(t.hat_x2, hat_x2)

        # H^{p,q} is positive exactly between the roots.
        x = np.linspace(t.x_bar_q_gamma + 0.01, hat_x2 + 3.0, 2000)
        H = generator_H(x, p)
        inside = (x > hat_x1 + 1e-6) & (x < hat_x2 - 1e-6)
        outside = (x < hat_x1 - 1e-6) | (x > hat_x2 + 1e-6)
        self.assertTrue(np.all(H[inside] > 0.0))
        self.assertTrue(np.all(H[outside] < 0.0))

    def test_case_one(self):
        p = PLPolicyParams(fee_p=0.01)
        report = classify_fee_case(p)

        self.assertEqual(report.case, PLFeeCase.CaseI)
        self.assertLessEqual(report.discriminant, 0.0)
        self.assertEqual(derive_thresholds(p).band_top, math.inf)

        x = np.linspace(derive_thresholds(p).x_bar_q_gamma, 30.0, 3000)
        self.assertTrue(np.all(generator_H(x, p) <= 0.0))


if __name__ == "__main__":
    unittest.main()
