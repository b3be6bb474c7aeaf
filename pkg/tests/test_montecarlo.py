# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

import unittest
import dataclasses
import math

import numpy as np

from ppsolab.pl_boundary import PLBoundaryCurves, extract_c, extract_time_boundaries
from ppsolab.pl_engine import default_lattice_spec, price_cone, solve_grid
from ppsolab.pl_model import PLPolicyParams, PLRegime, derive_thresholds, payoff_h
from ppsolab.pl_montecarlo import BLOCK_SIZE, PLMcSpec, PLMeasure, coupled_flow_check, mc_check, \
    mc_european_full, mc_european_reduced, mc_strategy_value, simulate_x
from ppsolab.pl_worker import PLJobRunner


def flat_curves(params: PLPolicyParams, level: float, regime: PLRegime = PLRegime.A) -> PLBoundaryCurves:
    """
    Curves with a constant b1 and no band.
    """

    T = params.maturity_T
    return PLBoundaryCurves(regime, 2, T / 2.0, 0.1, T, [(0.0, 0.0)], 0.0, b1=[(0.0, level), (T, level)])


class TestMcSpec(unittest.TestCase):
    def test_init(self):
        spec = PLMcSpec()

        self.assertEqual(spec.n_paths, 100_000)
        self.assertEqual(spec.steps_per_year, 250)
        self.assertEqual(spec.seed, 42)
        self.assertTrue(spec.bridge_correction)
        self.assertEqual(spec.n_steps(10.0), 2500)

    def test_invalid(self):
        with self.assertRaises(AssertionError):
            PLMcSpec(n_paths=0)

        with self.assertRaises(AssertionError):
            PLMcSpec(steps_per_year=0)

        with self.assertRaises(AssertionError):
            PLMcSpec(seed=1 << 70)

    def test_blocks(self):
        sizes = PLMcSpec(n_paths=2 * BLOCK_SIZE + 5).block_sizes()

        self.assertEqual(sizes, [BLOCK_SIZE, BLOCK_SIZE, 5])
        self.assertEqual(PLMcSpec(n_paths=BLOCK_SIZE).block_sizes(), [BLOCK_SIZE])


class TestSimulation(unittest.TestCase):
    def test_determinism(self):
        """
        Test that the paths do not depend on the number of workers.
        """

        p = PLPolicyParams(fee_q=0.001)
        spec = PLMcSpec(n_paths=BLOCK_SIZE + 1000, steps_per_year=20, seed=7)

        serial = simulate_x(p, 2.3, spec)
        parallel = simulate_x(p, 2.3, spec, PLJobRunner(3))

        self.assertTrue(np.array_equal(serial.x_end, parallel.x_end))
        self.assertTrue(np.array_equal(serial.tau, parallel.tau))
        self.assertTrue(np.array_equal(serial.fee_integral, parallel.fee_integral))

        other = simulate_x(p, 2.3, PLMcSpec(n_paths=BLOCK_SIZE + 1000, steps_per_year=20, seed=8))
        self.assertFalse(np.array_equal(serial.x_end, other.x_end))

    def test_start_at_zero(self):
        p = PLPolicyParams(fee_p=0.01)
        records = simulate_x(p, 0.0, PLMcSpec(n_paths=100, steps_per_year=10))

        self.assertTrue(np.all(records.absorbed))
        self.assertTrue(np.all(records.tau == 0.0))
        self.assertTrue(np.all(records.payoffs(p) == 1.0))

    def test_no_steps(self):
        p = PLPolicyParams(maturity_T=0.001)
        estimate = mc_european_reduced(p, PLMcSpec(n_paths=500, steps_per_year=1))

        self.assertAlmostEqual(estimate.mean, 0.1, places=14)
        self.assertAlmostEqual(estimate.std_error, 0.0, places=14)
        self.assertEqual(estimate.measure, PLMeasure.P_reduced)

    def test_negative_start(self):
        with self.assertRaises(AssertionError):
            simulate_x(PLPolicyParams(), -0.1, PLMcSpec(n_paths=10))

    def test_payoff_range(self):
        p = PLPolicyParams(fee_p=0.001, fee_q=0.002)
        records = simulate_x(p, 0.5, PLMcSpec(n_paths=3000, steps_per_year=50))
        payoffs = records.payoffs(p)

        self.assertTrue(np.all(payoffs <= 1.0))
        self.assertTrue(np.all(payoffs >= 0.1 * 0.4 - 0.003 * 10.0 - 1e-12))
        self.assertTrue(np.all(records.fee_integral >= 0.0))
        self.assertTrue(np.any(records.absorbed))

    def test_common_random_numbers(self):
        """
        Test pathwise ordering in the fees and in gamma.
        """

        spec = PLMcSpec(n_paths=2000, steps_per_year=50, seed=3)
        base = PLPolicyParams()

        records = simulate_x(base, 2.3, spec)
        with_fees = simulate_x(base.replace(fee_p=0.001), 2.3, spec)
        self.assertTrue(np.all(records.payoffs(base) >= with_fees.payoffs(base.replace(fee_p=0.001))))

        with_q = simulate_x(base.replace(fee_q=0.001), 2.3, spec)
        self.assertTrue(np.all(records.payoffs(base) >= with_q.payoffs(base.replace(fee_q=0.001))))

        high_gamma = base.replace(bonus_gamma=0.7)
        self.assertTrue(np.all(records.payoffs(high_gamma) >= records.payoffs(base)))

    def test_full_immediate_insolvency(self):
        estimate = mc_european_full(PLPolicyParams(), PLMcSpec(n_paths=200, steps_per_year=10),
                                    a_start=100.0, r_start=100.0)

        self.assertEqual(estimate.mean, 100.0)
        self.assertEqual(estimate.std_error, 0.0)
        self.assertEqual(estimate.units, "currency")


class TestStrategies(unittest.TestCase):
    def test_never_stop(self):
        """
        Test that a strategy that never stops is the European value on the same paths.
        """

        p = PLPolicyParams()
        spec = PLMcSpec(n_paths=3000, steps_per_year=25)

        european = mc_european_reduced(p, spec)
        strategy = mc_strategy_value(p, flat_curves(p, 0.0), spec)

        self.assertEqual(strategy.mean, european.mean)
        self.assertEqual(strategy.std_error, european.std_error)

    def test_stop_at_once(self):
        p = PLPolicyParams()
        strategy = mc_strategy_value(p, flat_curves(p, 100.0), PLMcSpec(n_paths=3000, steps_per_year=25))

        self.assertAlmostEqual(strategy.mean, payoff_h(math.log(10.0), p), places=12)
        self.assertAlmostEqual(strategy.std_error, 0.0, places=12)

    def test_band_fallback(self):
        p = PLPolicyParams()

        with self.assertLogs("ppsolab.pl_montecarlo", level="WARNING"):
            mc_strategy_value(p, flat_curves(p, 0.0, PLRegime.B), PLMcSpec(n_paths=10, steps_per_year=5))


class TestFlow(unittest.TestCase):
    def test_same_start(self):
        report = coupled_flow_check(PLPolicyParams(), 2.0, 2.0, PLMcSpec(n_paths=500, steps_per_year=20))

        self.assertLessEqual(report.max_lip_violation, 0.0)
        self.assertLessEqual(report.max_lower_violation, 0.0)
        self.assertTrue(report.passed)

    def test_reference_pair(self):
        """
        Test both flow inequalities for the starting pair (2.0, 2.5).
        """

        p = PLPolicyParams()
        report = coupled_flow_check(p, 2.0, 2.5, PLMcSpec(n_paths=10_000, steps_per_year=100))
        slack = 0.01 * 0.5 * math.e * 0.01

        self.assertAlmostEqual(report.slack, slack, places=15)
        self.assertLessEqual(report.max_lip_violation, slack)
        self.assertLessEqual(report.max_lower_violation, slack)
        self.assertEqual(report.n_paths, 10_000)

    def test_order(self):
        with self.assertRaises(AssertionError):
            coupled_flow_check(PLPolicyParams(), 2.5, 2.0, PLMcSpec(n_paths=10))


class TestAgreement(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = PLPolicyParams()
        cls.spec = PLMcSpec(n_paths=100_000, steps_per_year=250, seed=42)
        cls.valuation = price_cone(cls.params, 2000)

        thresholds = derive_thresholds(cls.params)
        solution = solve_grid(cls.params, default_lattice_spec(cls.params, 2000))
        cls.curves = extract_time_boundaries(extract_c(solution), solution, thresholds)

        cls.verdicts = {v["name"]: v for v in mc_check(cls.params, cls.valuation, cls.curves, cls.spec,
                                                       PLJobRunner(4))}

    def test_verdict_names(self):
        self.assertEqual(set(self.verdicts), {"european_reduced_vs_tree", "full_vs_tree", "full_vs_reduced",
                                              "strategy_sandwich"})

        for verdict in self.verdicts.values():
            self.assertTrue(verdict["passed"], verdict["name"])
            self.assertEqual(len(verdict["bounds"]), 2)
            self.assertGreaterEqual(verdict["p_value"], 0.0)
            self.assertLessEqual(verdict["p_value"], 1.0)

    def test_reduced_against_tree(self):
        verdict = self.verdicts["european_reduced_vs_tree"]
        estimate = verdict["estimate"]

        self.assertTrue(verdict["passed"])
        self.assertEqual(estimate["n_paths"], 100_000)
        self.assertLessEqual(abs(estimate["mean"] - self.valuation.v0_european), 3.0 * estimate["std_error"])

    def test_full_against_tree(self):
        verdict = self.verdicts["full_vs_tree"]
        full = verdict["estimate"]
        target = 1000.0 * self.valuation.v0_european

        self.assertTrue(verdict["passed"])
        self.assertEqual(full["measure"], "Q_full")
        self.assertEqual(verdict["measured"], full["mean"])
        self.assertLessEqual(abs(full["mean"] - target), 3.0 * full["std_error"])
        self.assertAlmostEqual(verdict["bounds"][0], target - 3.0 * full["std_error"], places=9)

    def test_full_against_reduced(self):
        """
        Test the change of measure between the full and the reduced model.
        """

        self.assertTrue(self.verdicts["full_vs_reduced"]["passed"])

        full = self.verdicts["full_vs_reduced"]["estimate"]
        reduced = self.verdicts["european_reduced_vs_tree"]["estimate"]
        combined = math.sqrt((full["std_error"] / 1000.0) ** 2 + reduced["std_error"] ** 2)

        self.assertLessEqual(abs(full["mean"] / 1000.0 - reduced["mean"]), 3.0 * combined)

    def test_strategy_sandwich(self):
        verdict = self.verdicts["strategy_sandwich"]
        estimate = verdict["estimate"]
        slack = math.exp(1.0) * self.curves.dx
        se = estimate["std_error"]

        self.assertTrue(verdict["passed"])
        self.assertGreaterEqual(estimate["mean"], self.valuation.v0_european - 3.0 * se)
        self.assertLessEqual(estimate["mean"], self.valuation.v0 + slack + 3.0 * se)

    def test_failed_verdict(self):
        """
        Test that a tree value far from the simulation fails the checks
        against the tree and leaves the simulation-only check alone.
        """

        shifted = dataclasses.replace(self.valuation, v0_european=self.valuation.v0_european + 0.01)
        verdicts = {v["name"]: v for v in mc_check(self.params, shifted, self.curves,
                                                   PLMcSpec(n_paths=5000, steps_per_year=50), PLJobRunner(4))}

        self.assertFalse(verdicts["european_reduced_vs_tree"]["passed"])
        self.assertFalse(verdicts["full_vs_tree"]["passed"])
        self.assertTrue(verdicts["full_vs_reduced"]["passed"])


class TestTable1Cell(unittest.TestCase):
    def test_full_model_low_spread(self):
        """
        Test that a direct simulation of the portfolio and the reserve under Q
        prices the low scenario with a 0.5% spread like the lattice, and not
        like the published 99.44.
        """

        p = PLPolicyParams(risk_free_r=0.015, participation_delta=0.1, buffer_beta=3.4)
        tree = price_cone(p, 2000)
        full = mc_european_full(p, PLMcSpec(n_paths=20_000, steps_per_year=250, seed=42), PLJobRunner(4))

        self.assertLessEqual(abs(full.mean - tree.price_V0E), 3.0 * full.std_error)
        self.assertGreater(full.mean - 99.44, 3.0)


if __name__ == "__main__":
    unittest.main()
