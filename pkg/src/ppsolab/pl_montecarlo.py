# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

"""
This module simulates the contract to cross-check the lattice.

Two simulations are available:
    - The reduced model: the BDR alone, under the measure where the
      portfolio is the numeraire. Values come out in units of a0.
    - The full model: portfolio and reserve under the risk-neutral measure,
      discounted at r. Values come out in currency.

Both discretisations are matched, so their a0-normalized means differ only
by sampling noise.

Paths are simulated in blocks of BLOCK_SIZE. Block b draws from a Philox
generator keyed by (seed, b), so every path is the same however the blocks
are spread over the workers.
"""

# Python std modules:
from collections.abc import Callable
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional
import logging
import math

# External modules:
import numpy as np
import numpy.typing as npt
from scipy.stats import norm

# Local modules:
from ppsolab.pl_boundary import PLBoundaryCurves
from ppsolab.pl_engine import PLValuation
from ppsolab.pl_model import PLPolicyParams, PLRegime, crediting_rate, drift_pi, intrinsic_value, \
    payoff_h, running_cost, x_alpha
from ppsolab.pl_worker import PLJobRunner, run_jobs

logger = logging.getLogger(__name__)

BLOCK_SIZE: int = 4096

# Number of standard errors allowed in the agreement checks.
N_SIGMA: float = 3.0

MASK64: int = (1 << 64) - 1

type PLStopRule = Callable[[float, npt.NDArray[np.float64]], npt.NDArray[np.bool_]]


@dataclass(frozen=True)
class PLMcSpec:
    n_paths: int = 100_000
    steps_per_year: int = 250
    seed: int = 42
    bridge_correction: bool = True

    def __post_init__(self):
        assert self.n_paths >= 1, f"Number of paths must be at least 1: {self.n_paths}"
        assert self.steps_per_year >= 1, f"Steps per year must be at least 1: {self.steps_per_year}"
        assert -(1 << 63) <= self.seed <= MASK64, f"Seed must fit into 64 bits: {self.seed}"

    def n_steps(self, maturity: float) -> int:
        return int(round(maturity * self.steps_per_year))

    def block_sizes(self) -> list[int]:
        full, rest = divmod(self.n_paths, BLOCK_SIZE)
        return [BLOCK_SIZE] * full + ([rest] if rest > 0 else [])


class PLMeasure(Enum):
    P_reduced = 0
    Q_full = 1


@dataclass(frozen=True)
class PLMcEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    measure: PLMeasure
    units: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "measure": self.measure.name,
            "units": self.units,
        }


@dataclass(frozen=True)
class PLFlowReport:
    """
    Largest defects of the two flow inequalities over all paths and steps:
    |X^y - X^x| <= (y - x) e^{delta t} and X^y - X^x >= (y - x)(2 - e^{delta t}).
    """

    n_paths: int
    max_lip_violation: float
    max_lower_violation: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.max_lip_violation <= self.slack and self.max_lower_violation <= self.slack

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_paths": self.n_paths,
            "max_lip_violation": self.max_lip_violation,
            "max_lower_violation": self.max_lower_violation,
            "slack": self.slack,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class PLPathRecords:
    """
    Terminal state of every path: the BDR when the path ended (0 if
    absorbed), the time it ended, whether it was absorbed and the fees paid.
    """

    x_end: npt.NDArray[np.float64]
    tau: npt.NDArray[np.float64]
    absorbed: npt.NDArray[np.bool_]
    fee_integral: npt.NDArray[np.float64]

    def payoffs(self, params: PLPolicyParams) -> npt.NDArray[np.float64]:
        return np.asarray(payoff_h(self.x_end, params)) - self.fee_integral

    @staticmethod
    def concat(blocks: list["PLPathRecords"]) -> "PLPathRecords":
        return PLPathRecords(
            np.concatenate([b.x_end for b in blocks]),
            np.concatenate([b.tau for b in blocks]),
            np.concatenate([b.absorbed for b in blocks]),
            np.concatenate([b.fee_integral for b in blocks]))


def block_generator(seed: int, block: int) -> np.random.Generator:
    """
    Counter based generator of one path block.
    """

    return np.random.Generator(np.random.Philox(key=[seed & MASK64, block]))


def _estimate(samples: npt.NDArray[np.float64], spec: PLMcSpec, measure: PLMeasure,
        units: str) -> PLMcEstimate:
    mean = float(np.mean(samples))
    std_error = float(np.std(samples, ddof=1) / math.sqrt(len(samples))) if len(samples) > 1 else 0.0

    return PLMcEstimate(mean, std_error, len(samples), spec.seed, measure, units)


def _simulate_x_block(params: PLPolicyParams, x0: float, spec: PLMcSpec, block: int, size: int,
        stop_rule: Optional[PLStopRule] = None) -> PLPathRecords:
    maturity = params.maturity_T
    sigma = params.volatility_sigma
    n_steps = spec.n_steps(maturity)

    x = np.full(size, x0, dtype=np.float64)
    alive = np.full(size, x0 > 0.0)
    absorbed = ~alive
    tau = np.where(alive, maturity, 0.0)
    fee = np.zeros(size, dtype=np.float64)

    if n_steps == 0:
        return PLPathRecords(x, tau, absorbed, fee)

    rng = block_generator(spec.seed, block)
    dt = maturity / n_steps
    sq_dt = math.sqrt(dt)

    for i in range(n_steps):
        t = i * dt

        if stop_rule is not None:
            hit = alive & stop_rule(t, x)
            tau[hit] = t
            alive &= ~hit

        # Every path draws its numbers, alive or not.
        z = rng.standard_normal(size)
        u = rng.random(size) if spec.bridge_correction else None

        fee[alive] += np.asarray(running_cost(x[alive], params)) * dt

        x_new = x + np.asarray(drift_pi(x, params)) * dt + sigma * sq_dt * z
        crossed = x_new <= 0.0
        if u is not None:
            p_cross = np.exp(-2.0 * np.maximum(x, 0.0) * np.maximum(x_new, 0.0) / (sigma * sigma * dt))
            crossed |= u < p_cross

        newly = alive & crossed
        tau[newly] = t + dt
        absorbed |= newly
        x = np.where(alive, np.where(crossed, 0.0, x_new), x)
        alive &= ~crossed

    return PLPathRecords(x, tau, absorbed, fee)


def simulate_x(params: PLPolicyParams, x0: float, spec: PLMcSpec, runner: Optional[PLJobRunner] = None,
        stop_rule: Optional[PLStopRule] = None) -> PLPathRecords:
    """
    Euler-Maruyama simulation of the BDR from x0 up to maturity or absorption
    at zero. With the bridge correction a path is also absorbed with the
    probability that the Brownian bridge between two positive values crossed
    zero. The fee integral uses the left end point of every step.

    :param params: The policy parameters.
    :param x0: Starting level, must be non-negative.
    :param spec: Number of paths, steps and the seed.
    :param runner: Optional job runner for the path blocks.
    :param stop_rule: Optional rule (t, x) -> stop mask checked at every step.
    :return: The terminal records of all paths in path order.
    :rtype: PLPathRecords
    """

    assert x0 >= 0.0, f"Starting level must be non-negative: {x0}"

    jobs = [lambda b=b, size=size: _simulate_x_block(params, x0, spec, b, size, stop_rule)
            for b, size in enumerate(spec.block_sizes())]

    logger.debug(f"Simulate {spec.n_paths} paths in {len(jobs)} blocks from x0={x0}")

    return PLPathRecords.concat(run_jobs(jobs, runner))


def mc_european_reduced(params: PLPolicyParams, spec: PLMcSpec, runner: Optional[PLJobRunner] = None,
        x0: Optional[float] = None) -> PLMcEstimate:
    """
    European value in units of a0: the mean of h at maturity or absorption
    minus the fees paid until then. Paths start at x_alpha by default.
    """

    start = x_alpha(params) if x0 is None else x0
    records = simulate_x(params, start, spec, runner)
    estimate = _estimate(records.payoffs(params), spec, PLMeasure.P_reduced, "normalized")

    logger.info(f"European value (reduced): {estimate.mean} +- {estimate.std_error}")

    return estimate


def _simulate_full_block(params: PLPolicyParams, spec: PLMcSpec, block: int, size: int,
        a_start: float, r_start: float) -> npt.NDArray[np.float64]:
    maturity = params.maturity_T
    sigma = params.volatility_sigma
    r = params.risk_free_r
    n_steps = spec.n_steps(maturity)

    a = np.full(size, a_start, dtype=np.float64)
    reserve = np.full(size, r_start, dtype=np.float64)
    alive = np.full(size, a_start > r_start)
    tau = np.where(alive, maturity, 0.0)
    fee = np.zeros(size, dtype=np.float64)
    a[~alive] = reserve[~alive]

    if n_steps > 0:
        rng = block_generator(spec.seed, block)
        dt = maturity / n_steps
        sq_dt = math.sqrt(dt)

        for i in range(n_steps):
            t = i * dt
            z = rng.standard_normal(size)
            u = rng.random(size) if spec.bridge_correction else None

            fee = np.where(alive, fee + math.exp(-r * t) * (params.fee_p * a + params.fee_q * reserve) * dt, fee)

            rate = np.asarray(crediting_rate(a, reserve, params))
            a_new = a * np.exp((r - 0.5 * sigma * sigma) * dt + sigma * sq_dt * z)
            r_new = reserve * np.exp(rate * dt)

            y_new = np.log(a_new / r_new)
            crossed = y_new <= 0.0
            if u is not None:
                y = np.log(a / reserve)
                p_cross = np.exp(-2.0 * np.maximum(y, 0.0) * np.maximum(y_new, 0.0) / (sigma * sigma * dt))
                crossed |= u < p_cross

            newly = alive & crossed
            tau[newly] = t + dt
            a = np.where(alive, a_new, a)
            reserve = np.where(alive, r_new, reserve)
            # Insolvency pays the reserve.
            a[newly] = reserve[newly]
            alive &= ~crossed

    return np.exp(-r * tau) * np.asarray(intrinsic_value(a, reserve, params)) - fee


def mc_european_full(params: PLPolicyParams, spec: PLMcSpec, runner: Optional[PLJobRunner] = None,
        a_start: Optional[float] = None, r_start: Optional[float] = None) -> PLMcEstimate:
    """
    European value in currency from the two dimensional model. The portfolio
    moves by exact geometric Brownian increments and the reserve grows at the
    crediting rate of the step start. The contract ends at the first step
    with portfolio <= reserve, or at maturity. The payoff is discounted at r,
    and so is the fee stream p A + q R.

    :param params: The policy parameters.
    :param spec: Number of paths, steps and the seed.
    :param runner: Optional job runner for the path blocks.
    :param a_start: Starting portfolio, defaults to a0.
    :param r_start: Starting reserve, defaults to alpha * a0.
    :return: The estimate in currency.
    :rtype: PLMcEstimate
    """

    a0 = params.portfolio_a0 if a_start is None else a_start
    r0 = params.share_alpha * params.portfolio_a0 if r_start is None else r_start

    assert a0 > 0.0, f"Starting portfolio must be positive: {a0}"
    assert r0 > 0.0, f"Starting reserve must be positive: {r0}"

    jobs = [lambda b=b, size=size: _simulate_full_block(params, spec, b, size, a0, r0)
            for b, size in enumerate(spec.block_sizes())]
    payoffs = np.concatenate(run_jobs(jobs, runner))
    estimate = _estimate(payoffs, spec, PLMeasure.Q_full, "currency")

    logger.info(f"European value (full): {estimate.mean} +- {estimate.std_error}")

    return estimate


def _curve_arrays(curve: list[tuple[float, float]]) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    return np.array([t for t, _ in curve]), np.array([x for _, x in curve])


def strategy_rule(curves: PLBoundaryCurves) -> PLStopRule:
    """
    Turns the boundaries into a stopping rule: stop when x <= b1(t) or, where
    the band is defined, when b2(t) <= x <= b3(t). The curves are linear
    between samples. b1 is flat outside its samples.
    """

    assert curves.b1, "Boundary b1 has no samples"

    b1_t, b1_x = _curve_arrays(curves.b1)
    use_band = bool(curves.b2) and bool(curves.b3)

    if curves.regime == PLRegime.B and not use_band:
        logger.warning("Regime B curves without b2 and b3, using the rule for b1 only.")

    b2_t, b2_x = _curve_arrays(curves.b2)
    b3_t, b3_x = _curve_arrays(curves.b3)

    def rule(t: float, x: npt.NDArray[np.float64]) -> npt.NDArray[np.bool_]:
        stop = x <= np.interp(t, b1_t, b1_x)

        if use_band and b2_t[0] <= t <= b2_t[-1]:
            low = np.interp(t, b2_t, b2_x)
            high = np.interp(t, b3_t, b3_x)
            stop |= (x >= low) & (x <= high)

        return stop

    return rule


def mc_strategy_value(params: PLPolicyParams, curves: PLBoundaryCurves, spec: PLMcSpec,
        runner: Optional[PLJobRunner] = None) -> PLMcEstimate:
    """
    Value of surrendering by the extracted boundaries, in units of a0.
    The paths are those of mc_european_reduced with the same seed.
    """

    records = simulate_x(params, x_alpha(params), spec, runner, strategy_rule(curves))
    estimate = _estimate(records.payoffs(params), spec, PLMeasure.P_reduced, "normalized")

    logger.info(f"Strategy value: {estimate.mean} +- {estimate.std_error}")

    return estimate


def _flow_block(params: PLPolicyParams, x: float, y: float, spec: PLMcSpec, block: int,
        size: int) -> tuple[float, float]:
    maturity = params.maturity_T
    n_steps = spec.n_steps(maturity)
    if n_steps == 0:
        return 0.0, 0.0

    rng = block_generator(spec.seed, block)
    dt = maturity / n_steps
    noise = params.volatility_sigma * math.sqrt(dt)
    gap = y - x

    path_x = np.full(size, x, dtype=np.float64)
    path_y = np.full(size, y, dtype=np.float64)
    lip = 0.0
    lower = 0.0

    for i in range(n_steps):
        z = rng.standard_normal(size)
        path_x = path_x + np.asarray(drift_pi(path_x, params)) * dt + noise * z
        path_y = path_y + np.asarray(drift_pi(path_y, params)) * dt + noise * z

        growth = math.exp(params.participation_delta * (i + 1) * dt)
        diff = path_y - path_x
        lip = max(lip, float(np.max(np.abs(diff))) - gap * growth)
        lower = max(lower, gap * (2.0 - growth) - float(np.min(diff)))

    return lip, lower


def coupled_flow_check(params: PLPolicyParams, x: float, y: float, spec: PLMcSpec,
        runner: Optional[PLJobRunner] = None) -> PLFlowReport:
    """
    Drives two free paths (no absorption) from x and y with the same noise and
    records the largest defects of the flow inequalities. The Euler scheme
    may break them by at most delta^2 (y - x) e^{delta T} dt.

    :param params: The policy parameters.
    :param x: Lower starting level.
    :param y: Upper starting level, y >= x.
    :param spec: Number of paths, steps and the seed.
    :param runner: Optional job runner for the path blocks.
    :return: The largest defects and the allowed slack.
    :rtype: PLFlowReport
    """

    assert 0.0 <= x <= y, f"Starting levels must satisfy 0 <= x <= y: x={x}, y={y}"

    jobs = [lambda b=b, size=size: _flow_block(params, x, y, spec, b, size)
            for b, size in enumerate(spec.block_sizes())]
    results = run_jobs(jobs, runner)

    lip = max(r[0] for r in results)
    lower = max(r[1] for r in results)

    n_steps = spec.n_steps(params.maturity_T)
    dt = params.maturity_T / n_steps if n_steps > 0 else 0.0
    delta = params.participation_delta
    slack = delta * delta * (y - x) * math.exp(delta * params.maturity_T) * dt

    report = PLFlowReport(spec.n_paths, lip, lower, slack)
    logger.info(f"Flow check: lip={lip}, lower={lower}, slack={slack}")

    return report


def _verdict(name: str, measured: float, low: float, high: float, std_error: float,
        center: float) -> dict[str, Any]:
    passed = low <= measured <= high
    z_score = abs(measured - center) / std_error if std_error > 0.0 else 0.0

    if not passed:
        logger.error(f"Check {name} failed: {measured} not in [{low}, {high}]")

    return {
        "name": name,
        "passed": passed,
        "measured": measured,
        "bounds": [low, high],
        "p_value": float(2.0 * norm.sf(z_score)),
    }


def mc_check(params: PLPolicyParams, valuation: PLValuation, curves: PLBoundaryCurves, spec: PLMcSpec,
        runner: Optional[PLJobRunner] = None) -> list[dict[str, Any]]:
    """
    Runs the agreement tests between simulation and lattice:
        - european_reduced_vs_tree: reduced estimate within N_SIGMA standard
          errors of the tree European value.
        - full_vs_tree: full estimate (currency) within N_SIGMA of its
          standard errors of a0 times the tree European value.
        - full_vs_reduced: the a0-normalized full estimate within N_SIGMA
          combined standard errors of the reduced one.
        - strategy_sandwich: the boundary strategy between the tree European
          value and the tree American value plus e^{delta T} dx.

    :return: One verdict per test.
    :rtype: list[dict[str, Any]]
    """

    a0 = params.portfolio_a0
    reduced = mc_european_reduced(params, spec, runner)
    full = mc_european_full(params, spec, runner)
    strategy = mc_strategy_value(params, curves, spec, runner)

    se = reduced.std_error
    checks = [_verdict("european_reduced_vs_tree", reduced.mean, valuation.v0_european - N_SIGMA * se,
                       valuation.v0_european + N_SIGMA * se, se, valuation.v0_european)]

    target = a0 * valuation.v0_european
    checks.append(_verdict("full_vs_tree", full.mean, target - N_SIGMA * full.std_error,
                           target + N_SIGMA * full.std_error, full.std_error, target))

    combined = math.sqrt((full.std_error / a0) ** 2 + se ** 2)
    checks.append(_verdict("full_vs_reduced", full.mean / a0, reduced.mean - N_SIGMA * combined,
                           reduced.mean + N_SIGMA * combined, combined, reduced.mean))

    slack = math.exp(params.participation_delta * params.maturity_T) * curves.dx
    se = strategy.std_error
    checks.append(_verdict("strategy_sandwich", strategy.mean, valuation.v0_european - N_SIGMA * se,
                           valuation.v0 + slack + N_SIGMA * se, se, valuation.v0))

    for check, estimate in zip(checks, (reduced, full, full, strategy)):
        check["estimate"] = estimate.to_dict()

    return checks
