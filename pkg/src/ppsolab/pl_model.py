# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

"""
This module defines the policy parameters and every closed-form quantity of the
contract: the gain function h, the drift of the bonus distribution rate (BDR)
under the reduced measure, the crediting rate on the reserve, the intrinsic
value, the generator H (with or without management fees) and the thresholds
that shape the surrender region.

All functions accept a scalar or a numpy array for the state variable and
return the same kind.
"""

# Python std modules:
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional
import dataclasses
import logging
import math

# External modules:
import numpy as np
import numpy.typing as npt
from scipy.optimize import bisect

logger = logging.getLogger(__name__)

type FloatOrArray = float | npt.NDArray[np.float64]

# Residual allowed on the fee-case roots.
ROOT_TOLERANCE: float = 1e-10

# Below this discriminant the two fee-case roots are numerically indistinguishable.
DEGENERATE_DISCRIMINANT: float = 1e-8


class PLFeeCase(Enum):
    """
    Sign structure of the fee-adjusted generator above the bonus threshold:
        - NoFeeBaseline: no fee on the portfolio (p = 0).
        - CaseI: the generator never turns positive above x_bar_q_gamma.
        - CaseII: the generator is positive exactly on (hat_x1, hat_x2).
    """

    NoFeeBaseline = 0
    CaseI = 1
    CaseII = 2


class PLRegime(Enum):
    """
    Shape of the stopping region:
        - A: x_alpha >= x_bar0, a single stop-loss boundary b1.
        - B: x_alpha < x_bar0, the boundary b1 plus the band [b2, b3] above x_alpha.
    """

    A = 0
    B = 1


@dataclass(frozen=True)
class PLPolicyParams:
    """
    Contract and market constants. Rates are annualized decimals and time is
    measured in years. The defaults are the reference parameter set of the
    numerical study (portfolio a0 = 1000, no fees).
    """

    maturity_T: float = 10.0
    risk_free_r: float = 0.015
    volatility_sigma: float = 0.18
    guaranteed_rg: float = 0.01
    participation_delta: float = 0.1
    buffer_beta: float = 3.0
    bonus_gamma: float = 0.4
    share_alpha: float = 0.1
    portfolio_a0: float = 1000.0
    fee_p: float = 0.0
    fee_q: float = 0.0

    def __post_init__(self):
        assert self.maturity_T > 0.0, f"Maturity T must be positive: {self.maturity_T}"
        assert 0.0 < self.guaranteed_rg < self.risk_free_r, \
            f"Guaranteed rate must satisfy 0 < r_g < r: r_g={self.guaranteed_rg}, r={self.risk_free_r}"
        assert self.volatility_sigma > 0.0, f"Volatility sigma must be positive: {self.volatility_sigma}"
        assert self.participation_delta > 0.0, \
            f"Participation delta must be positive: {self.participation_delta}"
        assert self.buffer_beta > 0.0, f"Target buffer ratio beta must be positive: {self.buffer_beta}"
        assert 0.0 < self.bonus_gamma < 1.0, f"Participation gamma must be in (0, 1): {self.bonus_gamma}"
        assert 0.0 < self.share_alpha < 1.0, f"Share alpha must be in (0, 1): {self.share_alpha}"
        assert self.portfolio_a0 > 0.0, f"Initial portfolio a0 must be positive: {self.portfolio_a0}"
        assert self.fee_p >= 0.0, f"Portfolio fee p must be non-negative: {self.fee_p}"
        assert self.fee_q >= 0.0, f"Reserve fee q must be non-negative: {self.fee_q}"

    def replace(self, **changes: Any) -> "PLPolicyParams":
        """
        Returns a validated copy with the given fields changed.

        :param changes: Field names and their new values.
        :return: The new parameter set.
        :rtype: PLPolicyParams
        """

        return dataclasses.replace(self, **changes)

    @property
    def has_fees(self) -> bool:
        return self.fee_p > 0.0 or self.fee_q > 0.0

    def to_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class PLFeeCaseReport:
    case: PLFeeCase
    discriminant: float
    roots: Optional[tuple[float, float]]
    root_residuals: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "case": self.case.name,
            "discriminant": self.discriminant,
            "roots": list(self.roots) if self.roots is not None else None,
            "root_residuals": self.root_residuals,
        }


@dataclass(frozen=True)
class PLThresholds:
    """
    Landmark levels of the BDR, all in log-ratio units.
    band_top is where the b2/b3 band above x_alpha ends: x_bar0 without fees,
    x_bar_q_gamma when only the reserve is charged, hat_x1 in CaseII and
    infinity in CaseI.
    """

    x_alpha: float
    x_bar0: float
    x_g: float
    x_bar_q: float
    x_bar_q_gamma: float
    fee_case: PLFeeCase
    hat_x1: Optional[float]
    hat_x2: Optional[float]
    regime: PLRegime
    band_top: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "x_alpha": self.x_alpha,
            "x_bar0": self.x_bar0,
            "x_g": self.x_g,
            "x_bar_q": self.x_bar_q,
            "x_bar_q_gamma": self.x_bar_q_gamma,
            "fee_case": self.fee_case.name,
            "hat_x1": self.hat_x1,
            "hat_x2": self.hat_x2,
            "regime": self.regime.name,
            "band_top": self.band_top,
        }


def _as_output(result: npt.NDArray[np.float64], x: FloatOrArray) -> FloatOrArray:
    if np.ndim(x) == 0:
        return float(result)

    return result


def x_alpha(params: PLPolicyParams) -> float:
    """
    Initial BDR of the contract, ln(1/alpha). It is also the activation
    threshold of the participation bonus in the intrinsic value.
    """

    return math.log(1.0 / params.share_alpha)


def drift_zero_point(params: PLPolicyParams) -> float:
    """
    Level where the drift pi vanishes. Above it the BDR mean-reverts downwards
    at rate delta.
    """

    return params.buffer_beta + (params.risk_free_r + 0.5 * params.volatility_sigma ** 2) / \
        params.participation_delta


def payoff_h(x: FloatOrArray, params: PLPolicyParams) -> FloatOrArray:
    """
    Gain function h(x) = e^{-x} + gamma [alpha - e^{-x}]^+, the intrinsic value
    in units of the portfolio. Convex, strictly decreasing, 1-Lipschitz with
    values in [alpha gamma, 1].

    :param x: BDR level(s), must be non-negative.
    :param params: The policy parameters.
    :return: The normalized payoff.
    :rtype: FloatOrArray
    """

    xa = np.asarray(x, dtype=np.float64)
    assert np.all(xa >= 0.0), f"Gain function is only defined for x >= 0: {x}"

    e = np.exp(-xa)
    result = e + params.bonus_gamma * np.maximum(params.share_alpha - e, 0.0)

    return _as_output(result, x)


def drift_pi(x: FloatOrArray, params: PLPolicyParams) -> FloatOrArray:
    """
    Drift of the BDR under the reduced measure:
    pi(x) = r - r_g + sigma^2/2 - [delta (x - beta) - r_g]^+.
    Constant up to x_g, then affine with slope -delta.
    """

    xa = np.asarray(x, dtype=np.float64)
    excess = np.maximum(params.participation_delta * (xa - params.buffer_beta) - params.guaranteed_rg, 0.0)
    result = params.risk_free_r - params.guaranteed_rg + 0.5 * params.volatility_sigma ** 2 - excess

    return _as_output(result, x)


def crediting_rate(a: FloatOrArray, reserve: FloatOrArray, params: PLPolicyParams) -> FloatOrArray:
    """
    Instantaneous interest rate credited to the reserve: the bonus rate
    delta (ln(a/reserve) - beta), floored at the guaranteed rate r_g.

    :param a: Value(s) of the reference portfolio, must be positive.
    :param reserve: Value(s) of the policy reserve, must be positive.
    :param params: The policy parameters.
    :return: The annual crediting rate.
    :rtype: FloatOrArray
    """

    aa = np.asarray(a, dtype=np.float64)
    ra = np.asarray(reserve, dtype=np.float64)
    assert np.all(aa > 0.0), f"Portfolio value must be positive: {a}"
    assert np.all(ra > 0.0), f"Reserve must be positive: {reserve}"

    bonus = params.participation_delta * (np.log(aa / ra) - params.buffer_beta)
    result = np.maximum(bonus, params.guaranteed_rg)

    return _as_output(result, a if np.ndim(a) > 0 else reserve)


def intrinsic_value(a: FloatOrArray, reserve: FloatOrArray, params: PLPolicyParams) -> FloatOrArray:
    """
    Amount paid on surrender, insolvency or maturity:
    reserve + gamma [alpha a - reserve]^+.
    """

    aa = np.asarray(a, dtype=np.float64)
    ra = np.asarray(reserve, dtype=np.float64)
    assert np.all(aa > 0.0), f"Portfolio value must be positive: {a}"
    assert np.all(ra >= 0.0), f"Reserve must be non-negative: {reserve}"

    result = ra + params.bonus_gamma * np.maximum(params.share_alpha * aa - ra, 0.0)

    return _as_output(result, a if np.ndim(a) > 0 else reserve)


def generator_H(x: FloatOrArray, params: PLPolicyParams) -> FloatOrArray:
    """
    The generator applied to the gain function, net of the fee rate:
    H(x) = e^{-x} (sigma^2/2 - q - pi(x)) - p for x <= x_alpha and
    (1 - gamma) e^{-x} (sigma^2/2 - q/(1 - gamma) - pi(x)) - p above it.
    Without fees it is positive exactly above x_bar0. The point x_alpha
    itself belongs to the left branch.
    """

    xa = np.asarray(x, dtype=np.float64)
    assert np.all(xa >= 0.0), f"Generator is only defined for x >= 0: {x}"

    gamma = params.bonus_gamma
    e = np.exp(-xa)
    base = 0.5 * params.volatility_sigma ** 2 - np.asarray(drift_pi(xa, params))
    left = e * (base - params.fee_q) - params.fee_p
    right = (1.0 - gamma) * e * (base - params.fee_q / (1.0 - gamma)) - params.fee_p
    result = np.where(xa <= x_alpha(params), left, right)

    return _as_output(result, x)


def running_cost(x: FloatOrArray, params: PLPolicyParams) -> FloatOrArray:
    """
    Fee rate in units of the portfolio: p + q e^{-x}.
    """

    xa = np.asarray(x, dtype=np.float64)
    assert np.all(xa >= 0.0), f"Running cost is only defined for x >= 0: {x}"

    result = params.fee_p + params.fee_q * np.exp(-xa)

    return _as_output(result, x)


def _bisect_root(f: Any, lo: float, hi: float, label: str) -> float:
    try:
        root = bisect(f, lo, hi, xtol=1e-13, maxiter=400)
    except ValueError as err:
        raise ArithmeticError(
            f"Bisection for {label} failed on [{lo}, {hi}]: f(lo)={f(lo)}, f(hi)={f(hi)}: {err}") from err

    return float(root)


def classify_fee_case(params: PLPolicyParams) -> PLFeeCaseReport:
    """
    Decides where the fee-adjusted generator is positive above x_bar_q_gamma.
    It is positive iff x - x_bar_q_gamma > (p/delta) (1 - gamma)^{-1} e^x. The gap
    function is concave with its maximum at x* = ln[delta (1 - gamma)/p], so
    there are two roots exactly when the discriminant x* - (1 + x_bar_q_gamma)
    is positive. The roots are found by bisection on [x_bar_q_gamma, x*] and on
    [x*, x* + K] with K doubled until the sign changes.

    :param params: The policy parameters.
    :return: The fee case, its discriminant and the roots in CaseII.
    :rtype: PLFeeCaseReport
    """

    if params.fee_p == 0.0:
        return PLFeeCaseReport(PLFeeCase.NoFeeBaseline, math.inf, None, 0.0)

    delta = params.participation_delta
    gamma = params.bonus_gamma
    bar_qg = params.buffer_beta + (params.risk_free_r + params.fee_q / (1.0 - gamma)) / delta
    slope = params.fee_p / (delta * (1.0 - gamma))
    x_star = math.log(delta * (1.0 - gamma) / params.fee_p)
    discriminant = x_star - (1.0 + bar_qg)

    logger.debug(f"Fee case discriminant: {discriminant}, x*: {x_star}")

    if discriminant <= 0.0:
        return PLFeeCaseReport(PLFeeCase.CaseI, discriminant, None, 0.0)

    if discriminant <= DEGENERATE_DISCRIMINANT:
        logger.warning(f"Degenerate fee case (discriminant {discriminant}), reported as CaseI.")
        return PLFeeCaseReport(PLFeeCase.CaseI, discriminant, None, 0.0)

    def gap(x: float) -> float:
        return x - bar_qg - slope * math.exp(x)

    hat_x1 = _bisect_root(gap, bar_qg, x_star, "hat_x1")

    width = 1.0
    while gap(x_star + width) >= 0.0:
        width *= 2.0
        if width > 1e6:
            raise ArithmeticError(f"No sign change above x*={x_star} for hat_x2, last width: {width}")

    hat_x2 = _bisect_root(gap, x_star, x_star + width, "hat_x2")
    residual = max(abs(gap(hat_x1)), abs(gap(hat_x2)))

    if residual > ROOT_TOLERANCE:
        raise ArithmeticError(f"Fee case roots ({hat_x1}, {hat_x2}) have residual {residual}")

    return PLFeeCaseReport(PLFeeCase.CaseII, discriminant, (hat_x1, hat_x2), residual)


def derive_thresholds(params: PLPolicyParams) -> PLThresholds:
    """
    Computes every landmark level of the BDR for the given parameters.

    :param params: The policy parameters.
    :return: x_alpha, x_bar0, x_g, the fee thresholds and the fee case.
    :rtype: PLThresholds
    """

    delta = params.participation_delta
    beta = params.buffer_beta
    xa = x_alpha(params)
    x_bar0 = beta + params.risk_free_r / delta
    x_g = beta + params.guaranteed_rg / delta
    x_bar_q = beta + (params.risk_free_r + params.fee_q) / delta
    x_bar_q_gamma = beta + (params.risk_free_r + params.fee_q / (1.0 - params.bonus_gamma)) / delta

    report = classify_fee_case(params)
    hat_x1, hat_x2 = report.roots if report.roots is not None else (None, None)

    if params.has_fees:
        regime = PLRegime.A if xa >= x_bar_q else PLRegime.B
    else:
        regime = PLRegime.A if xa >= x_bar0 else PLRegime.B

    match report.case:
        case PLFeeCase.NoFeeBaseline:
            band_top = x_bar_q_gamma
        case PLFeeCase.CaseI:
            band_top = math.inf
        case PLFeeCase.CaseII:
            assert hat_x1 is not None
            band_top = hat_x1

    return PLThresholds(xa, x_bar0, x_g, x_bar_q, x_bar_q_gamma, report.case, hat_x1, hat_x2,
                        regime, band_top)
