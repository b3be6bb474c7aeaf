# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

"""
This module contains the lattice valuation of the contract.

The BDR is approximated by a recombining binomial walk with space step
dx = sigma * sqrt(dt) whose up probability absorbs the drift. Two solvers share
that walk:
    - price_cone: the tree rooted at x_alpha, used for the headline prices.
    - solve_grid: backward induction on the full rectangle of time layers and
      space levels, used to map the stopping region.

Values are in units of the initial portfolio a0. Once the BDR reaches zero the
contract is terminated and pays the reserve, so every level <= 0 has value 1.
"""

# Python std modules:
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Optional
import logging
import math

# External modules:
import numpy as np
import numpy.typing as npt

# Local modules:
from ppsolab.pl_model import PLPolicyParams, PLFeeCase, PLThresholds, FloatOrArray, \
    derive_thresholds, drift_pi, drift_zero_point, payoff_h, running_cost

logger = logging.getLogger(__name__)

# Relative tolerance for the exercise decision: ties count as stopped.
TIE_TOLERANCE: float = 1e-12


@dataclass(frozen=True)
class PLLatticeSpec:
    """
    Discretisation of the binomial walk. The lattice is {x0 + m * dx}.
    x_max is only used by the rectangular grid.
    """

    n_steps: int
    dt: float
    dx: float
    x0: float
    x_max: Optional[float] = None

    def __post_init__(self):
        assert self.n_steps >= 1, f"Number of time steps must be at least 1: {self.n_steps}"
        assert self.dt > 0.0, f"Time step must be positive: {self.dt}"
        assert self.dx > 0.0, f"Space step must be positive: {self.dx}"
        assert self.x0 >= 0.0, f"Root level must be non-negative: {self.x0}"
        if self.x_max is not None:
            assert self.x_max > self.x0, f"Upper level x_max must be above the root: {self.x_max} <= {self.x0}"

    def to_dict(self) -> dict[str, Any]:
        return {"n_steps": self.n_steps, "dt": self.dt, "dx": self.dx, "x0": self.x0, "x_max": self.x_max}


@dataclass(frozen=True)
class PLValuation:
    """
    Prices of the contract from the root level. v0, v0_european and premium
    are normalized by a0, the price_* fields are in currency.
    """

    v0: float
    v0_european: float
    premium: float
    price_V0: float
    price_V0E: float
    price_Vopt: float
    n_steps: int
    spec: PLLatticeSpec

    def to_dict(self) -> dict[str, Any]:
        return {
            "v0": self.v0,
            "v0_european": self.v0_european,
            "premium": self.premium,
            "price_V0": self.price_V0,
            "price_V0E": self.price_V0E,
            "price_Vopt": self.price_Vopt,
            "n_steps": self.n_steps,
            "spec": self.spec.to_dict(),
        }


@dataclass(frozen=True)
class PLGridSolution:
    """
    Value function on the rectangle of time layers n = 0..N and space levels
    k = 0..K. Level 0 is the absorbed row. All arrays are read only.
    """

    params: PLPolicyParams
    spec: PLLatticeSpec
    levels: npt.NDArray[np.float64]
    values: npt.NDArray[np.float64]
    stopped: npt.NDArray[np.bool_]
    european_values: npt.NDArray[np.float64]

    @property
    def n_steps(self) -> int:
        return self.spec.n_steps

    @property
    def times(self) -> npt.NDArray[np.float64]:
        result = np.arange(self.spec.n_steps + 1, dtype=np.float64) * self.spec.dt
        result[-1] = self.params.maturity_T
        return result

    @property
    def coords(self) -> npt.NDArray[np.float64]:
        """
        Level coordinates with the absorbed level clipped to 0.
        """

        return np.maximum(self.levels, 0.0)

    def level_index(self, x: float) -> int:
        """
        Returns the index of the level nearest to x.
        """

        k = int(round((x - self.levels[0]) / self.spec.dx))
        return min(max(k, 0), len(self.levels) - 1)


def up_probability(x: FloatOrArray, params: PLPolicyParams, dt: float) -> FloatOrArray:
    """
    Probability of the up move at level x: 1/2 + sqrt(dt) pi(x) / (2 sigma),
    clamped to [0, 1]. The two moves then match the local mean of the BDR.

    :param x: Level(s) of the BDR.
    :param params: The policy parameters.
    :param dt: Time step in years.
    :return: The up probability.
    :rtype: FloatOrArray
    """

    assert dt > 0.0, f"Time step must be positive: {dt}"

    raw = 0.5 + math.sqrt(dt) * np.asarray(drift_pi(x, params)) / (2.0 * params.volatility_sigma)
    result = np.clip(raw, 0.0, 1.0)

    if np.ndim(x) == 0:
        return float(result)

    return result


def make_cone_spec(params: PLPolicyParams, n_steps: int, x0: Optional[float] = None) -> PLLatticeSpec:
    assert n_steps >= 1, f"Number of time steps must be at least 1: {n_steps}"

    dt = params.maturity_T / n_steps
    dx = params.volatility_sigma * math.sqrt(dt)
    root = derive_thresholds(params).x_alpha if x0 is None else x0

    return PLLatticeSpec(n_steps, dt, dx, root)


def required_x_max(params: PLPolicyParams, thresholds: Optional[PLThresholds] = None) -> float:
    """
    Smallest upper level for the rectangular grid: six standard deviations of
    the free walk above the highest landmark. In fee CaseII the grid must also
    cover the levels from which the band (hat_x1, hat_x2) is out of reach
    before maturity.
    """

    if thresholds is None:
        thresholds = derive_thresholds(params)

    top = max(thresholds.x_alpha, thresholds.x_bar0)
    if params.has_fees:
        top = max(top, thresholds.x_bar_q_gamma)

    if thresholds.fee_case == PLFeeCase.CaseII:
        assert thresholds.hat_x2 is not None
        x_eq = drift_zero_point(params)
        reach = x_eq + (thresholds.hat_x2 - x_eq) * math.exp(params.participation_delta * params.maturity_T)
        top = max(top, reach)

    return top + 6.0 * params.volatility_sigma * math.sqrt(params.maturity_T)


def default_lattice_spec(params: PLPolicyParams, n_steps: int, x_max: Optional[float] = None,
        x0: Optional[float] = None) -> PLLatticeSpec:
    """
    Builds a grid spec rooted at x0 (default x_alpha) with x_max rounded up to
    a lattice level.

    :param params: The policy parameters.
    :param n_steps: Number of time layers.
    :param x_max: Requested upper level, defaults to the required minimum.
    :param x0: Lattice anchor, defaults to x_alpha.
    :return: A valid grid spec.
    :rtype: PLLatticeSpec
    """

    cone = make_cone_spec(params, n_steps, x0)
    minimum = required_x_max(params)

    if x_max is None:
        x_max = minimum

    assert x_max >= minimum, f"Upper level x_max must be at least {minimum}: {x_max}"

    n_up = math.ceil((x_max - cone.x0) / cone.dx - 1e-9)
    top = cone.x0 + n_up * cone.dx

    return PLLatticeSpec(cone.n_steps, cone.dt, cone.dx, cone.x0, top)


def _check_coupling(params: PLPolicyParams, spec: PLLatticeSpec):
    assert math.isclose(spec.dt * spec.n_steps, params.maturity_T, rel_tol=1e-12), \
        f"Time step does not match the maturity: {spec.dt} * {spec.n_steps} != {params.maturity_T}"
    assert math.isclose(spec.dx, params.volatility_sigma * math.sqrt(spec.dt), rel_tol=1e-12), \
        f"Space step must be sigma * sqrt(dt): {spec.dx}"


def price_cone(params: PLPolicyParams, n_steps: int, x0: Optional[float] = None) -> PLValuation:
    """
    Prices the contract on the recombining tree with nodes x0 + (2j - n) dx.
    The American value is max{h, continuation}, the European value keeps the
    continuation. Fees are charged at the node level for one time step.

    :param params: The policy parameters.
    :param n_steps: Number of time steps, at least 1.
    :param x0: Root level, defaults to x_alpha.
    :return: Normalized values and currency prices.
    :rtype: PLValuation
    """

    spec = make_cone_spec(params, n_steps, x0)
    n = spec.n_steps
    dt = spec.dt
    dx = spec.dx

    logger.debug(f"Cone tree: n_steps={n}, dt={dt}, dx={dx}, x0={spec.x0}")

    x = spec.x0 + (2.0 * np.arange(n + 1) - n) * dx
    american = np.asarray(payoff_h(np.maximum(x, 0.0), params))
    american[x <= 0.0] = 1.0
    european = american.copy()

    for layer in range(n - 1, -1, -1):
        x = spec.x0 + (2.0 * np.arange(layer + 1) - layer) * dx
        absorbed = x <= 0.0
        xc = np.maximum(x, 0.0)

        p_up = np.asarray(up_probability(xc, params, dt))
        fee = np.asarray(running_cost(xc, params)) * dt
        h = np.asarray(payoff_h(xc, params))

        cont = p_up * american[1:] + (1.0 - p_up) * american[:-1] - fee
        cont_e = p_up * european[1:] + (1.0 - p_up) * european[:-1] - fee

        american = np.where(absorbed, 1.0, np.maximum(h, cont))
        european = np.where(absorbed, 1.0, cont_e)

    v0 = float(american[0])
    v0e = float(european[0])
    a0 = params.portfolio_a0

    return PLValuation(v0, v0e, v0 - v0e, a0 * v0, a0 * v0e, a0 * (v0 - v0e), n, spec)


def _grid_levels(spec: PLLatticeSpec) -> npt.NDArray[np.float64]:
    assert spec.x_max is not None, "Grid spec needs an upper level x_max"

    k0 = math.ceil(spec.x0 / spec.dx)
    if spec.x0 - k0 * spec.dx > 0.0:
        k0 += 1

    n_up = math.ceil((spec.x_max - spec.x0) / spec.dx - 1e-9)
    k = np.arange(k0 + n_up + 1, dtype=np.float64)

    return spec.x0 + (k - k0) * spec.dx


def solve_grid(params: PLPolicyParams, spec: PLLatticeSpec) -> PLGridSolution:
    """
    Backward induction on the rectangle [0, N] x [0, K].
    The rows at or below zero are fixed at 1. The top row is closed by
    reflection: its up move stays on the top row. A node is stopped when the
    continuation exceeds h by at most the tie tolerance. The European values
    are computed in the same pass.

    :param params: The policy parameters.
    :param spec: A grid spec, see default_lattice_spec.
    :return: The value, stopping and European matrices.
    :rtype: PLGridSolution
    """

    _check_coupling(params, spec)
    assert spec.x_max is not None, "Grid spec needs an upper level x_max"

    minimum = required_x_max(params)
    assert spec.x_max >= minimum - 1e-9, f"Upper level x_max must be at least {minimum}: {spec.x_max}"

    start_time = datetime.now()

    levels = _grid_levels(spec)
    n = spec.n_steps
    dt = spec.dt
    absorbed = levels <= 0.0
    xc = np.maximum(levels, 0.0)

    h = np.asarray(payoff_h(xc, params))
    p_up = np.asarray(up_probability(xc, params, dt))
    fee = np.asarray(running_cost(xc, params)) * dt
    tie = TIE_TOLERANCE * np.maximum(1.0, h)

    logger.info(f"Solve grid: {n} time steps, {len(levels)} levels, x_max={levels[-1]:.4f}")

    values = np.empty((n + 1, len(levels)), dtype=np.float64)
    european = np.empty_like(values)
    stopped = np.zeros(values.shape, dtype=np.bool_)

    values[n] = np.where(absorbed, 1.0, h)
    european[n] = values[n]
    stopped[n] = True

    up = np.empty(len(levels), dtype=np.float64)
    down = np.empty(len(levels), dtype=np.float64)

    for layer in range(n - 1, -1, -1):
        nxt = values[layer + 1]
        up[:-1] = nxt[1:]
        up[-1] = nxt[-1]
        down[1:] = nxt[:-1]
        down[0] = nxt[0]
        cont = p_up * up + (1.0 - p_up) * down - fee

        values[layer] = np.where(absorbed, 1.0, np.maximum(h, cont))
        stopped[layer] = absorbed | (cont - h <= tie)

        nxt = european[layer + 1]
        up[:-1] = nxt[1:]
        up[-1] = nxt[-1]
        down[1:] = nxt[:-1]
        down[0] = nxt[0]
        european[layer] = np.where(absorbed, 1.0, p_up * up + (1.0 - p_up) * down - fee)

    for array in (levels, values, stopped, european):
        array.flags.writeable = False

    time_taken = (datetime.now() - start_time).total_seconds()
    logger.info(f"Grid solved, time taken: {time_taken:.2f} seconds")

    return PLGridSolution(params, spec, levels, values, stopped, european)


def value_at(solution: PLGridSolution, t: float, x: float) -> float:
    """
    Bilinear interpolation of the grid values. The absorbed level is placed
    at x = 0, so value_at(solution, t, 0) is 1.

    :param solution: A solved grid.
    :param t: Time in years, 0 <= t <= T.
    :param x: Level, 0 <= x <= x_max.
    :return: The normalized value.
    :rtype: float
    """

    maturity = solution.params.maturity_T
    coords = solution.coords

    assert 0.0 <= t <= maturity, f"Time must be in [0, {maturity}]: {t}"
    assert 0.0 <= x <= coords[-1], f"Level must be in [0, {coords[-1]}]: {x}"

    n_float = t / solution.spec.dt
    if abs(n_float - round(n_float)) < 1e-9:
        n_float = float(round(n_float))

    n_lo = min(int(math.floor(n_float)), solution.n_steps)
    n_hi = min(n_lo + 1, solution.n_steps)
    weight = n_float - n_lo

    v_lo = float(np.interp(x, coords, solution.values[n_lo]))
    if weight == 0.0:
        return v_lo

    v_hi = float(np.interp(x, coords, solution.values[n_hi]))

    return (1.0 - weight) * v_lo + weight * v_hi
