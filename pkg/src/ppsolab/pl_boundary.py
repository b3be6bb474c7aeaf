# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

"""
This module reads the optimal surrender boundary off a solved grid.

The stopping region is described in two ways:
    - c(x): the first time at which level x is in the stopping set.
    - b1(t), b2(t), b3(t): the stop-loss boundary below x_alpha and the band
      [b2, b3] above it (regime B only). The holder surrenders when the BDR
      is at or below b1 or inside the band.

validate_shape checks the geometry of the extracted curves and returns a
report instead of raising.
"""

# Python std modules:
from dataclasses import dataclass, field
from typing import Any, Optional
import dataclasses
import logging
import math

# External modules:
import numpy as np
import numpy.typing as npt
import pandas as pd

# Local modules:
from ppsolab.pl_engine import PLGridSolution
from ppsolab.pl_model import PLFeeCase, PLRegime, PLThresholds, derive_thresholds, payoff_h

logger = logging.getLogger(__name__)

# Default tolerance for landmark comparisons, in grid cells.
LANDMARK_CELLS: float = 2.0

type PLCurve = list[tuple[float, float]]


@dataclass(frozen=True)
class PLBoundaryCurves:
    """
    Boundary samples of one grid run. c_samples holds (x, c(x)) pairs with c
    in years; b1, b2 and b3 hold (t, x) pairs. b2 and b3 are empty in regime A
    and at layers where the band above x_alpha is not stopped.
    """

    regime: PLRegime
    n_steps: int
    dt: float
    dx: float
    maturity_T: float
    c_samples: PLCurve
    t0: float
    b1: PLCurve = field(default_factory=list)
    b2: PLCurve = field(default_factory=list)
    b3: PLCurve = field(default_factory=list)
    hat_c: Optional[float] = None
    x1: Optional[float] = None
    x2: Optional[float] = None
    x3: Optional[float] = None
    hat_x3: Optional[float] = None

    def landmarks(self) -> dict[str, Any]:
        result: dict[str, Any] = {
            "t0": self.t0,
            "hat_c": self.hat_c,
            "x1": self.x1,
            "x2": self.x2,
            "x3": self.x3,
            "hat_x3": self.hat_x3,
            "regime": self.regime.name,
        }

        notes = []
        if not self.b2:
            notes.append("b2 is empty")
        if not self.b3:
            notes.append("b3 is empty")
        result["notes"] = notes

        return result


@dataclass(frozen=True)
class PLShapeCheck:
    name: str
    passed: bool
    measured: float
    tolerance: float
    advisory: bool = False

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class PLShapeReport:
    regime: PLRegime
    checks: list[PLShapeCheck]

    @property
    def summary(self) -> bool:
        """
        True if every non advisory check passed.
        """

        return all(check.passed for check in self.checks if not check.advisory)

    def failures(self) -> list[str]:
        return [check.name for check in self.checks if not check.advisory and not check.passed]

    def check(self, name: str) -> PLShapeCheck:
        for entry in self.checks:
            if entry.name == name:
                return entry

        raise KeyError(f"No shape check named: {name}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "regime": self.regime.name,
            "summary": self.summary,
            "checks": [check.to_dict() for check in self.checks],
            "failures": self.failures(),
        }


def extract_c(solution: PLGridSolution) -> PLBoundaryCurves:
    """
    For every level x_k the first stopped time layer gives c(x_k) = n dt.
    The last layer always counts as stopped, so c(x_k) = T if the level is
    never stopped earlier. No monotone structure is imposed.

    :param solution: A solved grid.
    :return: Curves with c_samples, t0 and the regime populated.
    :rtype: PLBoundaryCurves
    """

    first = np.argmax(solution.stopped, axis=0)
    c = solution.times[first]
    coords = solution.coords
    samples = [(float(x), float(t)) for x, t in zip(coords, c)]
    t0 = float(c[1]) if len(c) > 1 else 0.0
    regime = derive_thresholds(solution.params).regime

    logger.debug(f"Extracted c(x) on {len(samples)} levels, t0={t0}")

    return PLBoundaryCurves(regime, solution.n_steps, solution.spec.dt, solution.spec.dx,
                            solution.params.maturity_T, samples, t0)


def _b1_index(row: npt.NDArray[np.bool_], limit: int) -> int:
    # Top of the run of stopped levels that starts at the absorbed level.
    open_levels = np.flatnonzero(~row[:limit + 1])
    if len(open_levels) == 0:
        return limit

    return int(open_levels[0]) - 1


def extract_time_boundaries(curves: PLBoundaryCurves, solution: PLGridSolution,
        thresholds: PLThresholds) -> PLBoundaryCurves:
    """
    Classifies the stopped levels of every layer t_n < T into the component
    touching level 0 (giving b1) and, in regime B, the component inside
    (x_alpha, band_top] (giving b2 at its bottom and b3 at its top). Also
    locates the landmarks x1, x2, x3, hat_c and hat_x3.

    :param curves: Output of extract_c.
    :param solution: The solved grid.
    :param thresholds: Thresholds of the grid parameters.
    :return: A copy of curves with boundaries and landmarks populated.
    :rtype: PLBoundaryCurves
    """

    assert curves.c_samples, "Curves need c samples, run extract_c first"

    coords = solution.coords
    times = solution.times
    stopped = solution.stopped
    dx = solution.spec.dx
    regime = thresholds.regime
    xa = thresholds.x_alpha

    below_alpha = np.flatnonzero(coords < xa)
    b1_limit = int(below_alpha[-1]) if regime == PLRegime.B and len(below_alpha) > 0 else len(coords) - 1
    band = (coords > xa) & (coords <= thresholds.band_top + LANDMARK_CELLS * dx)

    b1: list[tuple[float, float]] = []
    b2: list[tuple[float, float]] = []
    b3: list[tuple[float, float]] = []

    for n in range(solution.n_steps):
        row = stopped[n]
        t = float(times[n])
        b1.append((t, float(coords[_b1_index(row, b1_limit)])))

        if regime == PLRegime.B:
            inside = np.flatnonzero(row & band)
            if len(inside) > 0:
                b2.append((t, float(coords[inside[0]])))
                b3.append((t, float(coords[inside[-1]])))

    if regime == PLRegime.B and not b2:
        logger.warning("No stopped levels above x_alpha before maturity, b2 and b3 are empty.")

    c = np.array([sample[1] for sample in curves.c_samples])
    half_step = 0.5 * solution.spec.dt

    zero_run = _b1_index(c <= half_step, len(c) - 1)
    x1: Optional[float] = float(coords[zero_run]) if coords[zero_run] < xa else None

    hat_c: Optional[float] = None
    x2: Optional[float] = None
    x3: Optional[float] = None
    if regime == PLRegime.B:
        above = np.flatnonzero((coords > xa) & (coords < thresholds.band_top))
        if len(above) > 0:
            c_min = float(c[above].min())
            argmin = above[c[above] <= c_min + half_step]
            hat_c = c_min
            x2 = float(coords[argmin[0]])
            x3 = float(coords[argmin[-1]])

    hat_x3: Optional[float] = None
    if thresholds.fee_case == PLFeeCase.CaseII:
        assert thresholds.hat_x2 is not None
        candidates = np.flatnonzero((coords > thresholds.hat_x2) & (c <= half_step))
        if len(candidates) > 0:
            hat_x3 = float(coords[candidates[0]])

    logger.info(f"Boundaries extracted: regime {regime.name}, {len(b2)} band layers, x1={x1}, hat_c={hat_c}")

    return dataclasses.replace(curves, regime=regime, b1=b1, b2=b2, b3=b3, hat_c=hat_c,
                               x1=x1, x2=x2, x3=x3, hat_x3=hat_x3)


def _max_decrease(values: npt.NDArray[np.float64]) -> float:
    if len(values) < 2:
        return 0.0

    return float(max(0.0, np.max(values[:-1] - values[1:])))


def _longest_flat_run(values: npt.NDArray[np.float64]) -> int:
    longest = 0
    current = 0
    for i in range(1, len(values)):
        if values[i] == values[i - 1] and values[i] > 0.0:
            current += 1
            longest = max(longest, current)
        else:
            current = 0

    return longest + 1 if longest > 0 else 0


def _terminal_check(name: str, curve: PLCurve, target: float, tolerance: float) -> PLShapeCheck:
    if not curve:
        return PLShapeCheck(name, False, math.inf, tolerance)

    distance = abs(curve[-1][1] - target)
    return PLShapeCheck(name, distance <= tolerance, distance, tolerance)


def _near_any(x: float, marks: list[Optional[float]], width: float) -> bool:
    return any(mark is not None and abs(x - mark) <= width for mark in marks)


def _solution_checks(curves: PLBoundaryCurves, thresholds: PLThresholds,
        solution: PLGridSolution) -> list[PLShapeCheck]:
    stopped = solution.stopped
    coords = solution.coords
    dx = solution.spec.dx
    n = solution.n_steps

    upset_breaks = int(np.count_nonzero(stopped[:-1] & ~stopped[1:]))
    checks = [PLShapeCheck("stopped_set_is_upset", upset_breaks == 0, float(upset_breaks), 0.0)]

    top = thresholds.band_top + LANDMARK_CELLS * dx
    region = coords <= top
    if thresholds.regime == PLRegime.B:
        rows = stopped[:n, region].astype(np.int8)
        starts = np.count_nonzero(np.diff(rows, axis=1) == 1, axis=1) + rows[:, 0]
        most = int(starts.max()) if len(starts) > 0 else 0
        checks.append(PLShapeCheck("at_most_two_components", most <= 2, float(most), 2.0))
    else:
        checks.append(PLShapeCheck("at_most_two_components", True, 0.0, 2.0))

    # Rebuild the stopped set from the curves and compare below the band top.
    b1 = dict(curves.b1)
    b2 = dict(curves.b2)
    b3 = dict(curves.b3)
    outside = 0
    for layer in range(n):
        t = float(solution.times[layer])
        rebuilt = coords <= b1.get(t, 0.0) + 1e-12
        edges = [b1.get(t, 0.0)]
        if t in b2:
            rebuilt |= (coords >= b2[t] - 1e-12) & (coords <= b3[t] + 1e-12)
            edges.extend([b2[t], b3[t]])

        mismatch = np.flatnonzero((rebuilt != stopped[layer]) & region)
        for k in mismatch:
            if min(abs(coords[k] - edge) for edge in edges) > dx * (1.0 + 1e-9):
                outside += 1

    checks.append(PLShapeCheck("inversion_consistency", outside == 0, float(outside), 0.0))

    # Smooth fit: one-sided slopes of v and h just above b1, at ten sampled layers.
    h = np.asarray(payoff_h(coords, solution.params))
    gap = 0.0
    for layer in np.linspace(0, n - 1, num=min(10, n), dtype=int):
        k = solution.level_index(curves.b1[layer][1])
        if 0 < k < len(coords) - 1:
            slope_v = (solution.values[layer, k + 1] - solution.values[layer, k]) / dx
            slope_h = (h[k + 1] - h[k]) / dx
            gap = max(gap, abs(float(slope_v - slope_h)))

    checks.append(PLShapeCheck("smooth_fit_gap", True, gap, math.inf, advisory=True))

    return checks


def validate_shape(curves: PLBoundaryCurves, thresholds: PLThresholds, fee_case: PLFeeCase,
        solution: Optional[PLGridSolution] = None, landmark_cells: float = LANDMARK_CELLS,
        continuity_tol: Optional[float] = None) -> PLShapeReport:
    """
    Checks the extracted boundaries against the known shape of the stopping
    region. Failures are report entries, never exceptions. Checks that need
    the full stopping matrix only run when the solution is given.

    :param curves: Fully populated curves, see extract_time_boundaries.
    :param thresholds: Thresholds of the grid parameters.
    :param fee_case: Fee case of the grid parameters.
    :param solution: Optional solved grid for the matrix based checks.
    :param landmark_cells: Landmark tolerance in grid cells.
    :param continuity_tol: Largest allowed jump of c between adjacent levels,
        defaults to 10 dt (1 + 1/dx).
    :return: The named checks and their summary.
    :rtype: PLShapeReport
    """

    dx = curves.dx
    dt = curves.dt
    tol = landmark_cells * dx
    p_zero = fee_case == PLFeeCase.NoFeeBaseline
    q_positive = thresholds.x_bar_q > thresholds.x_bar0
    regime = curves.regime

    if continuity_tol is None:
        continuity_tol = 10.0 * dt * (1.0 + 1.0 / dx)

    checks: list[PLShapeCheck] = []

    b1_x = np.array([x for _, x in curves.b1])
    b1_t = np.array([t for t, _ in curves.b1])
    decrease = _max_decrease(b1_x)
    checks.append(PLShapeCheck("b1_nondecreasing", decrease <= 1e-12, decrease, 0.0))

    after_t0 = b1_x[b1_t >= curves.t0] if len(b1_x) > 0 else b1_x
    rise = float(after_t0.max() - after_t0.min()) if len(after_t0) > 0 else 0.0
    checks.append(PLShapeCheck("b1_strict_rise", rise > 0.0, rise, 0.0))

    if regime == PLRegime.B:
        b2_x = np.array([x for _, x in curves.b2])
        b3_x = np.array([x for _, x in curves.b3])
        increase = _max_decrease(-b2_x)
        checks.append(PLShapeCheck("b2_nonincreasing", increase <= 1e-12, increase, 0.0))
        decrease = _max_decrease(b3_x)
        checks.append(PLShapeCheck("b3_nondecreasing", decrease <= 1e-12, decrease, 0.0))

        b1_at = dict(curves.b1)
        overlap = 0.0
        for (t, x2), (_, x3) in zip(curves.b2, curves.b3):
            overlap = max(overlap, b1_at[t] - x2, x2 - x3)
        checks.append(PLShapeCheck("ordering_b1_b2_b3", overlap <= 0.0, overlap, 0.0))

        checks.append(_terminal_check("b1_terminal_limit", curves.b1, thresholds.x_alpha, tol))
        checks.append(_terminal_check("b2_terminal_limit", curves.b2, thresholds.x_alpha, tol))
        if math.isfinite(thresholds.band_top):
            checks.append(_terminal_check("b3_terminal_limit", curves.b3, thresholds.band_top, tol))
    else:
        checks.append(PLShapeCheck("b2_nonincreasing", True, 0.0, 0.0))
        checks.append(PLShapeCheck("b3_nondecreasing", True, 0.0, 0.0))
        checks.append(PLShapeCheck("ordering_b1_b2_b3", True, 0.0, 0.0))
        if p_zero:
            target = thresholds.x_bar_q if q_positive else thresholds.x_bar0
            checks.append(_terminal_check("b1_terminal_limit", curves.b1, target, tol))

    xs = np.array([x for x, _ in curves.c_samples])
    c = np.array([t for _, t in curves.c_samples])

    if p_zero:
        high = xs > thresholds.x_bar_q_gamma + tol
        shortfall = float((curves.maturity_T - c[high]).max()) if np.any(high) else 0.0
        checks.append(PLShapeCheck("c_equals_T_above_bar", shortfall <= 0.5 * dt, shortfall, 0.5 * dt))

    marks = [curves.x1, curves.x2, curves.x3, curves.hat_x3]
    jump = 0.0
    for k in range(1, len(xs) - 1):
        if _near_any(xs[k], marks, tol) or _near_any(xs[k + 1], marks, tol):
            continue
        jump = max(jump, abs(float(c[k + 1] - c[k])))
    checks.append(PLShapeCheck("c_bounded_jumps", jump <= continuity_tol, jump, continuity_tol))

    if fee_case == PLFeeCase.CaseII:
        if curves.hat_x3 is None:
            checks.append(PLShapeCheck("c_zero_above_hat_x3", False, math.inf, 0.5 * dt))
        else:
            far = xs >= curves.hat_x3 + tol
            worst = float(c[far].max()) if np.any(far) else 0.0
            checks.append(PLShapeCheck("c_zero_above_hat_x3", worst <= 0.5 * dt, worst, 0.5 * dt))

    if regime == PLRegime.B and curves.x2 is not None and curves.x3 is not None:
        assert curves.hat_c is not None
        wide = curves.x3 - curves.x2 > tol
        measured = curves.hat_c if wide else 0.0
        checks.append(PLShapeCheck("argmin_degeneracy", measured <= dt * (1.0 + 1e-9), measured, dt,
                                   advisory=True))

    if solution is not None:
        checks.extend(_solution_checks(curves, thresholds, solution))

    # b1 moves in whole cells of dx = sigma sqrt(dt), so runs grow like sqrt(N).
    flat = _longest_flat_run(b1_x)
    flat_tol = max(3.0, curves.n_steps / 200.0)
    checks.append(PLShapeCheck("b1_flat_run", flat <= flat_tol, float(flat), flat_tol, advisory=True))

    report = PLShapeReport(regime, checks)
    for name in report.failures():
        logger.error(f"Shape check failed: {name}")

    return report


def curves_to_frame(curves: PLBoundaryCurves) -> pd.DataFrame:
    """
    Flattens the curves into rows of (kind, t_years, x). For kind c the time
    column holds c(x).
    """

    rows: list[tuple[str, float, float]] = [("c", t, x) for x, t in curves.c_samples]
    for kind, curve in (("b1", curves.b1), ("b2", curves.b2), ("b3", curves.b3)):
        rows.extend((kind, t, x) for t, x in curve)

    return pd.DataFrame(rows, columns=["kind", "t_years", "x"])
