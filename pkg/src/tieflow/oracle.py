"""Brute-force verification tools.

The grid search is the independent optimality oracle for the schedulers:
it evaluates the sample-average system cost over a dense interchange grid
(with the same scenario set, so both walk the same estimated objective)
and reports the argmin.  The envelope check compares finite differences of
the dispatch value function against the proxy prices, and the convexity
probe hammers midpoint convexity along random segments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .dispatch import (FLAG_OK, AreaDispatcher, DispatchInfeasibleError,
                       build_dispatchers)
from .netmodel import Area, CaseSystem, ShiftFactors, project_interchange
from .qpsolve import DEGENERACY_NONE, detect_degeneracy, solve_qp
from .stochastic import EstimateUnreliableError, ScenarioSet, expected_cost


class GridInfeasibleError(Exception):
    """Every grid point was infeasible or untrustworthy."""


class GridDimensionError(Exception):
    """Exhaustive search is limited to two free interchange axes."""


class DegeneratePointError(Exception):
    """The envelope identity is undefined at a degenerate dispatch point."""


@dataclass(frozen=True)
class GridSpec:
    """Per-interface (low, high) ranges plus a shared step in MW.

    A range may be degenerate (low == high) to pin that interface, which is
    how coordinate slices through a higher-dimensional interchange space
    are expressed.
    """

    ranges: tuple
    step: float = 1.0

    @classmethod
    def from_case(cls, case: CaseSystem, step: float = 1.0) -> "GridSpec":
        return cls(ranges=tuple((f.lower_bound, f.capacity) for f in case.interfaces),
                   step=step)

    def axis(self, i: int) -> np.ndarray:
        lo, hi = self.ranges[i]
        if hi < lo:
            raise ValueError(f"grid range {i} is empty: ({lo}, {hi})")
        n = int(np.floor((hi - lo) / self.step + 1e-9)) + 1
        return lo + self.step * np.arange(n)

    def axes(self) -> tuple:
        return tuple(self.axis(i) for i in range(len(self.ranges)))


@dataclass
class CostMap:
    grid: GridSpec
    axes: tuple                 # axis values per interface
    values: np.ndarray          # expected cost, +inf where infeasible
    infeasible: np.ndarray      # bool mask
    argmin_q: np.ndarray
    argmin_value: float

    def rows(self):
        """Iterate (q_1, ..., q_I, cost) across the grid in C order."""
        for idx in np.ndindex(self.values.shape):
            yield tuple(self.axes[d][idx[d]] for d in range(len(self.axes))) \
                + (float(self.values[idx]),)


def grid_search(case: CaseSystem, shift_factors: Mapping[str, ShiftFactors],
                scenarios: ScenarioSet, grid: GridSpec,
                dispatchers: Optional[Mapping[str, AreaDispatcher]] = None) -> CostMap:
    """Expected cost at every grid point; argmin ties go to the
    lexicographically smallest point.

    The cost decomposes over areas and each area's value depends only on
    its own interfaces, so the evaluation loops per-area sub-grids instead
    of the full product; results are identical to evaluating expected_cost
    point by point.  Points where any sample is excluded are re-evaluated
    through expected_cost directly, and marked infeasible (cost +inf) when
    even that is untrustworthy.
    """
    if len(grid.ranges) != case.num_interfaces:
        raise ValueError("grid spec does not match the number of interfaces")
    axes = grid.axes()
    free = sum(1 for ax in axes if len(ax) > 1)
    if free > 2:
        raise GridDimensionError(
            f"{free} free axes; pin all but two interfaces to use the grid oracle")
    if dispatchers is None:
        dispatchers = build_dispatchers(case, shift_factors)

    shape = tuple(len(ax) for ax in axes)
    values = np.zeros(shape)
    dirty = np.zeros(shape, dtype=bool)
    for a in case.areas:
        dims = [iid - 1 for iid, _sign in a.interfaces]
        signs = [sign for _iid, sign in a.interfaces]
        sub_axes = [axes[d] for d in dims]
        sub_shape = tuple(len(ax) for ax in sub_axes)
        means = np.zeros(sub_shape)
        flagged = np.zeros(sub_shape, dtype=bool)
        loads = scenarios.area_loads[a.id]
        disp = dispatchers[a.id]
        for combo in np.ndindex(sub_shape):
            q_n = np.array([signs[j] * sub_axes[j][combo[j]] for j in range(len(dims))])
            batch = disp.solve_many(q_n, loads)
            if np.all(batch.flags == FLAG_OK):
                means[combo] = batch.costs.mean()
            else:
                flagged[combo] = True
        bshape = tuple(shape[d] if d in dims else 1 for d in range(len(shape)))
        values = values + means.reshape(bshape)
        dirty = dirty | flagged.reshape(bshape)

    infeasible = np.zeros(shape, dtype=bool)
    for idx in np.argwhere(dirty):
        idx = tuple(idx)
        q = np.array([axes[d][idx[d]] for d in range(len(axes))])
        try:
            values[idx] = expected_cost(case, shift_factors, q, scenarios,
                                        dispatchers=dispatchers).mean
        except EstimateUnreliableError:
            values[idx] = np.inf
            infeasible[idx] = True

    if np.all(infeasible):
        raise GridInfeasibleError("no trustworthy grid point")
    flat = int(np.argmin(values))  # first occurrence = lexicographically smallest
    best = np.unravel_index(flat, shape)
    argmin_q = np.array([axes[d][best[d]] for d in range(len(axes))])
    return CostMap(grid=grid, axes=axes, values=values, infeasible=infeasible,
                   argmin_q=argmin_q, argmin_value=float(values[best]))


# ---------------------------------------------------------------------------
# envelope and convexity probes


@dataclass
class EnvelopeReport:
    proxy_prices: np.ndarray
    finite_differences: np.ndarray
    rel_deviation: np.ndarray
    kink_crossed: np.ndarray    # bool per coordinate: active set changed in stencil

    @property
    def max_rel_deviation(self) -> float:
        clean = self.rel_deviation[~self.kink_crossed]
        return float(np.max(clean, initial=0.0))


def envelope_check(area: Area, shift_factors: ShiftFactors, q_n: np.ndarray,
                   d_n: np.ndarray, delta: float = 1e-3) -> EnvelopeReport:
    """Central finite differences of the dispatch cost in each interchange
    coordinate versus the proxy prices.

    Builds and solves the dispatch programs directly so the derivative
    check does not reuse the price formula it is verifying.  Raises
    DegeneratePointError at degenerate base points, where the value
    function need not be differentiable; coordinates whose +/- stencil
    lands in a different active set are flagged as kinks instead of
    asserted.
    """
    disp = AreaDispatcher(area, shift_factors)
    q_n = np.asarray(q_n, dtype=float).reshape(disp.k)

    def solve_at(qv):
        qp = disp.build_qp(qv, d_n)
        sol = solve_qp(qp)
        if not sol.optimal:
            raise DispatchInfeasibleError(area.id, sol.certificate or "infeasible")
        return qp, sol

    qp0, base = solve_at(q_n)
    if detect_degeneracy(qp0, base) != DEGENERACY_NONE:
        raise DegeneratePointError(
            f"area {area.id!r} dispatch at q_n={q_n} is degenerate")
    _, _, pi = disp._prices_from(base)

    fd = np.zeros(disp.k)
    kink = np.zeros(disp.k, dtype=bool)
    for j in range(disp.k):
        e = np.zeros(disp.k)
        e[j] = delta
        _, plus = solve_at(q_n + e)
        _, minus = solve_at(q_n - e)
        fd[j] = (plus.objective - minus.objective) / (2.0 * delta)
        kink[j] = not (plus.active_set == base.active_set == minus.active_set)
    rel = np.abs(fd - pi) / np.maximum(np.abs(pi), 1.0)
    return EnvelopeReport(proxy_prices=pi, finite_differences=fd,
                          rel_deviation=rel, kink_crossed=kink)


def convexity_probe(target: Callable[[np.ndarray], float], lows: Sequence[float],
                    highs: Sequence[float], trials: int = 100, seed: int = 0,
                    max_retries: int = 50) -> float:
    """Worst midpoint-convexity violation of `target` over a box.

    Samples random segment endpoints, evaluates the midpoint, and returns
    max f(mid) - (f(a)+f(b))/2; positive values witness non-convexity.
    Endpoints whose evaluation is infeasible are resampled a bounded number
    of times.
    """
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(trials):
        for _attempt in range(max_retries):
            a = lows + rng.uniform(size=lows.size) * (highs - lows)
            b = lows + rng.uniform(size=lows.size) * (highs - lows)
            try:
                fa = target(a)
                fb = target(b)
                fm = target(0.5 * (a + b))
            except (DispatchInfeasibleError, EstimateUnreliableError):
                continue
            worst = max(worst, fm - 0.5 * (fa + fb))
            break
        else:
            raise GridInfeasibleError(
                f"could not find a feasible segment in {max_retries} attempts")
    return float(worst)
