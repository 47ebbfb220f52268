"""Regional economic dispatch and proxy-bus marginal pricing.

For a fixed outbound interchange vector q_n and a realized per-bus net
load d_n, each area solves

    min  sum_j 0.5 h_j g_j^2 + c_j g_j
    s.t. sum(g) = sum(d_n) + sum(q_n)                  (energy balance)
         -limit <= branch flows <= limit               (DC flows)
         g_min <= g <= g_max

The balance multiplier gives the area energy price; the line multipliers
combined with the interchange shift factors give the locational marginal
price at each interface's proxy bus.  By the envelope theorem those proxy
prices are exactly the gradient of the optimal dispatch cost with respect
to q_n, which is what the interchange schedulers consume.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from scipy.linalg import cho_factor

from .netmodel import Area, CaseSystem, ShiftFactors
from .qpsolve import (DEGENERACY_NONE, QpSolution, QuadraticProgram,
                      classify_degeneracy, solve_factored)

# A full-system net-load realization is a mapping area id -> per-bus MW
# vector in the area's bus order (load minus realized injection).
NetLoadRealization = Mapping[str, np.ndarray]

FLAG_OK = 0
FLAG_DEGENERATE = 1
FLAG_INFEASIBLE = 2

_INTERIOR_MARGIN = 1e-7  # MW clearance required to trust the closed form


class DispatchInfeasibleError(Exception):
    """An area cannot balance the given interchange and net load."""

    def __init__(self, area_id: str, certificate: str):
        super().__init__(f"area {area_id!r}: dispatch infeasible: {certificate}")
        self.area_id = area_id
        self.certificate = certificate


@dataclass(frozen=True)
class DispatchSolution:
    area_id: str
    generation: np.ndarray        # per generator, MW
    cost: float                   # $
    energy_price: float           # $/MW, marginal cost of one more MW of load
    congestion_prices: np.ndarray  # 2b multipliers >= 0 (line rows, both signs)
    proxy_prices: np.ndarray      # $/MW per area interface
    degeneracy: str               # qpsolve.DEGENERACY_*


@dataclass
class DispatchBatch:
    """Vectorized dispatch results over M scenarios at one q_n."""

    costs: np.ndarray         # (M,), nan where flagged infeasible
    energy_price: np.ndarray  # (M,)
    proxy_prices: np.ndarray  # (M, k)
    flags: np.ndarray         # (M,) int8, FLAG_*


def worker_count() -> int:
    """Scenario-evaluation parallelism cap from TIEFLOW_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("TIEFLOW_THREADS", "1")))
    except ValueError:
        return 1


class AreaDispatcher:
    """Precomputed dispatch machinery for one area.

    Immutable after construction; safe to share across threads.
    """

    def __init__(self, area: Area, shift_factors: ShiftFactors):
        if shift_factors.area_id != area.id:
            raise ValueError("shift factors belong to a different area")
        self.area = area
        self.sf = shift_factors
        gens = area.generators
        self.n = len(gens)
        if self.n == 0:
            raise ValueError(f"area {area.id!r} has no generators to dispatch")
        self.h = np.array([g.cost_quadratic for g in gens])
        self.lin = np.array([g.cost_linear for g in gens])
        self.g_min = np.array([g.g_min for g in gens])
        self.g_max = np.array([g.g_max for g in gens])
        nb = area.num_buses
        self.gen_map = np.zeros((nb, self.n))
        for j, g in enumerate(gens):
            self.gen_map[area.bus_index(g.bus), j] = 1.0
        self.limits = np.array([br.limit for br in area.branches])
        self.nb = nb
        self.b = len(area.branches)
        self.k = area.num_interfaces
        # water-filling pieces for the uncongested balance solve: at price nu
        # each unit sits at clip((nu - c)/h, g_min, g_max); total output is a
        # nondecreasing piecewise-linear function of nu with these knots
        self.hinv = 1.0 / self.h
        self.knot_lo = self.lin + self.h * self.g_min   # price where a unit leaves g_min
        self.knot_hi = self.lin + self.h * self.g_max   # price where it hits g_max
        self.knots = np.sort(np.concatenate([self.knot_lo, self.knot_hi]))
        self.knot_totals = np.clip(
            (self.knots[:, None] - self.lin[None, :]) * self.hinv[None, :],
            self.g_min[None, :], self.g_max[None, :]).sum(axis=1)
        # constant QP blocks shared by every scenario (only rhs vary)
        self._H = np.diag(self.h)
        self._H_cho = cho_factor(self._H, lower=True)
        self._Aeq = np.ones((1, self.n))
        blocks = []
        if self.b:
            PG = self.sf.ptdf @ self.gen_map
            blocks += [-PG, PG]
        blocks += [np.eye(self.n), -np.eye(self.n)]
        self._Ain = np.vstack(blocks)
        self._bin_const = np.concatenate(
            [np.zeros(2 * self.b), self.g_max, -self.g_min])

    # -- construction -----------------------------------------------------

    def _rhs(self, q_n: np.ndarray, d_n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        beq = np.array([d_n.sum() + q_n.sum()])
        bin_ = self._bin_const.copy()
        if self.b:
            base = self.sf.ptdf @ d_n + self.sf.interchange_ptdf @ q_n
            bin_[:self.b] = self.limits - base
            bin_[self.b:2 * self.b] = self.limits + base
        return beq, bin_

    def build_qp(self, q_n: np.ndarray, d_n: np.ndarray) -> QuadraticProgram:
        """Assemble the dispatch QP.

        Inequality row layout (consumed by the price recovery): first the b
        line rows in withdrawal form ptdf(d - g) + interchange_ptdf q <= limit,
        then the b mirror rows, then g <= g_max, then -g <= -g_min.
        """
        q_n = np.asarray(q_n, dtype=float).reshape(self.k)
        d_n = np.asarray(d_n, dtype=float).reshape(self.nb)
        beq, bin_ = self._rhs(q_n, d_n)
        return QuadraticProgram(H=self._H, l=self.lin, Aeq=self._Aeq, beq=beq,
                                Ain=self._Ain, bin=bin_)

    # -- single solve ------------------------------------------------------

    def _prices_from(self, sol: QpSolution) -> tuple[float, np.ndarray, np.ndarray]:
        lam = float(-sol.dual_eq[0])
        mu = sol.dual_in[:2 * self.b]
        B = self.sf.interchange_ptdf
        pi = np.full(self.k, lam)
        if self.b:
            pi = pi + B.T @ mu[:self.b] - B.T @ mu[self.b:]
        return lam, mu, pi

    def _solve_raw(self, q_n: np.ndarray, d_n: np.ndarray) -> QpSolution:
        beq, bin_ = self._rhs(q_n, d_n)
        return solve_factored(self._H, self._H_cho, self.lin,
                              self._Aeq, beq, self._Ain, bin_)

    def solve(self, q_n: np.ndarray, d_n: np.ndarray) -> DispatchSolution:
        q_n = np.asarray(q_n, dtype=float).reshape(self.k)
        d_n = np.asarray(d_n, dtype=float).reshape(self.nb)
        sol = self._solve_raw(q_n, d_n)
        if not sol.optimal:
            raise DispatchInfeasibleError(self.area.id, sol.certificate or "infeasible")
        lam, mu, pi = self._prices_from(sol)
        return DispatchSolution(area_id=self.area.id, generation=sol.x,
                                cost=sol.objective, energy_price=lam,
                                congestion_prices=mu, proxy_prices=pi,
                                degeneracy=classify_degeneracy(self._Aeq, self._Ain, sol))

    def _solve_flagged(self, q_n, d_n):
        """(cost, lam, pi, flag) without raising on infeasibility."""
        sol = self._solve_raw(q_n, d_n)
        if not sol.optimal:
            return np.nan, np.nan, np.full(self.k, np.nan), FLAG_INFEASIBLE
        lam, _, pi = self._prices_from(sol)
        flag = (FLAG_OK if classify_degeneracy(self._Aeq, self._Ain, sol) == DEGENERACY_NONE
                else FLAG_DEGENERATE)
        return sol.objective, lam, pi, flag

    # -- batched solve over scenarios ---------------------------------------

    def _water_fill(self, total: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized box-and-balance dispatch for M totals.

        Returns (g, nu, ok).  A scenario is ok only when its solution sits
        strictly inside the knot structure: every clamped unit carries a
        multiplier above the margin and every free unit has bound clearance,
        which makes the closed form provably optimal, non-degenerate, and
        bit-reproducible; everything else is left to the general solver.
        """
        M = total.shape[0]
        pos = np.searchsorted(self.knot_totals, total, side="left")
        ok = (pos > 0) & (pos < self.knots.size)
        pos = np.clip(pos, 1, self.knots.size - 1)
        mid = 0.5 * (self.knots[pos - 1] + self.knots[pos])
        free = (self.knot_lo[None, :] < mid[:, None]) & (mid[:, None] < self.knot_hi[None, :])
        slope = free @ self.hinv
        ok &= slope > 1e-12
        slope = np.where(slope > 1e-12, slope, 1.0)
        nu = self.knots[pos - 1] + (total - self.knot_totals[pos - 1]) / slope
        g = np.clip((nu[:, None] - self.lin[None, :]) * self.hinv[None, :],
                    self.g_min[None, :], self.g_max[None, :])
        at_lo = nu[:, None] <= self.knot_lo[None, :]
        at_hi = nu[:, None] >= self.knot_hi[None, :]
        # clamped units need a clear multiplier, free units clear bounds
        ok &= np.all(np.where(at_lo, self.knot_lo[None, :] - nu[:, None]
                              >= _INTERIOR_MARGIN, True), axis=1)
        ok &= np.all(np.where(at_hi, nu[:, None] - self.knot_hi[None, :]
                              >= _INTERIOR_MARGIN, True), axis=1)
        interior = ~(at_lo | at_hi)
        ok &= np.all(np.where(interior,
                              (g >= self.g_min[None, :] + _INTERIOR_MARGIN)
                              & (g <= self.g_max[None, :] - _INTERIOR_MARGIN), True),
                     axis=1)
        return g, nu, ok

    def solve_many(self, q_n: np.ndarray, d_matrix: np.ndarray) -> DispatchBatch:
        """Dispatch M scenarios at a fixed q_n.

        Scenarios whose water-filling solution clears every bound and line
        limit by a safe margin are filled vectorized; the rest fall back to
        the active-set solver one by one.  Results are identical to
        per-scenario solves and independent of the worker count because
        every scenario is resolved in isolation.
        """
        q_n = np.asarray(q_n, dtype=float).reshape(self.k)
        D = np.asarray(d_matrix, dtype=float).reshape(-1, self.nb)
        M = D.shape[0]
        total = D.sum(axis=1) + q_n.sum()
        g, nu, ok = self._water_fill(total)
        if self.b:
            binj = g @ self.gen_map.T - D - (self.sf.proxy_incidence @ q_n)[None, :]
            flows = binj @ self.sf.ptdf.T
            ok &= np.all(np.abs(flows) <= self.limits[None, :] - _INTERIOR_MARGIN, axis=1)

        costs = np.full(M, np.nan)
        lams = np.full(M, np.nan)
        pis = np.full((M, self.k), np.nan)
        flags = np.full(M, FLAG_OK, dtype=np.int8)

        costs[ok] = 0.5 * (g[ok] ** 2 * self.h[None, :]).sum(axis=1) + g[ok] @ self.lin
        lams[ok] = nu[ok]
        pis[ok] = nu[ok, None]

        rest = np.flatnonzero(~ok)
        if rest.size:
            def run(indices):
                for m in indices:
                    costs[m], lams[m], pis[m], flags[m] = self._solve_flagged(q_n, D[m])

            workers = worker_count()
            if workers > 1 and rest.size > 1:
                chunks = np.array_split(rest, workers)
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    list(pool.map(run, [c for c in chunks if c.size]))
            else:
                run(rest)
        return DispatchBatch(costs=costs, energy_price=lams, proxy_prices=pis, flags=flags)


# ---------------------------------------------------------------------------
# module-level operations


def build_dispatch_qp(area: Area, shift_factors: ShiftFactors,
                      q_n: np.ndarray, d_n: np.ndarray) -> QuadraticProgram:
    return AreaDispatcher(area, shift_factors).build_qp(q_n, d_n)


def solve_dispatch(area: Area, shift_factors: ShiftFactors,
                   q_n: np.ndarray, d_n: np.ndarray) -> DispatchSolution:
    return AreaDispatcher(area, shift_factors).solve(q_n, d_n)


def build_dispatchers(case: CaseSystem,
                      shift_factors: Mapping[str, ShiftFactors]) -> dict[str, AreaDispatcher]:
    return {a.id: AreaDispatcher(a, shift_factors[a.id]) for a in case.areas}


def total_cost(case: CaseSystem, shift_factors: Mapping[str, ShiftFactors],
               q: np.ndarray, realization: NetLoadRealization,
               dispatchers: Optional[Mapping[str, AreaDispatcher]] = None) -> float:
    """System cost at interchange q for one net-load realization.

    Sum of the areas' optimal dispatch costs; any area's infeasibility
    propagates as DispatchInfeasibleError naming that area.
    """
    from .netmodel import project_interchange
    if dispatchers is None:
        dispatchers = build_dispatchers(case, shift_factors)
    q = np.asarray(q, dtype=float)
    out = 0.0
    for a in case.areas:
        out += dispatchers[a.id].solve(project_interchange(q, a), realization[a.id]).cost
    return out
