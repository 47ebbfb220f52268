"""Strictly convex quadratic programming with exact dual recovery.

Dual active-set method (Goldfarb-Idnani): start at the unconstrained
minimizer, pin the equalities, then repeatedly pull in the most violated
inequality while keeping the working multipliers nonnegative.  No
feasibility phase is needed, infeasibility is detected exactly (the step
toward a violated constraint becomes unbounded in the dual), and the
multipliers fall out of the same linear solves that produce the iterates.
One Cholesky factorization of the Hessian serves the whole solve.

Dual sign convention, used everywhere in this package:

    L(x, v, u) = f(x) + v' (Aeq x - beq) + u' (Ain x - bin),  u >= 0

so stationarity reads  H x + l + Aeq' v + Ain' u = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class NonConvexError(Exception):
    """The Hessian is not symmetric positive definite."""


class IterationLimitError(Exception):
    """The active-set loop did not terminate; distinct from infeasibility."""


DEGENERACY_NONE = "none"
DEGENERACY_PRIMAL = "primal_degenerate"
DEGENERACY_DUAL = "dual_degenerate"

_FEAS_TOL = 1e-9
_RANK_TOL = 1e-8
_ACTIVE_TOL = 1e-8


@dataclass(frozen=True)
class QuadraticProgram:
    """min 0.5 x'Hx + l'x  s.t.  Aeq x = beq,  Ain x <= bin."""

    H: np.ndarray
    l: np.ndarray
    Aeq: np.ndarray = None
    beq: np.ndarray = None
    Ain: np.ndarray = None
    bin: np.ndarray = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "l", np.asarray(self.l, dtype=float).reshape(n))
        Aeq = self.Aeq if self.Aeq is not None else np.zeros((0, n))
        beq = self.beq if self.beq is not None else np.zeros(0)
        Ain = self.Ain if self.Ain is not None else np.zeros((0, n))
        bin_ = self.bin if self.bin is not None else np.zeros(0)
        object.__setattr__(self, "Aeq", np.asarray(Aeq, dtype=float).reshape(-1, n))
        object.__setattr__(self, "beq", np.asarray(beq, dtype=float).reshape(-1))
        object.__setattr__(self, "Ain", np.asarray(Ain, dtype=float).reshape(-1, n))
        object.__setattr__(self, "bin", np.asarray(bin_, dtype=float).reshape(-1))
        if self.Aeq.shape[0] != self.beq.shape[0]:
            raise ValueError("Aeq/beq row mismatch")
        if self.Ain.shape[0] != self.bin.shape[0]:
            raise ValueError("Ain/bin row mismatch")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def validate(self) -> None:
        if self.H.shape[0] != self.H.shape[1]:
            raise ValueError("H must be square")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(self.H))):
            raise NonConvexError("H is not symmetric")
        try:
            np.linalg.cholesky(self.H)
        except np.linalg.LinAlgError as exc:
            raise NonConvexError("H is not positive definite") from exc


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    dual_eq: np.ndarray
    dual_in: np.ndarray
    active_set: tuple[int, ...]
    status: str                      # "optimal" | "infeasible"
    certificate: Optional[str] = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.stationarity, self.primal, self.dual, self.complementarity) <= self.tol


class _Infeasible(Exception):
    def __init__(self, certificate: str):
        super().__init__(certificate)
        self.certificate = certificate


class _Workset:
    """Active rows in >=-normal form plus their multipliers.

    Equality rows carry free multipliers and are never dropped; inequality
    rows (entered as -Ain r >= -bin r) carry nonnegative multipliers.
    """

    def __init__(self, n: int):
        self.n = n
        self.kinds: list[str] = []   # "eq" | "in"
        self.rows: list[int] = []
        self.normals: list[np.ndarray] = []
        self.mult = np.zeros(0)

    def matrix(self) -> np.ndarray:
        if not self.normals:
            return np.zeros((0, self.n))
        return np.vstack(self.normals)

    def add(self, kind: str, row: int, normal: np.ndarray, mult: float) -> None:
        self.kinds.append(kind)
        self.rows.append(row)
        self.normals.append(normal)
        self.mult = np.append(self.mult, mult)

    def drop(self, pos: int) -> None:
        self.kinds.pop(pos)
        self.rows.pop(pos)
        self.normals.pop(pos)
        self.mult = np.delete(self.mult, pos)

    def in_rows(self) -> set:
        return {r for k, r in zip(self.kinds, self.rows) if k == "in"}


def _directions(Hinv, ws: _Workset, normal: np.ndarray):
    """Primal step z and dual update r for pulling `normal` into the set."""
    hin = Hinv @ normal
    N = ws.matrix()
    if N.shape[0] == 0:
        return hin, np.zeros(0), hin
    HiNT = Hinv @ N.T
    S = N @ HiNT
    rhs = N @ hin
    try:
        r = np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError:
        r = np.linalg.lstsq(S, rhs, rcond=None)[0]
    z = hin - HiNT @ r
    return z, r, hin


def _pull_in(Hinv, ws: _Workset, x, normal, offset, kind, row, max_inner):
    """Move x onto `normal' x >= offset`, shedding blocked inequalities.

    Alternates full/partial primal steps toward the constraint with dual
    steps that drop working inequalities whose multipliers would go
    negative.  Returns the updated x; raises _Infeasible when no step can
    satisfy the constraint.
    """
    s = float(normal @ x - offset)
    u_new = 0.0
    for _ in range(max_inner):
        z, r, hin = _directions(Hinv, ws, normal)
        z_ok = (float(np.max(np.abs(z), initial=0.0))
                > 1e-11 * max(1.0, float(np.max(np.abs(hin), initial=0.0))))

        t1 = np.inf
        drop_pos = -1
        for pos, (k, rv) in enumerate(zip(ws.kinds, r)):
            if k == "in" and rv > 1e-12:
                cand = ws.mult[pos] / rv
                if cand < t1 - 1e-15:
                    t1, drop_pos = cand, pos
        t2 = -s / float(z @ normal) if z_ok else np.inf

        if not z_ok:
            if not np.isfinite(t1):
                if kind == "eq" and abs(s) <= 1e-7 * (1.0 + abs(offset)):
                    return x  # dependent but consistent equality: skip
                raise _Infeasible(
                    f"constraint row {row} (residual {abs(s):.4g}) cannot be "
                    f"satisfied together with rows {sorted(ws.in_rows())}")
            t = t1  # pure dual step
        else:
            t = min(t1, t2)

        if ws.mult.size:
            ws.mult = ws.mult - t * r
        u_new += t
        if z_ok:
            x = x + t * z
            s = float(normal @ x - offset)
        if z_ok and t2 <= t1:
            ws.add(kind, row, normal, u_new)
            return x
        ws.drop(drop_pos)
    raise IterationLimitError("constraint incorporation stalled")


def _kkt_solve(Hinv, l, C, h):
    """Solve min 0.5 x'Hx + l'x s.t. C x = h; returns (x, y) with
    H x + l + C'y = 0."""
    Hil = Hinv @ l
    if C.shape[0] == 0:
        return -Hil, np.zeros(0)
    HiC = Hinv @ C.T
    S = C @ HiC
    rhs = -(h + C @ Hil)
    try:
        y = np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError:
        y = np.linalg.lstsq(S, rhs, rcond=None)[0]
    x = -(Hil + HiC @ y)
    return x, y


def solve_factored(H, H_cho, l, Aeq, beq, Ain, bin_) -> QpSolution:
    """Active-set solve with a pre-factorized Hessian.

    Hot-path entry for callers (the dispatcher) that solve many programs
    sharing H/l/Aeq/Ain and varying only the right-hand sides; skips
    validation and refactorization but is otherwise identical to solve_qp.
    """
    n = l.size
    me, m = Aeq.shape[0], Ain.shape[0]
    Hinv = cho_solve(H_cho, np.eye(n), check_finite=False)
    x = -(Hinv @ l)
    ws = _Workset(n)
    max_inner = 50 + 10 * (m + me + n)
    try:
        for r in range(me):
            x = _pull_in(Hinv, ws, x, Aeq[r], float(beq[r]), "eq", r, max_inner)
        for _ in range(50 + 10 * m):
            resid = Ain @ x - bin_ if m else np.zeros(0)
            in_set = ws.in_rows()
            if in_set:
                resid = resid.copy()
                resid[list(in_set)] = -np.inf
            worst = int(np.argmax(resid)) if m else 0
            if m == 0 or resid[worst] <= _FEAS_TOL:
                break
            x = _pull_in(Hinv, ws, x, -Ain[worst], float(-bin_[worst]),
                         "in", worst, max_inner)
        else:
            raise IterationLimitError("active-set loop exceeded its iteration budget")
    except _Infeasible as bad:
        return QpSolution(x=np.full(n, np.nan), objective=np.inf,
                          dual_eq=np.zeros(me), dual_in=np.zeros(m),
                          active_set=(), status="infeasible",
                          certificate=bad.certificate)

    # polish: re-solve on the terminal active set to strip incremental drift
    kept_eq = [ws.rows[i] for i, k in enumerate(ws.kinds) if k == "eq"]
    kept_in = [ws.rows[i] for i, k in enumerate(ws.kinds) if k == "in"]
    C = np.vstack([Aeq[kept_eq], Ain[kept_in]])
    h = np.concatenate([beq[kept_eq], bin_[kept_in]])
    if C.shape[0]:
        x, y = _kkt_solve(Hinv, l, C, h)
    else:
        x = -(Hinv @ l)
        y = np.zeros(0)

    dual_eq = np.zeros(me)
    for j, r in enumerate(kept_eq):
        dual_eq[r] = y[j]
    dual_in = np.zeros(m)
    for j, r in enumerate(kept_in):
        dual_in[r] = y[len(kept_eq) + j]

    slack = bin_ - Ain @ x if m else np.zeros(0)
    active = tuple(int(r) for r in range(m) if slack[r] <= _ACTIVE_TOL)
    objective = float(0.5 * x @ H @ x + l @ x)
    return QpSolution(x=x, objective=objective, dual_eq=dual_eq, dual_in=dual_in,
                      active_set=active, status="optimal")


def solve_qp(qp: QuadraticProgram) -> QpSolution:
    """Solve the QP and recover exact multipliers.

    Raises NonConvexError for a non-PD Hessian up front and
    IterationLimitError if the active-set loop stalls; an infeasible
    program is reported through the solution status together with a
    certificate description, never as an exception.
    """
    qp.validate()
    H = 0.5 * (qp.H + qp.H.T)
    H_cho = cho_factor(H, lower=True)
    return solve_factored(H, H_cho, qp.l, qp.Aeq, qp.beq, qp.Ain, qp.bin)


def check_kkt(qp: QuadraticProgram, sol: QpSolution, tol: float = 1e-8) -> KktReport:
    """Residual magnitudes of the four KKT blocks for an optimal solution."""
    if not sol.optimal:
        raise ValueError("check_kkt needs an optimal solution")
    x = sol.x
    stat = qp.H @ x + qp.l
    if qp.Aeq.shape[0]:
        stat = stat + qp.Aeq.T @ sol.dual_eq
    if qp.Ain.shape[0]:
        stat = stat + qp.Ain.T @ sol.dual_in
    stationarity = float(np.max(np.abs(stat), initial=0.0))
    primal = 0.0
    if qp.Aeq.shape[0]:
        primal = float(np.max(np.abs(qp.Aeq @ x - qp.beq), initial=0.0))
    comp = 0.0
    dual = 0.0
    if qp.Ain.shape[0]:
        resid = qp.Ain @ x - qp.bin
        primal = max(primal, float(np.max(resid, initial=0.0)))
        dual = float(np.max(-sol.dual_in, initial=0.0))
        comp = float(np.max(np.abs(sol.dual_in * resid), initial=0.0))
    return KktReport(stationarity=stationarity, primal=primal, dual=dual,
                     complementarity=comp, tol=tol)


def classify_degeneracy(Aeq: np.ndarray, Ain: np.ndarray, sol: QpSolution,
                        tol: float = _RANK_TOL) -> str:
    """Degeneracy class from raw constraint blocks; see detect_degeneracy."""
    if not sol.optimal:
        raise ValueError("degeneracy is defined only for optimal solutions")
    active = list(sol.active_set)
    if Aeq.shape[0] or active:
        rows = np.vstack([Aeq, Ain[active]])
        if np.linalg.matrix_rank(rows, tol=tol) < rows.shape[0]:
            return DEGENERACY_PRIMAL
    if active and np.min(sol.dual_in[active]) < tol:
        return DEGENERACY_DUAL
    return DEGENERACY_NONE


def detect_degeneracy(qp: QuadraticProgram, sol: QpSolution, tol: float = _RANK_TOL) -> str:
    """Classify an optimal solution.

    primal_degenerate: the gradients of the active constraints (equalities
    plus tight inequalities) are linearly dependent.  dual_degenerate: some
    tight inequality carries a (numerically) zero multiplier.  Primal
    degeneracy is reported first when both hold.
    """
    return classify_degeneracy(qp.Aeq, qp.Ain, sol, tol=tol)
