import numpy as np
import pytest

from tieflow.qpsolve import (DEGENERACY_DUAL, DEGENERACY_NONE, DEGENERACY_PRIMAL,
                             NonConvexError, QuadraticProgram, check_kkt,
                             detect_degeneracy, solve_qp)

from conftest import qp_brute_force, random_qp


def test_single_active_bound():
    # min 0.5 x^2  s.t.  x >= 1  (written as -x <= -1)
    qp = QuadraticProgram(H=[[1.0]], l=[0.0], Ain=[[-1.0]], bin=[-1.0])
    sol = solve_qp(qp)
    assert sol.optimal
    assert sol.x == pytest.approx([1.0], abs=1e-10)
    assert sol.dual_in == pytest.approx([1.0], abs=1e-10)
    assert sol.active_set == (0,)


def test_symmetric_projection():
    qp = QuadraticProgram(H=np.eye(2), l=np.zeros(2), Aeq=[[1.0, 1.0]], beq=[2.0])
    sol = solve_qp(qp)
    assert sol.x == pytest.approx([1.0, 1.0], abs=1e-10)
    assert sol.objective == pytest.approx(1.0, abs=1e-10)


def test_unconstrained_stationarity_zero():
    H = np.diag([2.0, 3.0])
    l = np.array([-4.0, 6.0])
    qp = QuadraticProgram(H=H, l=l)
    sol = solve_qp(qp)
    assert sol.x == pytest.approx(np.linalg.solve(H, -l), abs=1e-12)
    assert check_kkt(qp, sol).stationarity == pytest.approx(0.0, abs=1e-12)


def test_non_pd_rejected():
    with pytest.raises(NonConvexError):
        solve_qp(QuadraticProgram(H=[[0.0]], l=[1.0]))
    with pytest.raises(NonConvexError):
        solve_qp(QuadraticProgram(H=[[1.0, 2.0], [0.0, 1.0]], l=[0.0, 0.0]))


def test_infeasible_has_certificate():
    qp = QuadraticProgram(H=[[1.0]], l=[0.0], Ain=[[1.0], [-1.0]], bin=[-1.0, -1.0])
    sol = solve_qp(qp)
    assert sol.status == "infeasible"
    assert sol.certificate and "row" in sol.certificate


def test_inconsistent_equalities_infeasible():
    qp = QuadraticProgram(H=np.eye(2), l=np.zeros(2),
                          Aeq=[[1.0, 1.0], [1.0, 1.0]], beq=[1.0, 2.0])
    sol = solve_qp(qp)
    assert sol.status == "infeasible"


def test_redundant_consistent_equalities_ok():
    qp = QuadraticProgram(H=np.eye(2), l=np.zeros(2),
                          Aeq=[[1.0, 1.0], [2.0, 2.0]], beq=[2.0, 4.0])
    sol = solve_qp(qp)
    assert sol.optimal
    assert sol.x == pytest.approx([1.0, 1.0], abs=1e-9)


def test_brute_force_agreement():
    rng = np.random.default_rng(42)
    for _ in range(120):
        qp = random_qp(rng)
        sol = solve_qp(qp)
        ref, _ = qp_brute_force(qp)
        if sol.status == "infeasible":
            assert not np.isfinite(ref)
            continue
        assert np.isfinite(ref)
        assert abs(sol.objective - ref) <= 1e-7 * max(1.0, abs(ref))
        assert check_kkt(qp, sol, tol=1e-8).passed


def test_determinism_bitwise():
    rng = np.random.default_rng(5)
    qp = random_qp(rng)
    a = solve_qp(qp)
    b = solve_qp(qp)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.dual_in, b.dual_in)
    assert np.array_equal(a.dual_eq, b.dual_eq)
    assert a.objective == b.objective


def test_dual_sensitivity_to_equality_shift():
    # with L = f + v'(Aeq x - beq), dC*/dbeq = -v
    rng = np.random.default_rng(9)
    checked = 0
    while checked < 10:
        qp = random_qp(rng)
        if qp.Aeq.shape[0] == 0:
            continue
        sol = solve_qp(qp)
        if not sol.optimal or detect_degeneracy(qp, sol) != DEGENERACY_NONE:
            continue
        delta = 1e-5 * rng.normal(size=qp.beq.size)
        shifted = QuadraticProgram(H=qp.H, l=qp.l, Aeq=qp.Aeq, beq=qp.beq + delta,
                                   Ain=qp.Ain, bin=qp.bin)
        sol2 = solve_qp(shifted)
        if not sol2.optimal:
            continue
        predicted = -float(sol.dual_eq @ delta)
        actual = sol2.objective - sol.objective
        assert abs(actual - predicted) <= 1e-7 + 1e-4 * abs(predicted)
        checked += 1


def test_kkt_detects_perturbation():
    qp = QuadraticProgram(H=np.eye(2), l=np.array([-1.0, -1.0]),
                          Ain=[[1.0, 0.0]], bin=[2.0])
    sol = solve_qp(qp)
    assert check_kkt(qp, sol).passed
    sol.x = sol.x + np.array([1e-3, 0.0])  # feasible direction (constraint slack)
    report = check_kkt(qp, sol)
    assert report.stationarity > 1e-4


def test_degeneracy_duplicated_constraint():
    qp = QuadraticProgram(H=[[1.0]], l=[0.0], Ain=[[1.0], [2.0]], bin=[0.0, 0.0])
    sol = solve_qp(qp)
    assert sol.x == pytest.approx([0.0], abs=1e-12)
    assert detect_degeneracy(qp, sol) == DEGENERACY_PRIMAL


def test_degeneracy_zero_multiplier():
    qp = QuadraticProgram(H=[[1.0]], l=[0.0], Ain=[[1.0]], bin=[0.0])
    sol = solve_qp(qp)
    assert detect_degeneracy(qp, sol) == DEGENERACY_DUAL


def test_degeneracy_generic_none():
    rng = np.random.default_rng(17)
    seen = 0
    for _ in range(40):
        qp = random_qp(rng)
        sol = solve_qp(qp)
        if not sol.optimal:
            continue
        kind = detect_degeneracy(qp, sol)
        assert kind in (DEGENERACY_NONE, DEGENERACY_PRIMAL, DEGENERACY_DUAL)
        if kind == DEGENERACY_NONE:
            seen += 1
    assert seen > 20  # generic instances are overwhelmingly non-degenerate


def test_complementary_slackness_holds():
    rng = np.random.default_rng(23)
    for _ in range(30):
        qp = random_qp(rng)
        sol = solve_qp(qp)
        if not sol.optimal or qp.Ain.shape[0] == 0:
            continue
        resid = qp.bin - qp.Ain @ sol.x
        assert np.max(np.abs(sol.dual_in * resid)) <= 1e-8
        assert np.min(sol.dual_in) >= -1e-10
