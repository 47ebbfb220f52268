import numpy as np
import pytest
from importlib.resources import files

import tieflow as tf

CASE_DIR = files("tieflow") / "cases"


def case_path(name: str) -> str:
    return str(CASE_DIR / name)


@pytest.fixture(scope="session")
def two_area_case():
    return tf.load_case(case_path("two_area.case"))


@pytest.fixture(scope="session")
def fig1_case():
    return tf.load_case(case_path("fig1.case"))


@pytest.fixture(scope="session")
def ramp_case():
    return tf.load_case(case_path("ramp.case"))


@pytest.fixture(scope="session")
def two_area_sfs(two_area_case):
    return tf.compute_all_shift_factors(two_area_case)


@pytest.fixture(scope="session")
def fig1_sfs(fig1_case):
    return tf.compute_all_shift_factors(fig1_case)


# ---------------------------------------------------------------------------
# independent QP oracle: try every candidate active set, keep the best
# feasible stationary point.  Shares no code with the production solver.


def qp_brute_force(qp, feas_tol=1e-8):
    """(objective, x) over exhaustive active-set enumeration; (inf, None) if
    no candidate is feasible."""
    n = qp.n
    m = qp.Ain.shape[0]
    me = qp.Aeq.shape[0]
    best = np.inf
    best_x = None
    for mask in range(1 << m):
        rows = [r for r in range(m) if (mask >> r) & 1]
        C = np.vstack([qp.Aeq, qp.Ain[rows]])
        h = np.concatenate([qp.beq, qp.bin[rows]])
        K = np.block([[qp.H, C.T], [C, np.zeros((C.shape[0], C.shape[0]))]])
        rhs = np.concatenate([-qp.l, h])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        x = sol[:n]
        if not np.all(np.isfinite(x)):
            continue
        if me and np.max(np.abs(qp.Aeq @ x - qp.beq)) > feas_tol:
            continue
        if m and np.max(qp.Ain @ x - qp.bin) > feas_tol:
            continue
        val = float(0.5 * x @ qp.H @ x + qp.l @ x)
        if val < best:
            best, best_x = val, x
    return best, best_x


def random_qp(rng, n_max=6, m_max=8):
    """Random strictly convex QP with a consistent equality block."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    me = int(rng.integers(0, min(n, 2) + 1))
    A = rng.normal(size=(n, n))
    H = A @ A.T + 0.5 * np.eye(n)
    l = 2.0 * rng.normal(size=n)
    Aeq = rng.normal(size=(me, n))
    beq = rng.normal(size=me)
    Ain = rng.normal(size=(m, n))
    bin_ = rng.normal(size=m) + 1.0
    return tf.QuadraticProgram(H=H, l=l, Aeq=Aeq, beq=beq, Ain=Ain, bin=bin_)
