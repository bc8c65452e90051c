import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import QuadraticProgram
from irrdc.benchmarks import aly_chan, second_order_singular, smib
from irrdc.ocp import Mesh
from irrdc.solver import STATUSES, SolverOptions, check_derivatives, interiorize, kkt_errors, solve
from irrdc.transcription import transcribe_dc


def test_box_bounded_square():
    qp = QuadraticProgram([[2.0]], [0.0], np.zeros((0, 1)), [], [-1.0], [1.0])
    res = solve(qp, np.array([0.5]))
    assert res.status == "optimal"
    assert abs(res.primal[0]) <= 1e-9
    assert abs(res.objective) <= 1e-12


def test_active_upper_bound_multiplier():
    qp = QuadraticProgram([[0.0]], [-1.0], np.zeros((0, 1)), [], [-np.inf], [1.0])
    res = solve(qp, np.array([0.0]))
    assert res.status == "optimal"
    assert res.primal[0] == pytest.approx(1.0, abs=1e-9)
    assert res.bound_multipliers[1, 0] == pytest.approx(1.0, abs=1e-8)
    assert res.bound_multipliers[0, 0] == 0.0
    assert np.all(res.bound_multipliers >= 0)


def _random_qp(seed, n, p):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    P = M @ M.T + np.eye(n)
    q = rng.standard_normal(n)
    A = rng.standard_normal((p, n))
    b = rng.standard_normal(p)
    return P, q, A, b


def _direct_kkt(P, q, A, b):
    n, p = q.size, b.size
    K = np.block([[P, A.T], [A, np.zeros((p, p))]])
    sol = np.linalg.solve(K, np.concatenate([-q, b]))
    w = sol[:n]
    return w, float(0.5 * w @ P @ w + q @ w)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 12), st.integers(0, 4))
def test_convex_qp_matches_direct_kkt(seed, n, p):
    p = min(p, n - 1)
    P, q, A, b = _random_qp(seed, n, p)
    w_star, J_star = _direct_kkt(P, q, A, b)
    # loose bounds that cannot be active
    lo, hi = w_star - 10.0, w_star + 10.0
    res = solve(QuadraticProgram(P, q, A, b, lo, hi), np.zeros(n))
    assert res.status == "optimal"
    assert abs(res.objective - J_star) <= 1e-10 * max(1.0, abs(J_star))


def test_convex_qp_unbounded_variables():
    P, q, A, b = _random_qp(3, 8, 3)
    w_star, J_star = _direct_kkt(P, q, A, b)
    res = solve(QuadraticProgram(P, q, A, b), np.zeros(8))
    assert res.status == "optimal"
    assert abs(res.objective - J_star) <= 1e-10
    assert np.max(np.abs(res.primal - w_star)) <= 1e-8


def test_interiorize_push():
    lo, hi = np.array([0.0, -np.inf, 0.0, 2.0]), np.array([1.0, 5.0, 1e6, 2.0])
    w = interiorize(np.array([-3.0, 9.0, 0.0, 2.0]), lo, hi)
    assert w[0] == pytest.approx(1e-3)
    assert w[1] == pytest.approx(5.0 - 1e-3)
    assert w[2] == pytest.approx(1e-3)
    assert w[3] == 2.0
    w = interiorize(np.array([0.5]), np.array([0.0]), np.array([0.1]))
    assert w[0] == pytest.approx(0.1 - 1e-4)


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol_kkt=0)
    with pytest.raises(ValueError):
        SolverOptions(barrier_reduction=1.0)
    with pytest.raises(ValueError):
        SolverOptions(max_iter=0)


def test_quadratic_gradient_check_is_tight():
    P, q, A, b = _random_qp(1, 6, 2)
    rep = check_derivatives(QuadraticProgram(P, q, A, b), np.random.default_rng(2).standard_normal(6))
    assert rep.max_error <= 1e-9
    assert rep.offending == []


class _Corrupted(QuadraticProgram):
    def jacobian(self, w):
        J = self.A.copy()
        J[1, 2] += 0.1
        return sp.csr_matrix(J)


def test_corrupted_jacobian_entry_is_flagged():
    P, q, A, b = _random_qp(1, 6, 2)
    rep = check_derivatives(_Corrupted(P, q, A, b), np.zeros(6))
    flagged = [(o[1], o[2]) for o in rep.offending if o[0] == "jacobian"]
    assert flagged == [(1, 2)]
    assert rep.max_jacobian_error >= 0.05


def test_smib_dc_derivatives_at_random_feasible_point():
    ocp = smib()
    nlp = transcribe_dc(ocp, Mesh.uniform(ocp.t0, ocp.tf, 10))
    rng = np.random.default_rng(11)
    w = interiorize(rng.uniform(-2.0, 2.0, nlp.dim), nlp.lower, nlp.upper)
    assert check_derivatives(nlp, w).max_error <= 1e-6


def _check_optimal_kkt(nlp, res, tol):
    zl, zu = res.bound_multipliers
    err = kkt_errors(nlp, res.primal, res.eq_multipliers, zl, zu)
    assert max(err.values()) <= tol
    assert np.all(res.primal >= nlp.lower - 1e-12)
    assert np.all(res.primal <= nlp.upper + 1e-12)
    assert res.kkt_residual <= tol


@pytest.mark.parametrize("make", [second_order_singular, aly_chan], ids=["second-order", "aly-chan"])
def test_optimal_solves_satisfy_kkt(make):
    ocp = make()
    nlp = transcribe_dc(ocp, Mesh.uniform(ocp.t0, ocp.tf, 40))
    res = solve(nlp, nlp.cold_start())
    assert res.status == "optimal"
    _check_optimal_kkt(nlp, res, 1e-9)


def test_deterministic_iterates():
    nlp = transcribe_dc(second_order_singular(), Mesh.uniform(0, 5, 30))
    a = solve(nlp, nlp.cold_start())
    b = solve(nlp, nlp.cold_start())
    assert a.iterations == b.iterations
    assert np.array_equal(a.primal, b.primal)
    assert np.array_equal(a.eq_multipliers, b.eq_multipliers)


def test_max_iter_returns_iterate():
    nlp = transcribe_dc(second_order_singular(), Mesh.uniform(0, 5, 30))
    res = solve(nlp, nlp.cold_start(), SolverOptions(max_iter=2, acceptable_iter=100))
    assert res.status == "max_iter"
    assert res.iterations == 2
    assert res.primal.shape == (nlp.dim,)
    assert not res.success
    assert res.status in STATUSES


def test_infeasible_equalities():
    # w1 + w2 = 1 and w1 + w2 = 3
    qp = QuadraticProgram(np.eye(2), np.zeros(2), [[1.0, 1.0], [1.0, 1.0]], [1.0, 3.0], [-5, -5], [5, 5])
    res = solve(qp, np.zeros(2), SolverOptions(max_iter=60))
    assert res.status != "optimal"
    assert res.status in STATUSES


def test_dc_open_loop_objective(second_order_runs):
    res = second_order_runs["dc"].result
    assert res.status == "optimal"
    assert res.objective == pytest.approx(0.37699186, abs=5e-6)
