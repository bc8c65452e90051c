import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from helpers import decay
from irrdc.benchmarks import SmibParams, second_order_singular, smib
from irrdc.ocp import DomainError
from irrdc.oracles import (DIVERGENCE_NORM, SingularPolicyUndefined, aly_chan_analytic, aly_chan_pmp_residuals,
                           rollout_feedback, second_order_analysis, second_order_policy, second_order_reference,
                           second_order_shooting_oracle, smib_analysis, smib_autonomous_eigenvalues,
                           smib_autonomous_matrix, smib_kelley, smib_singular_policy, smib_unstable)

# frozen from the bang/singular closed form cross-checked against an adaptive ODE solve
SWITCH_TIME = 1.4137640785
ANALYTIC_COST = 0.3769919302879695


def test_second_order_policy():
    assert second_order_policy([0.3, -0.2]) == 0.3
    assert second_order_policy([0.0, 0.0]) == 0.0
    assert second_order_policy([1.5, 0.0]) == 1.0
    assert second_order_policy([-7.0, 0.0]) == -1.0


def test_shooting_oracle_cost():
    t_s, J = second_order_shooting_oracle()
    assert J == pytest.approx(0.37699, abs=5e-5)
    assert t_s == pytest.approx(SWITCH_TIME, abs=1e-8)
    assert J == pytest.approx(ANALYTIC_COST, abs=1e-10)


def test_shooting_oracle_against_ode_solver():
    t_s, J = second_order_shooting_oracle()
    ocp = second_order_singular()

    def rhs(t, z):
        x1, x2 = z[:2]
        u = -1.0 if t < t_s else x1
        return [x2, u, 0.5 * (x1 ** 2 + x2 ** 2)]

    sol = solve_ivp(rhs, (0, ocp.tf), [0.0, 1.0, 0.0], rtol=1e-12, atol=1e-13, max_step=1e-2)
    assert sol.y[2, -1] == pytest.approx(J, abs=1e-7)


def test_shooting_oracle_bad_bracket():
    from irrdc.oracles import OracleError

    with pytest.raises(OracleError):
        second_order_shooting_oracle(bracket=(2.0, 3.0))


def test_second_order_reference_structure():
    t, x, u = second_order_reference(501)
    t_s = second_order_analysis().switch_time
    assert np.all(u[t < t_s - 1e-9] == -1.0)
    sing = t > t_s + 1e-9
    assert np.max(np.abs(u[sing] - x[sing, 0])) <= 1e-12
    # the singular arc ends at rest near the origin
    assert abs(x[-1, 1]) <= 1e-6
    assert np.linalg.norm(x[-1]) < 0.05


def test_aly_chan_analytic_values():
    x, u = aly_chan_analytic(0.0)
    assert u == 0.0
    assert np.array_equal(x, [0.0, 1.0, 0.0])
    assert aly_chan_analytic(np.pi / 2)[1] == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(DomainError):
        aly_chan_analytic(2.0)


def test_aly_chan_pmp_residuals():
    res = aly_chan_pmp_residuals(np.linspace(0, np.pi / 2, 101))
    assert max(res.values()) <= 1e-12


def test_smib_policy_at_origin():
    p = SmibParams()
    assert smib_singular_policy([0.0, 0.0], p) == pytest.approx(p.P_M / (p.P_E * np.sin(p.delta_ep)), rel=1e-14)
    assert smib_singular_policy([0.0, 0.0], p) == pytest.approx(0.9938306199, abs=1e-9)
    assert smib_singular_policy([0.0, 0.0], SmibParams(H=5.0)) == pytest.approx(
        smib_singular_policy([0.0, 0.0], p), rel=1e-14)


def test_smib_policy_undefined():
    p = SmibParams()
    with pytest.raises(SingularPolicyUndefined):
        smib_singular_policy([-p.delta_ep, 0.0], p)
    assert issubclass(SingularPolicyUndefined, DomainError)


def test_smib_kelley():
    p = SmibParams()
    assert smib_kelley([0.0, 0.0], p)
    assert smib_kelley([-p.delta_ep, 0.0], p, tol=1e-15)
    assert not smib_kelley([np.pi, 0.0], p)


def test_smib_eigenvalues():
    assert smib_autonomous_eigenvalues() == pytest.approx((10.0, -10.0))
    assert smib_autonomous_eigenvalues(SmibParams(C1=2.0, C2=2.0)) == pytest.approx((1.0, -1.0))
    assert smib_unstable()
    A = smib_autonomous_matrix()
    assert np.sort(np.linalg.eigvals(A).real) == pytest.approx([-10.0, 10.0])


@pytest.mark.parametrize("H", [0.01, 0.1, 1.0, 5.0])
def test_policy_closes_to_linear_dynamics(H):
    p = SmibParams(H=H)
    ocp = smib(p)
    A = smib_autonomous_matrix(p)
    rng = np.random.default_rng(int(H * 100))
    X = rng.uniform([-1.0, -20.0], [2.5, 20.0], size=(100, 2))
    X = X[np.abs(np.sin(X[:, 0] + p.delta_ep)) > 1e-3]
    U = np.array([[smib_singular_policy(x, p)] for x in X])
    F = ocp.f(X, U, np.zeros(len(X)))
    AX = X @ A.T
    assert np.max(np.abs(F - AX) / np.maximum(np.abs(AX), 1e-300)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.2, 2.8), st.floats(-30, 30), st.floats(0.001, 10))
def test_policy_cancellation_property(x1, x2, H):
    p = SmibParams(H=H)
    if abs(np.sin(x1 + p.delta_ep)) < 1e-2:
        return
    u = smib_singular_policy([x1, x2], p)
    f = smib(p).f(np.array([[x1, x2]]), np.array([[u]]), np.zeros(1))[0]
    assert f[0] == x2
    assert f[1] == pytest.approx(100.0 * x1, rel=1e-10, abs=1e-10)


def test_smib_rollout_diverges_from_perturbed_arc():
    p = SmibParams(H=0.01)
    ocp = smib(p)
    res = rollout_feedback(lambda x: smib_singular_policy(x, p), ocp, [0.1, -0.99], 4.0, saturate=False)
    assert res.diverged
    assert res.divergence_time < 4.0
    assert np.linalg.norm(res.x[-1]) > DIVERGENCE_NORM


def test_smib_rollout_matches_linearisation_early():
    # on the stable eigenvector plus a small unstable component the state follows expm(A t) x0
    p = SmibParams(H=0.01)
    ocp = smib(p)
    x0 = np.array([0.1, -0.99])
    res = rollout_feedback(lambda x: smib_singular_policy(x, p), ocp, x0, 0.5, saturate=False)
    from scipy.linalg import expm

    lin = expm(smib_autonomous_matrix(p) * 0.5) @ x0
    assert np.allclose(res.x[-1], lin, rtol=1e-6)


def test_zero_policy_decays():
    res = rollout_feedback(lambda x: 0.0, decay(), [1.0, -2.0], 3.0)
    norms = np.linalg.norm(res.x, axis=1)
    assert np.all(np.diff(norms) < 0)
    assert not res.diverged


def test_second_order_policy_on_singular_arc_decays():
    ocp = second_order_singular()
    x0 = np.array([0.4, -0.4])
    res = rollout_feedback(second_order_policy, ocp, x0, 3.0)
    assert np.linalg.norm(res.x[-1]) < np.linalg.norm(x0)


def test_rollout_reports_undefined_policy():
    p = SmibParams(H=0.01)
    ocp = smib(p)

    def policy(x):
        raise SingularPolicyUndefined("boom")

    res = rollout_feedback(policy, ocp, [0.1, 0.0], 1.0)
    assert not res.diverged
    assert "undefined" in res.reason
    assert res.t.size == 1


def test_analyses_expose_structure():
    a = smib_analysis(SmibParams())
    assert a.kelley_ok(np.zeros(2))
    assert a.switching_structure.control(1.0, np.zeros(2)) == -1.0
    assert a.switching_structure.control(-1.0, np.zeros(2)) == 1.0
    assert a.switching_structure.control(0.0, np.zeros(2)) == pytest.approx(0.9938306199, abs=1e-9)
    b = second_order_analysis()
    assert b.switching_structure.control(0.0, [0.25, 0.0]) == 0.25
