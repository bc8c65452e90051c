import numpy as np
import pytest

from irrdc.benchmarks import SmibParams, aly_chan, get_problem, second_order_singular, smib
from irrdc.ocp import check_ocp_derivatives
from irrdc.simulator import integrate_plant


def test_second_order_definition():
    ocp = second_order_singular()
    assert (ocp.n_states, ocp.n_controls, ocp.tf) == (2, 1, 5.0)
    assert ocp.t0 == 0.0
    assert np.array_equal(ocp.initial_state, [0.0, 1.0])
    assert np.array_equal(ocp.u_lower, [-1.0]) and np.array_equal(ocp.u_upper, [1.0])
    assert ocp.running_cost(np.zeros((1, 2)), np.zeros((1, 1)), np.zeros(1))[0] == 0.0
    assert ocp.running_cost(np.array([[1.0, 2.0]]), np.zeros((1, 1)), np.zeros(1))[0] == 2.5
    assert ocp.mayer_cost is None


def test_aly_chan_definition():
    ocp = aly_chan()
    assert (ocp.n_states, ocp.n_controls) == (3, 1)
    assert ocp.tf == np.pi / 2
    assert np.array_equal(ocp.initial_state, [0.0, 1.0, 0.0])
    assert ocp.lagrange_cost is None
    assert ocp.terminal_cost(np.zeros(3), np.array([0.1, 0.2, 0.3])) == 0.3


def test_aly_chan_zero_control_rollout():
    # x1 = t, x2 = 1, so x3(pi/2) = pi/4 - (pi/2)^3 / 6
    ocp = aly_chan()
    tr = integrate_plant(ocp, ocp.initial_state, lambda t: np.zeros((np.size(t), 1)), 0.0, np.pi / 2)
    assert tr.x[-1, 2] == pytest.approx(np.pi / 4 - (np.pi / 2) ** 3 / 6, abs=1e-12)
    assert tr.x[-1, 2] == pytest.approx(0.139434, abs=1e-6)


def test_aly_chan_analytic_cost_is_zero():
    ocp = aly_chan()
    tr = integrate_plant(ocp, ocp.initial_state, lambda t: -np.sin(t)[:, None], 0.0, np.pi / 2)
    assert abs(ocp.terminal_cost(tr.x[0], tr.x[-1])) <= 1e-6


def test_smib_definition():
    p = SmibParams()
    ocp = smib(p)
    assert (ocp.n_states, ocp.n_controls, ocp.tf) == (2, 1, 4.0)
    assert np.array_equal(ocp.initial_state, [1.5, 15.0])
    assert ocp.running_cost(np.array([[3.0, 30.0]]), np.zeros((1, 1)), np.zeros(1))[0] == pytest.approx(2.0)
    for u in (-1.0, 0.3, 1.0):
        f = ocp.f(np.array([[-p.delta_ep, 0.0]]), np.array([[u]]), np.zeros(1))[0]
        assert f[1] == pytest.approx(p.P_M / (2 * p.H), abs=1e-12)


def test_smib_params_defaults_and_validation():
    p = SmibParams()
    assert (p.C1, p.C2, p.P_M, p.P_E, p.D, p.delta_ep, p.H) == (3.0, 30.0, 1.0, 4.3214, 0.03, 0.235, 0.1)
    with pytest.raises(ValueError):
        SmibParams(H=0.0)
    with pytest.raises(ValueError):
        SmibParams(P_E=-1.0)


@pytest.mark.parametrize("ocp", [second_order_singular(), aly_chan(), smib(), smib(SmibParams(H=0.01))],
                         ids=["second-order", "aly-chan", "smib", "smib-H0.01"])
def test_benchmark_derivatives(ocp):
    assert check_ocp_derivatives(ocp, scale=2.0) <= 1e-6


def test_registry():
    assert get_problem("aly-chan").name == "aly-chan"
    assert get_problem("smib", SmibParams(H=2.0)).f(np.zeros((1, 2)), np.zeros((1, 1)), np.zeros(1))[0, 1] == \
        pytest.approx(1.0 / 4.0)
    with pytest.raises(KeyError):
        get_problem("goddard")
