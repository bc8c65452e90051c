import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from irrdc.estimators import CollocationController


def test_fit_predict_transform_second_order():
    est = CollocationController(problem="second-order", method="dc", mesh_Z=40).fit()
    assert est.status_ == "optimal"
    assert est.n_features_in_ == 2
    T = np.array([0.0, 1.0, 5.0])
    x = est.transform(T)
    u = est.predict(T.reshape(-1, 1))
    assert x.shape == (3, 2) and u.shape == (3, 1)
    assert np.array_equal(x[0], [0.0, 1.0])
    assert u[1, 0] == pytest.approx(-1.0, abs=1e-6)
    assert est.score() == -est.simulated_cost_
    assert est.objective_ == pytest.approx(0.377, abs=2e-3)


def test_initial_state_from_X():
    est = CollocationController(problem="aly-chan", method="irrdc", mesh_Z=20).fit([[0.0, 1.0, 0.5]])
    assert est.transform([0.0])[0, 2] == 0.5
    with pytest.raises(ValueError):
        CollocationController(problem="aly-chan", mesh_Z=20).fit([[0.0, 1.0]])


def test_validation_and_fit_state():
    est = CollocationController(problem="second-order", mesh_Z=10)
    with pytest.raises(NotFittedError):
        est.predict([0.5])
    with pytest.raises(ValueError):
        CollocationController(method="shooting").fit()
    with pytest.raises(ValueError):
        CollocationController(mesh_Z=1).fit()
    est.fit()
    with pytest.raises(ValueError):
        est.predict([6.0])


def test_clone_and_params():
    est = CollocationController(problem="smib", eta=20.0, H=0.5)
    params = est.get_params()
    assert params["eta"] == 20.0 and params["H"] == 0.5
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(mesh_Z=12)
    assert twin.mesh_Z == 12 and est.mesh_Z == 100


def test_eps_abs_default_follows_problem():
    est = CollocationController(problem="aly-chan", method="irrdc", mesh_Z=20).fit()
    assert est.result_.success
    assert est.integrated_residual_ <= 1e-12 + 1e-15
