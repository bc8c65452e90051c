"""scikit-learn style facade over transcription and solve.

``fit`` solves the optimal control problem (optionally from an initial state
given as a single sample row); ``predict`` returns the control and
``transform`` the state at the requested times. ``fit_transform`` is not
offered since the fit input (an initial state) and the transform input
(times) differ.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .benchmarks import SmibParams, get_problem
from .experiments import SMIB_PARAMS, default_irr, solve_open_loop
from .solver import SolverOptions
from .transcription import IrrConfig


def _times(T) -> np.ndarray:
    arr = check_array(np.asarray(T, dtype=float).reshape(-1, 1) if np.ndim(T) <= 1 else T,
                      ensure_2d=True, dtype=float)
    if arr.shape[1] != 1:
        raise ValueError(f"expected a column of times, got shape {arr.shape}")
    return arr[:, 0]


class CollocationController(BaseEstimator):
    """Open-loop optimal controller for a benchmark problem.

    Parameters mirror the run configuration: ``problem``, ``method``
    (``"dc"`` or ``"irrdc"``), ``mesh_Z``, the residual cap settings
    ``eta``/``eps_abs`` (``None`` picks the problem default), ``tol_kkt``,
    ``max_iter`` and the SMIB inertia ``H`` (``None`` picks the scenario value).
    """

    def __init__(self, problem="second-order", method="irrdc", mesh_Z=100, eta=10.0, eps_abs=None,
                 tol_kkt=1e-9, max_iter=500, H=None):
        self.problem = problem
        self.method = method
        self.mesh_Z = mesh_Z
        self.eta = eta
        self.eps_abs = eps_abs
        self.tol_kkt = tol_kkt
        self.max_iter = max_iter
        self.H = H

    def _ocp(self, X):
        params = SMIB_PARAMS if self.H is None else SmibParams(H=self.H)
        ocp = get_problem(self.problem, params)
        if X is None:
            return ocp
        x0 = check_array(X, dtype=float, ensure_2d=True)
        if x0.shape != (1, ocp.n_states):
            raise ValueError(f"X must hold one initial state of length {ocp.n_states}, got shape {x0.shape}")
        return ocp.with_horizon(ocp.t0, ocp.tf, x0[0])

    def fit(self, X=None, y=None):
        """Solve the problem; ``X`` optionally overrides the initial state. ``y`` is ignored."""
        if self.method not in ("dc", "irrdc"):
            raise ValueError(f"unknown method {self.method!r}")
        if int(self.mesh_Z) < 2:
            raise ValueError("mesh_Z must be at least 2")
        ocp = self._ocp(X)
        irr = None
        if self.method == "irrdc":
            floor = default_irr(ocp).eps_abs if self.eps_abs is None else self.eps_abs
            irr = IrrConfig(eta=self.eta, eps_abs=floor)
        run = solve_open_loop(ocp, self.method, int(self.mesh_Z),
                              SolverOptions(tol_kkt=self.tol_kkt, max_iter=self.max_iter), irr)
        if run.trajectory is None:
            raise RuntimeError(run.info.get("error", "solve failed"))
        self.ocp_ = ocp
        self.result_ = run.result
        self.trajectory_ = run.trajectory
        self.status_ = run.result.status
        self.objective_ = float(run.result.objective)
        self.simulated_cost_ = float(run.simulation.cost)
        self.total_variation_ = float(run.total_variation)
        self.integrated_residual_ = float(run.integrated_residual)
        self.n_features_in_ = ocp.n_states
        return self

    def _check_times(self, T):
        check_is_fitted(self, "trajectory_")
        t = _times(T)
        lo, hi = self.trajectory_.t0, self.trajectory_.tf
        if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
            raise ValueError(f"times must lie in [{lo}, {hi}]")
        return np.clip(t, lo, hi)

    def predict(self, T):
        """Interpolated control at times ``T``; shape (N, m)."""
        t = self._check_times(T)
        return np.asarray(self.trajectory_.eval_control(t))

    def transform(self, T):
        """Interpolated state at times ``T``; shape (N, n)."""
        t = self._check_times(T)
        return np.asarray(self.trajectory_.eval_state(t))

    def score(self, X=None, y=None):
        """Negative simulated cost, so larger is better."""
        check_is_fitted(self, "trajectory_")
        return -self.simulated_cost_
