"""Small hand-built problems for unit tests."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from irrdc.ocp import Mesh, OcpDefinition, Trajectory


def integrator(t0=0.0, tf=1.0, x0=0.0, cost=None, mayer=None, terminal=None, u_bound=10.0):
    """Scalar ``x' = u``; ``cost`` maps (x, u, t) to (value, dx, du) per point."""

    def dyn(x, u, t):
        return u[:, :1].copy()

    def jac(x, u, t):
        N = x.shape[0]
        return np.zeros((N, 1, 1)), np.ones((N, 1, 1))

    kw = {}
    if cost is not None:
        kw["lagrange_cost"] = lambda x, u, t: cost(x, u, t)[0]
        kw["lagrange_gradients"] = lambda x, u, t: (cost(x, u, t)[1], cost(x, u, t)[2])
    if mayer is not None:
        kw["mayer_cost"] = lambda x0_, xf, a, b: float(xf[0])
        kw["mayer_gradients"] = lambda x0_, xf, a, b: (np.zeros(1), np.ones(1))
    return OcpDefinition(
        n_states=1, n_controls=1, t0=t0, tf=tf, dynamics=dyn, dynamics_jacobians=jac,
        initial_state=np.array([x0]), u_lower=np.array([-u_bound]), u_upper=np.array([u_bound]),
        terminal_state=None if terminal is None else np.array([terminal]), name="integrator", **kw)


def time_cost(g):
    """Running cost ``g(t)`` independent of state and control."""
    return lambda x, u, t: (g(t), np.zeros_like(x), np.zeros_like(u))


def effort_cost(x, u, t):
    return u[:, 0] ** 2, np.zeros_like(x), 2 * u


def explicit(f_of_t, n=1, t0=0.0, tf=1.0, x0=None):
    """``x' = f(t)`` with ``n`` states and a dummy control."""

    def dyn(x, u, t):
        return np.broadcast_to(np.asarray(f_of_t(t), dtype=float).reshape(-1, n), x.shape).copy()

    def jac(x, u, t):
        N = x.shape[0]
        return np.zeros((N, n, n)), np.zeros((N, n, 1))

    return OcpDefinition(
        n_states=n, n_controls=1, t0=t0, tf=tf, dynamics=dyn, dynamics_jacobians=jac,
        initial_state=np.zeros(n) if x0 is None else np.asarray(x0, dtype=float),
        u_lower=np.array([-1.0]), u_upper=np.array([1.0]), name="explicit")


def decay(rate=1.0):
    """``x' = -rate * x`` in two states."""

    def dyn(x, u, t):
        return -rate * x

    def jac(x, u, t):
        N = x.shape[0]
        return np.broadcast_to(-rate * np.eye(2), (N, 2, 2)).copy(), np.zeros((N, 2, 1))

    return OcpDefinition(n_states=2, n_controls=1, t0=0.0, tf=4.0, dynamics=dyn, dynamics_jacobians=jac,
                         initial_state=np.array([1.0, -2.0]), u_lower=np.array([-1.0]),
                         u_upper=np.array([1.0]), name="decay")


def trajectory_from_functions(ocp, mesh, x_of_t, u_of_t):
    tn, tm = mesh.node_times, mesh.midpoints
    return Trajectory.from_values(ocp, mesh, x_of_t(tn), x_of_t(tm), u_of_t(tn), u_of_t(tm))


class QuadraticProgram:
    """``min 0.5 w'Pw + q'w  s.t.  Aw = b,  lower <= w <= upper`` in the solver's NLP protocol."""

    def __init__(self, P, q, A, b, lower=None, upper=None):
        self.P = np.asarray(P, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.A = np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, self.q.size)
        self.b = np.asarray(b, dtype=float).reshape(-1)
        n = self.q.size
        self.lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        self.upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)

    @property
    def dim(self):
        return self.q.size

    @property
    def n_eq(self):
        return self.b.size

    def objective(self, w):
        return float(0.5 * w @ self.P @ w + self.q @ w)

    def gradient(self, w):
        return self.P @ w + self.q

    def constraints(self, w):
        return self.A @ w - self.b

    def jacobian(self, w):
        return sp.csr_matrix(self.A)

    def hessian(self, w, lam, obj_factor=1.0):
        return sp.csr_matrix(obj_factor * self.P)


def uniform_mesh(t0, tf, Z):
    return Mesh.uniform(t0, tf, Z)
