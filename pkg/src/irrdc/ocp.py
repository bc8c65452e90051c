"""Continuous-time optimal control problems and piecewise-polynomial trajectories.

All model callbacks are batched: states arrive as ``(N, n)`` arrays, controls as
``(N, m)`` and times as ``(N,)``, so a whole mesh is evaluated in one call.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class DomainError(ValueError):
    """Evaluation requested outside the trajectory's time horizon."""


Array = np.ndarray


@dataclass(frozen=True)
class OcpDefinition:
    """A fixed-horizon Bolza problem with explicit ODE dynamics.

    ``dynamics_hessian(x, u, t, lam)`` returns ``sum_i lam_i * d2 f_i`` with
    respect to the stacked ``(x, u)`` vector, shape ``(N, n+m, n+m)``.  When it
    (or ``lagrange_hessian``) is omitted, second derivatives are obtained by
    central differences of the supplied Jacobians.
    """

    n_states: int
    n_controls: int
    t0: float
    tf: float
    dynamics: Callable[[Array, Array, Array], Array]
    dynamics_jacobians: Callable[[Array, Array, Array], tuple[Array, Array]]
    initial_state: Array
    u_lower: Array
    u_upper: Array
    lagrange_cost: Optional[Callable[[Array, Array, Array], Array]] = None
    lagrange_gradients: Optional[Callable[[Array, Array, Array], tuple[Array, Array]]] = None
    mayer_cost: Optional[Callable[[Array, Array, float, float], float]] = None
    mayer_gradients: Optional[Callable[[Array, Array, float, float], tuple[Array, Array]]] = None
    x_lower: Optional[Array] = None
    x_upper: Optional[Array] = None
    terminal_state: Optional[Array] = None
    dynamics_hessian: Optional[Callable[[Array, Array, Array, Array], Array]] = None
    lagrange_hessian: Optional[Callable[[Array, Array, Array], Array]] = None
    mayer_hessian: Optional[Callable[[Array, Array, float, float], Array]] = None
    name: str = "ocp"

    def __post_init__(self):
        n, m = self.n_states, self.n_controls
        if n < 1 or m < 1:
            raise ValueError("n_states and n_controls must be positive")
        if not self.tf > self.t0:
            raise ValueError(f"tf ({self.tf}) must exceed t0 ({self.t0})")
        conv = {
            "initial_state": n,
            "u_lower": m,
            "u_upper": m,
            "x_lower": n,
            "x_upper": n,
            "terminal_state": n,
        }
        for field, size in conv.items():
            value = getattr(self, field)
            if value is None:
                continue
            arr = np.array(value, dtype=float).reshape(-1)
            if arr.shape != (size,):
                raise ValueError(f"{field} must have length {size}, got {arr.shape[0]}")
            arr.setflags(write=False)
            object.__setattr__(self, field, arr)
        if np.any(self.u_lower > self.u_upper):
            raise ValueError("u_lower must not exceed u_upper")
        if self.x_lower is not None and self.x_upper is not None:
            if np.any(self.x_lower > self.x_upper):
                raise ValueError("x_lower must not exceed x_upper")
        if self.lagrange_cost is not None and self.lagrange_gradients is None:
            raise ValueError("lagrange_cost requires lagrange_gradients")
        if self.mayer_cost is not None and self.mayer_gradients is None:
            raise ValueError("mayer_cost requires mayer_gradients")

    @property
    def horizon(self) -> float:
        return self.tf - self.t0

    def with_horizon(self, t0: float, tf: float, initial_state=None) -> "OcpDefinition":
        """Copy of the problem on ``[t0, tf]``, optionally from a new initial state."""
        x0 = self.initial_state if initial_state is None else initial_state
        return dataclasses.replace(self, t0=float(t0), tf=float(tf), initial_state=x0)

    # -- batched evaluation helpers -------------------------------------------------

    def f(self, x, u, t) -> Array:
        return np.asarray(self.dynamics(x, u, t), dtype=float)

    def running_cost(self, x, u, t) -> Array:
        if self.lagrange_cost is None:
            return np.zeros(len(t))
        return np.asarray(self.lagrange_cost(x, u, t), dtype=float)

    def running_cost_gradients(self, x, u, t) -> tuple[Array, Array]:
        if self.lagrange_cost is None:
            return np.zeros_like(x), np.zeros_like(u)
        return self.lagrange_gradients(x, u, t)

    def terminal_cost(self, x0, xf) -> float:
        if self.mayer_cost is None:
            return 0.0
        return float(self.mayer_cost(x0, xf, self.t0, self.tf))

    def terminal_cost_gradients(self, x0, xf) -> tuple[Array, Array]:
        if self.mayer_cost is None:
            return np.zeros(self.n_states), np.zeros(self.n_states)
        return self.mayer_gradients(x0, xf, self.t0, self.tf)

    def weighted_dynamics_hessian(self, x, u, t, lam) -> Array:
        if self.dynamics_hessian is not None:
            return self.dynamics_hessian(x, u, t, lam)

        def grad(xx, uu):
            fx, fu = self.dynamics_jacobians(xx, uu, t)
            return np.concatenate(
                [np.einsum("ki,kij->kj", lam, fx), np.einsum("ki,kij->kj", lam, fu)], axis=1
            )

        return _fd_hessian(grad, x, u)

    def running_cost_hessian(self, x, u, t) -> Array:
        nv = self.n_states + self.n_controls
        if self.lagrange_cost is None:
            return np.zeros((len(t), nv, nv))
        if self.lagrange_hessian is not None:
            return self.lagrange_hessian(x, u, t)

        def grad(xx, uu):
            gx, gu = self.lagrange_gradients(xx, uu, t)
            return np.concatenate([gx, gu], axis=1)

        return _fd_hessian(grad, x, u)

    def terminal_cost_hessian(self, x0, xf) -> Array:
        n = self.n_states
        if self.mayer_cost is None:
            return np.zeros((2 * n, 2 * n))
        if self.mayer_hessian is not None:
            return self.mayer_hessian(x0, xf, self.t0, self.tf)
        z = np.concatenate([x0, xf])
        out = np.empty((2 * n, 2 * n))
        for j in range(2 * n):
            step = 1e-6 * max(1.0, abs(z[j]))
            zp, zm = z.copy(), z.copy()
            zp[j] += step
            zm[j] -= step
            gp = np.concatenate(self.terminal_cost_gradients_at(zp))
            gm = np.concatenate(self.terminal_cost_gradients_at(zm))
            out[:, j] = (gp - gm) / (2 * step)
        return 0.5 * (out + out.T)

    def terminal_cost_gradients_at(self, z):
        n = self.n_states
        return self.terminal_cost_gradients(z[:n], z[n:])


def _fd_hessian(grad, x, u, rel_step=1e-6):
    n = x.shape[1]
    nv = n + u.shape[1]
    out = np.empty((x.shape[0], nv, nv))
    for j in range(nv):
        xp, xm, up, um = x.copy(), x.copy(), u.copy(), u.copy()
        if j < n:
            step = rel_step * np.maximum(1.0, np.abs(x[:, j]))
            xp[:, j] += step
            xm[:, j] -= step
        else:
            step = rel_step * np.maximum(1.0, np.abs(u[:, j - n]))
            up[:, j - n] += step
            um[:, j - n] -= step
        out[:, :, j] = (grad(xp, up) - grad(xm, um)) / (2 * step)[:, None]
    return 0.5 * (out + out.transpose(0, 2, 1))


@dataclass(frozen=True)
class Mesh:
    node_times: Array

    def __post_init__(self):
        tau = np.array(self.node_times, dtype=float).reshape(-1)
        if tau.size < 2:
            raise ValueError("a mesh needs at least one interval")
        if np.any(np.diff(tau) <= 0):
            raise ValueError("mesh node times must be strictly increasing")
        tau.setflags(write=False)
        object.__setattr__(self, "node_times", tau)

    @classmethod
    def uniform(cls, t0: float, tf: float, n_intervals: int) -> "Mesh":
        if n_intervals < 1:
            raise ValueError("n_intervals must be >= 1")
        tau = np.linspace(t0, tf, n_intervals + 1)
        tau[0], tau[-1] = t0, tf
        return cls(tau)

    @property
    def n_intervals(self) -> int:
        return self.node_times.size - 1

    Z = n_intervals

    @property
    def t0(self) -> float:
        return float(self.node_times[0])

    @property
    def tf(self) -> float:
        return float(self.node_times[-1])

    @property
    def steps(self) -> Array:
        return np.diff(self.node_times)

    @property
    def midpoints(self) -> Array:
        tau = self.node_times
        return 0.5 * (tau[:-1] + tau[1:])


# Cubic Hermite basis on s in [0, 1] and its derivative.
def hermite_basis(s):
    s = np.asarray(s, dtype=float)
    s2, s3 = s * s, s * s * s
    return (2 * s3 - 3 * s2 + 1, s3 - 2 * s2 + s, -2 * s3 + 3 * s2, s3 - s2)


def hermite_basis_derivative(s):
    s = np.asarray(s, dtype=float)
    s2 = s * s
    return (6 * s2 - 6 * s, 3 * s2 - 4 * s + 1, -6 * s2 + 6 * s, 3 * s2 - 2 * s)


def quadratic_basis(s):
    """Lagrange basis through s = 0, 1/2, 1 (left node, midpoint, right node)."""
    s = np.asarray(s, dtype=float)
    return ((1 - s) * (1 - 2 * s), 4 * s * (1 - s), s * (2 * s - 1))


@dataclass(frozen=True)
class Trajectory:
    """Hermite-Simpson trajectory: cubic states, quadratic controls per interval.

    ``node_derivatives`` holds the dynamics evaluated at the nodes; they are
    the endpoint slopes of each cubic state segment.
    """

    mesh: Mesh
    node_states: Array
    mid_states: Array
    node_controls: Array
    mid_controls: Array
    node_derivatives: Array

    def __post_init__(self):
        Z = self.mesh.n_intervals
        for field, rows in (
            ("node_states", Z + 1),
            ("mid_states", Z),
            ("node_controls", Z + 1),
            ("mid_controls", Z),
            ("node_derivatives", Z + 1),
        ):
            arr = np.array(getattr(self, field), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.shape[0] != rows:
                raise ValueError(f"{field} needs {rows} rows, got {arr.shape[0]}")
            arr.setflags(write=False)
            object.__setattr__(self, field, arr)

    @classmethod
    def from_values(cls, ocp: OcpDefinition, mesh: Mesh, node_states, mid_states,
                    node_controls, mid_controls) -> "Trajectory":
        xs = np.atleast_2d(np.asarray(node_states, dtype=float).reshape(mesh.n_intervals + 1, -1))
        us = np.atleast_2d(np.asarray(node_controls, dtype=float).reshape(mesh.n_intervals + 1, -1))
        derivs = ocp.f(xs, us, mesh.node_times)
        return cls(mesh, xs, mid_states, us, mid_controls, derivs)

    @property
    def t0(self) -> float:
        return self.mesh.t0

    @property
    def tf(self) -> float:
        return self.mesh.tf

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        tau = self.mesh.node_times
        if np.any(t < tau[0]) or np.any(t > tau[-1]) or np.any(~np.isfinite(t)):
            raise DomainError(f"time outside trajectory horizon [{tau[0]}, {tau[-1]}]")
        k = np.clip(np.searchsorted(tau, t, side="right") - 1, 0, tau.size - 2)
        h = tau[k + 1] - tau[k]
        s = (t - tau[k]) / h
        return k, h, s

    def eval_state(self, t):
        k, h, s = self._locate(t)
        b00, b10, b01, b11 = hermite_basis(s)
        X, F = self.node_states, self.node_derivatives
        out = (b00[..., None] * X[k] + (h * b10)[..., None] * F[k]
               + b01[..., None] * X[k + 1] + (h * b11)[..., None] * F[k + 1])
        return out

    def eval_state_derivative(self, t):
        k, h, s = self._locate(t)
        d00, d10, d01, d11 = hermite_basis_derivative(s)
        X, F = self.node_states, self.node_derivatives
        return ((d00 / h)[..., None] * X[k] + d10[..., None] * F[k]
                + (d01 / h)[..., None] * X[k + 1] + d11[..., None] * F[k + 1])

    def eval_control(self, t):
        k, _, s = self._locate(t)
        l0, lm, l1 = quadratic_basis(s)
        U, Um = self.node_controls, self.mid_controls
        return l0[..., None] * U[k] + lm[..., None] * Um[k] + l1[..., None] * U[k + 1]


def eval_state(traj: Trajectory, t):
    """State of ``traj`` at time(s) ``t``; raises :class:`DomainError` outside the horizon."""
    return traj.eval_state(t)


def eval_control(traj: Trajectory, t):
    return traj.eval_control(t)


def check_ocp_derivatives(ocp: OcpDefinition, n_points: int = 100, seed: int = 0,
                          scale: float = 1.0, step: float = 1e-6) -> float:
    """Largest relative error between supplied first derivatives and central differences.

    Points are drawn uniformly from ``[-scale, scale]`` for states and inside the
    control bounds.
    """
    rng = np.random.default_rng(seed)
    n, m = ocp.n_states, ocp.n_controls
    x = rng.uniform(-scale, scale, size=(n_points, n))
    lo = np.where(np.isfinite(ocp.u_lower), ocp.u_lower, -scale)
    hi = np.where(np.isfinite(ocp.u_upper), ocp.u_upper, scale)
    u = rng.uniform(lo, hi, size=(n_points, m))
    t = rng.uniform(ocp.t0, ocp.tf, size=n_points)

    worst = 0.0
    fx, fu = ocp.dynamics_jacobians(x, u, t)
    num_x, num_u = _fd_jacobian(lambda a, b: ocp.f(a, b, t), x, u, step)
    worst = max(worst, _rel_err(fx, num_x), _rel_err(fu, num_u))
    if ocp.lagrange_cost is not None:
        gx, gu = ocp.lagrange_gradients(x, u, t)
        nx, nu = _fd_jacobian(lambda a, b: ocp.running_cost(a, b, t)[:, None], x, u, step)
        worst = max(worst, _rel_err(gx, nx[:, 0, :]), _rel_err(gu, nu[:, 0, :]))
    if ocp.mayer_cost is not None:
        for i in range(n_points):
            z = np.concatenate([x[i], x[(i + 1) % n_points]])
            g = np.concatenate(ocp.terminal_cost_gradients_at(z))
            num = np.empty_like(z)
            for j in range(z.size):
                zp, zm = z.copy(), z.copy()
                zp[j] += step
                zm[j] -= step
                num[j] = (ocp.terminal_cost(zp[:n], zp[n:]) - ocp.terminal_cost(zm[:n], zm[n:])) / (2 * step)
            worst = max(worst, _rel_err(g, num))
    return worst


def _fd_jacobian(fun, x, u, step):
    base = fun(x, u)
    N, p = base.shape
    jx = np.empty((N, p, x.shape[1]))
    ju = np.empty((N, p, u.shape[1]))
    for j in range(x.shape[1]):
        xp, xm = x.copy(), x.copy()
        xp[:, j] += step
        xm[:, j] -= step
        jx[:, :, j] = (fun(xp, u) - fun(xm, u)) / (2 * step)
    for j in range(u.shape[1]):
        up, um = u.copy(), u.copy()
        up[:, j] += step
        um[:, j] -= step
        ju[:, :, j] = (fun(x, up) - fun(x, um)) / (2 * step)
    return jx, ju


def _rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if a.size else 0.0
