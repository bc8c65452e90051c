"""Benchmark problems with singular arcs, with exact first and second derivatives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ocp import OcpDefinition


@dataclass(frozen=True)
class SmibParams:
    """Single-machine infinite-bus swing model constants (per unit).

    ``H`` (inertia) has no published value for this case; 0.1 s keeps the
    bang phase short relative to the 4 s horizon.
    """

    C1: float = 3.0
    C2: float = 30.0
    P_M: float = 1.0
    P_E: float = 4.3214
    D: float = 0.03
    delta_ep: float = 0.235
    H: float = 0.1

    def __post_init__(self):
        if self.H <= 0:
            raise ValueError("inertia constant H must be positive")
        if self.P_E <= 0:
            raise ValueError("electrical power P_E must be positive")
        if self.C1 == 0 or self.C2 == 0:
            raise ValueError("cost scales C1, C2 must be nonzero")


def _unit_box(m=1):
    return -np.ones(m), np.ones(m)


def second_order_singular() -> OcpDefinition:
    """Double integrator with quadratic state cost over [0, 5]; x(0) = (0, 1)."""

    def dynamics(x, u, t):
        return np.stack([x[:, 1], u[:, 0]], axis=1)

    def jacobians(x, u, t):
        N = x.shape[0]
        fx = np.zeros((N, 2, 2))
        fx[:, 0, 1] = 1.0
        fu = np.zeros((N, 2, 1))
        fu[:, 1, 0] = 1.0
        return fx, fu

    def hessian(x, u, t, lam):
        return np.zeros((x.shape[0], 3, 3))

    def cost(x, u, t):
        return 0.5 * (x[:, 0] ** 2 + x[:, 1] ** 2)

    def cost_grad(x, u, t):
        return x.copy(), np.zeros_like(u)

    def cost_hess(x, u, t):
        out = np.zeros((x.shape[0], 3, 3))
        out[:, 0, 0] = out[:, 1, 1] = 1.0
        return out

    lo, hi = _unit_box()
    return OcpDefinition(
        n_states=2, n_controls=1, t0=0.0, tf=5.0,
        dynamics=dynamics, dynamics_jacobians=jacobians,
        initial_state=np.array([0.0, 1.0]), u_lower=lo, u_upper=hi,
        lagrange_cost=cost, lagrange_gradients=cost_grad,
        dynamics_hessian=hessian, lagrange_hessian=cost_hess,
        name="second-order",
    )


def aly_chan() -> OcpDefinition:
    """Aly-Chan problem: minimise x3(pi/2); singular on the whole horizon."""

    def dynamics(x, u, t):
        return np.stack([x[:, 1], u[:, 0], 0.5 * (x[:, 1] ** 2 - x[:, 0] ** 2)], axis=1)

    def jacobians(x, u, t):
        N = x.shape[0]
        fx = np.zeros((N, 3, 3))
        fx[:, 0, 1] = 1.0
        fx[:, 2, 0] = -x[:, 0]
        fx[:, 2, 1] = x[:, 1]
        fu = np.zeros((N, 3, 1))
        fu[:, 1, 0] = 1.0
        return fx, fu

    def hessian(x, u, t, lam):
        out = np.zeros((x.shape[0], 4, 4))
        out[:, 0, 0] = -lam[:, 2]
        out[:, 1, 1] = lam[:, 2]
        return out

    def mayer(x0, xf, t0, tf):
        return float(xf[2])

    def mayer_grad(x0, xf, t0, tf):
        g = np.zeros(3)
        g[2] = 1.0
        return np.zeros(3), g

    def mayer_hess(x0, xf, t0, tf):
        return np.zeros((6, 6))

    lo, hi = _unit_box()
    return OcpDefinition(
        n_states=3, n_controls=1, t0=0.0, tf=np.pi / 2,
        dynamics=dynamics, dynamics_jacobians=jacobians,
        initial_state=np.array([0.0, 1.0, 0.0]), u_lower=lo, u_upper=hi,
        mayer_cost=mayer, mayer_gradients=mayer_grad,
        dynamics_hessian=hessian, mayer_hessian=mayer_hess,
        name="aly-chan",
    )


def smib(params: SmibParams | None = None) -> OcpDefinition:
    """Swing-equation recovery problem over [0, 4] from x(0) = (1.5, 15).

    The running cost is the scaled norm (x1/C1)^2 + (x2/C2)^2, which is the
    weighting that yields the published singular feedback law.
    """
    p = params or SmibParams()
    a = p.P_E / (2 * p.H)
    w1, w2 = 1.0 / p.C1 ** 2, 1.0 / p.C2 ** 2

    def dynamics(x, u, t):
        x2dot = (p.P_M - p.D * x[:, 1]) / (2 * p.H) - a * np.sin(x[:, 0] + p.delta_ep) * u[:, 0]
        return np.stack([x[:, 1], x2dot], axis=1)

    def jacobians(x, u, t):
        N = x.shape[0]
        ang = x[:, 0] + p.delta_ep
        fx = np.zeros((N, 2, 2))
        fx[:, 0, 1] = 1.0
        fx[:, 1, 0] = -a * np.cos(ang) * u[:, 0]
        fx[:, 1, 1] = -p.D / (2 * p.H)
        fu = np.zeros((N, 2, 1))
        fu[:, 1, 0] = -a * np.sin(ang)
        return fx, fu

    def hessian(x, u, t, lam):
        ang = x[:, 0] + p.delta_ep
        out = np.zeros((x.shape[0], 3, 3))
        out[:, 0, 0] = lam[:, 1] * a * np.sin(ang) * u[:, 0]
        out[:, 0, 2] = out[:, 2, 0] = -lam[:, 1] * a * np.cos(ang)
        return out

    def cost(x, u, t):
        return w1 * x[:, 0] ** 2 + w2 * x[:, 1] ** 2

    def cost_grad(x, u, t):
        return np.stack([2 * w1 * x[:, 0], 2 * w2 * x[:, 1]], axis=1), np.zeros_like(u)

    def cost_hess(x, u, t):
        out = np.zeros((x.shape[0], 3, 3))
        out[:, 0, 0] = 2 * w1
        out[:, 1, 1] = 2 * w2
        return out

    lo, hi = _unit_box()
    return OcpDefinition(
        n_states=2, n_controls=1, t0=0.0, tf=4.0,
        dynamics=dynamics, dynamics_jacobians=jacobians,
        initial_state=np.array([1.5, 15.0]), u_lower=lo, u_upper=hi,
        lagrange_cost=cost, lagrange_gradients=cost_grad,
        dynamics_hessian=hessian, lagrange_hessian=cost_hess,
        name="smib",
    )


PROBLEMS = {
    "second-order": second_order_singular,
    "aly-chan": aly_chan,
    "smib": smib,
}


def get_problem(name: str, smib_params: SmibParams | None = None) -> OcpDefinition:
    if name not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
    if name == "smib":
        return smib(smib_params)
    return PROBLEMS[name]()
