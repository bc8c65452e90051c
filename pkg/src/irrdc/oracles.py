"""Hand-derived optimality results for the benchmark problems.

Each benchmark gets its singular feedback law, the reduced Kelley test where
one applies, and reference trajectories used to judge the numerical methods.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .benchmarks import SmibParams, second_order_singular
from .ocp import DomainError, OcpDefinition

DIVERGENCE_NORM = 1e3
_SMIB_DENOM_TOL = 1e-9


class OracleError(RuntimeError):
    """An oracle computation could not produce a reference value."""


class SingularPolicyUndefined(DomainError):
    """The singular feedback law has a vanishing denominator at this state."""


@dataclass(frozen=True)
class SwitchingStructure:
    """Case split of the control on the sign of a switching function ``S``.

    ``S > 0`` selects ``lower``, ``S < 0`` selects ``upper`` and ``S == 0`` on an
    interval selects the singular law.
    """

    lower: float
    upper: float
    singular: Callable[[np.ndarray], float]

    def control(self, switching_value: float, x) -> float:
        if switching_value > 0:
            return self.lower
        if switching_value < 0:
            return self.upper
        return self.singular(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SingularAnalysis:
    policy: Callable[[np.ndarray], float]
    kelley_ok: Callable[[np.ndarray], bool]
    switching_structure: SwitchingStructure
    switch_time: Optional[float] = None


def second_order_policy(x) -> float:
    """Singular feedback ``u = x1`` of the double integrator, clamped to [-1, 1]."""
    return float(np.clip(np.asarray(x, dtype=float)[0], -1.0, 1.0))


def _second_order_arcs(t_switch, t):
    """State and control at times ``t`` for a bang arc ``u = -1`` then ``u = x1``.

    Both arcs are linear and solved in closed form: a parabola, then the
    hyperbolic flow of ``x1' = x2, x2' = x1``.
    """
    ocp = second_order_singular()
    x10, x20 = ocp.initial_state
    t = np.asarray(t, dtype=float)
    tb = np.minimum(t, t_switch)
    x1 = x10 + x20 * tb - 0.5 * tb ** 2
    x2 = x20 - tb
    u = -np.ones_like(t)
    s1 = x10 + x20 * t_switch - 0.5 * t_switch ** 2
    s2 = x20 - t_switch
    tau = t - t_switch
    sing = tau > 0
    ch, sh = np.cosh(tau[sing]), np.sinh(tau[sing])
    x1[sing] = s1 * ch + s2 * sh
    x2[sing] = s1 * sh + s2 * ch
    u[sing] = x1[sing]
    if np.any(np.abs(u[sing]) > 1.0):
        raise OracleError("singular control leaves the admissible box for this switching time")
    return np.stack([x1, x2], axis=-1), u


def _second_order_cost(t_switch) -> float:
    """Exact cost of the bang-then-singular control with switch at ``t_switch``."""
    ocp = second_order_singular()
    x10, x20 = ocp.initial_state
    # bang arc: integrate the polynomial 0.5 (x1^2 + x2^2) exactly
    p1 = np.polynomial.Polynomial([x10, x20, -0.5])
    p2 = np.polynomial.Polynomial([x20, -1.0])
    bang = (0.5 * (p1 ** 2 + p2 ** 2)).integ()
    J = bang(t_switch) - bang(0.0)
    s1, s2 = p1(t_switch), p2(t_switch)
    T = ocp.tf - t_switch
    # x1^2 + x2^2 = (s1^2 + s2^2) cosh 2tau + 2 s1 s2 sinh 2tau
    J += 0.5 * ((s1 ** 2 + s2 ** 2) * np.sinh(2 * T) / 2 + s1 * s2 * (np.cosh(2 * T) - 1))
    return float(J)


@lru_cache(maxsize=None)
def second_order_shooting_oracle(bracket=(1.0, 2.0), tol=1e-10) -> tuple[float, float]:
    """Switching time and cost of the bang-then-singular structure of the double integrator.

    The bang arc ``u = -1`` runs on ``[0, t_s]`` and the singular feedback
    ``u = x1`` afterwards; ``t_s`` minimizes the exact arc cost.
    """
    a, b = map(float, bracket)
    res = minimize_scalar(_second_order_cost, bounds=(a, b), method="bounded",
                          options={"xatol": tol})
    t_s, J = float(res.x), float(res.fun)
    if not (J < _second_order_cost(a) and J < _second_order_cost(b)):
        raise OracleError(f"switching-time minimum not bracketed by {bracket}")
    return t_s, J


def second_order_reference(n_samples: int = 2001):
    """Sampled oracle trajectory ``(t, x, u)`` of the double integrator at the optimal switch."""
    t_s, _ = second_order_shooting_oracle()
    grid = np.linspace(0.0, second_order_singular().tf, n_samples)
    x, u = _second_order_arcs(t_s, grid)
    return grid, x, u


def second_order_analysis() -> SingularAnalysis:
    # switching function is the costate of x2; singular when it vanishes on an interval
    t_s, _ = second_order_shooting_oracle()
    return SingularAnalysis(
        policy=second_order_policy,
        kelley_ok=lambda x: True,
        switching_structure=SwitchingStructure(-1.0, 1.0, second_order_policy),
        switch_time=t_s,
    )


def aly_chan_analytic(t):
    """Optimal state and control of the Aly-Chan problem at time(s) ``t`` in [0, pi/2]."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -1e-14) or np.any(t_arr > np.pi / 2 + 1e-14):
        raise DomainError("aly_chan_analytic is defined on [0, pi/2]")
    x = np.stack([np.sin(t_arr), np.cos(t_arr), 0.25 * np.sin(2 * t_arr)], axis=-1)
    return x, -np.sin(t_arr)


def aly_chan_costates(t):
    """Costates along the analytic solution; ``lambda_2`` vanishes identically."""
    t_arr = np.asarray(t, dtype=float)
    return np.stack([-np.cos(t_arr), np.zeros_like(t_arr), np.ones_like(t_arr)], axis=-1)


def aly_chan_pmp_residuals(t) -> dict:
    """Max-abs residuals of the costate equations, dH/du and the transversality conditions."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    x, u = aly_chan_analytic(t_arr)
    lam = aly_chan_costates(t_arr)
    lam_dot = np.stack([np.sin(t_arr), np.zeros_like(t_arr), np.zeros_like(t_arr)], axis=-1)
    # -dH/dx for H = l1 x2 + l2 u + l3 (x2^2 - x1^2)/2
    rhs = np.stack([lam[:, 2] * x[:, 0], -lam[:, 0] - lam[:, 2] * x[:, 1], np.zeros_like(t_arr)], axis=-1)
    lam_f = aly_chan_costates(np.pi / 2)
    x_dot = np.stack([np.cos(t_arr), -np.sin(t_arr), 0.5 * np.cos(2 * t_arr)], axis=-1)
    f = np.stack([x[:, 1], u, 0.5 * (x[:, 1] ** 2 - x[:, 0] ** 2)], axis=-1)
    return {
        "costate": float(np.max(np.abs(lam_dot - rhs))),
        "stationarity": float(np.max(np.abs(lam[:, 1]))),
        "transversality": float(np.max(np.abs(lam_f - np.array([0.0, 0.0, 1.0])))),
        "dynamics": float(np.max(np.abs(x_dot - f))),
    }


def smib_singular_policy(x, p: SmibParams | None = None) -> float:
    """Singular feedback of the swing problem; unsaturated."""
    p = p or SmibParams()
    x1, x2 = np.asarray(x, dtype=float)[:2]
    den = p.P_E * np.sin(p.delta_ep + x1)
    if abs(den) <= _SMIB_DENOM_TOL:
        raise SingularPolicyUndefined(f"sin(delta_ep + x1) vanishes at x1={x1}")
    num = -p.H * p.C2 ** 2 * (2 * x1 / p.C1 ** 2 - (p.P_M - p.D * x2) / (p.H * p.C2 ** 2))
    return float(num / den)


def smib_kelley(x, p: SmibParams | None = None, tol: float = 0.0) -> bool:
    """Reduced Kelley condition ``sin(delta_ep + x1) >= -tol``."""
    p = p or SmibParams()
    return bool(np.sin(p.delta_ep + float(np.asarray(x, dtype=float)[0])) >= -tol)


def smib_arc_distance(x, p: SmibParams | None = None) -> np.ndarray:
    """Scaled distance ``|x1/C1 + x2/C2|`` to the singular arc, the stable eigenline of the closed loop."""
    p = p or SmibParams()
    x = np.asarray(x, dtype=float)
    return np.abs(x[..., 0] / p.C1 + x[..., 1] / p.C2)


def smib_autonomous_matrix(p: SmibParams | None = None) -> np.ndarray:
    p = p or SmibParams()
    return np.array([[0.0, 1.0], [(p.C2 / p.C1) ** 2, 0.0]])


def smib_autonomous_eigenvalues(p: SmibParams | None = None) -> tuple[float, float]:
    """Eigenvalues ``(+C2/C1, -C2/C1)`` of the closed loop on the singular arc."""
    p = p or SmibParams()
    k = abs(p.C2 / p.C1)
    return k, -k


def smib_unstable(p: SmibParams | None = None) -> bool:
    return smib_autonomous_eigenvalues(p)[0] > 0


def smib_analysis(p: SmibParams | None = None) -> SingularAnalysis:
    p = p or SmibParams()
    policy = lambda x: smib_singular_policy(x, p)  # noqa: E731
    return SingularAnalysis(
        policy=policy,
        kelley_ok=lambda x: smib_kelley(x, p),
        switching_structure=SwitchingStructure(-1.0, 1.0, policy),
    )


@dataclass
class RolloutResult:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    diverged: bool = False
    reason: str = ""
    divergence_time: Optional[float] = None
    extra: dict = field(default_factory=dict)


def rollout_feedback(policy, ocp: OcpDefinition, x0, T: float, saturate: bool = True,
                     step: float = 1e-3) -> RolloutResult:
    """RK4 rollout of ``x' = f(x, policy(x))`` over ``[t0, t0 + T]``.

    The policy is evaluated at every RK4 stage. The run stops early when the
    state norm exceeds ``DIVERGENCE_NORM`` or the policy is undefined.
    """
    n_steps = max(1, int(np.ceil(T / step)))
    h = T / n_steps
    t0 = ocp.t0
    lo, hi = ocp.u_lower, ocp.u_upper

    def control(t, x):
        u = np.atleast_1d(np.asarray(policy(x), dtype=float))
        return np.clip(u, lo, hi) if saturate else u

    def rhs(t, x):
        u = control(t, x)
        return ocp.f(x[None, :], u[None, :], np.array([t]))[0]

    x = np.array(x0, dtype=float)
    ts, xs, us = [t0], [x.copy()], []
    diverged, reason, t_div = False, "", None
    for k in range(n_steps):
        t = t0 + k * h
        try:
            u_k = control(t, x)
            k1 = rhs(t, x)
            k2 = rhs(t + h / 2, x + h / 2 * k1)
            k3 = rhs(t + h / 2, x + h / 2 * k2)
            k4 = rhs(t + h, x + h * k3)
        except DomainError as exc:
            reason = f"policy undefined at t={t:.6g}: {exc}"
            break
        us.append(u_k)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ts.append(t + h)
        xs.append(x.copy())
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            diverged, t_div = True, t + h
            reason = "state norm exceeded divergence threshold"
            break
    xs_arr = np.array(xs)
    if len(us) < len(xs):
        try:
            us.append(control(ts[-1], xs_arr[-1]))
        except DomainError:
            us.append(np.full(ocp.n_controls, np.nan))
    return RolloutResult(np.array(ts), xs_arr, np.array(us), diverged, reason, t_div)
