"""Hermite-Simpson direct collocation and its integrated-residual-regularised variant.

Decision vector layout is time-ordered: for every mesh node ``k`` the block
``[x_k, u_k]`` is followed (for ``k < Z``) by the midpoint block
``[x_mid_k, u_mid_k]``.  Interval ``z`` therefore owns the contiguous slice
``[2z(n+m), 2z(n+m) + 3(n+m))``, which keeps the constraint Jacobian and the
Lagrangian Hessian block banded.

The residual-constrained problem appends one variable per quadrature point
and state holding the weighted residual ``sqrt(h w_q) alpha_i r_i``, followed
by a slack equal to ``R / cap``.  Lifting the residual this way gives the
Newton step a well-conditioned linearisation of the residual tube, which the
scalar constraint ``R <= cap`` lacks near ``R = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .ocp import (
    Mesh,
    OcpDefinition,
    Trajectory,
    hermite_basis,
    hermite_basis_derivative,
    quadratic_basis,
)


class TranscriptionError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class Layout:
    n: int
    m: int
    Z: int
    slack: bool = False
    lifted: int = 0

    @property
    def block(self) -> int:
        return self.n + self.m

    @property
    def base_dim(self) -> int:
        return (2 * self.Z + 1) * self.block

    @property
    def lift_slice(self) -> slice:
        return slice(self.base_dim, self.base_dim + self.lifted)

    @property
    def dim(self) -> int:
        return self.base_dim + self.lifted + int(self.slack)

    @property
    def slack_index(self) -> Optional[int]:
        return self.dim - 1 if self.slack else None

    def node_start(self, k):
        return 2 * np.asarray(k) * self.block

    def mid_start(self, k):
        return 2 * np.asarray(k) * self.block + self.block

    @property
    def node_x(self):
        return self.node_start(np.arange(self.Z + 1))[:, None] + np.arange(self.n)

    @property
    def node_u(self):
        return self.node_start(np.arange(self.Z + 1))[:, None] + self.n + np.arange(self.m)

    @property
    def mid_x(self):
        return self.mid_start(np.arange(self.Z))[:, None] + np.arange(self.n)

    @property
    def mid_u(self):
        return self.mid_start(np.arange(self.Z))[:, None] + self.n + np.arange(self.m)

    def describe(self, i: int) -> tuple:
        """``(where, k, kind, index)`` for decision entry ``i``; slack is ``('slack', 0, 'slack', 0)``."""
        if not 0 <= i < self.dim:
            raise IndexError(i)
        if self.slack and i == self.dim - 1:
            return ("slack", 0, "slack", 0)
        if i >= self.base_dim:
            z, j = divmod(i - self.base_dim, self.lifted // self.Z)
            return ("lift", int(z), "residual", int(j))
        pair, r = divmod(i, 2 * self.block)
        where = "node" if r < self.block else "mid"
        r %= self.block
        kind = "state" if r < self.n else "control"
        return (where, int(pair), kind, int(r if r < self.n else r - self.n))

    def unpack(self, w):
        w = np.asarray(w, dtype=float)
        core = w[: self.base_dim]
        pad = np.concatenate([core, np.zeros(self.block)]).reshape(self.Z + 1, 2, self.block)
        X = pad[:, 0, : self.n]
        U = pad[:, 0, self.n:]
        Xm = pad[:-1, 1, : self.n]
        Um = pad[:-1, 1, self.n:]
        return X, U, Xm, Um

    def pack(self, X, U, Xm, Um, slack=None):
        w = np.zeros(self.dim)
        w[self.node_x] = X
        w[self.node_u] = U
        w[self.mid_x] = Xm
        w[self.mid_u] = Um
        if self.slack:
            w[-1] = 0.0 if slack is None else slack
        return w


@dataclass(frozen=True)
class ResidualQuadrature:
    """Gauss-Legendre rule with ``Q`` points per interval and per-state weights ``alpha``."""

    Q: int = 5
    alpha: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.Q < 1:
            raise ValueError("Q must be positive")
        if self.alpha is not None:
            a = np.asarray(self.alpha, dtype=float).reshape(-1)
            if np.any(a <= 0):
                raise ValueError("alpha weights must be positive")
            object.__setattr__(self, "alpha", a)

    @property
    def unit_rule(self):
        """Abscissae and weights on [0, 1]."""
        x, w = np.polynomial.legendre.leggauss(self.Q)
        return 0.5 * (x + 1.0), 0.5 * w

    def points(self, mesh: Mesh):
        s, w = self.unit_rule
        h = mesh.steps
        t = mesh.node_times[:-1, None] + h[:, None] * s[None, :]
        return t, h[:, None] * w[None, :]

    def alpha_for(self, n: int) -> np.ndarray:
        if self.alpha is None:
            return np.ones(n)
        if self.alpha.size != n:
            raise ValueError(f"alpha has {self.alpha.size} entries for {n} states")
        return self.alpha


@dataclass(frozen=True)
class IrrConfig:
    eta: float = 10.0
    eps_abs: float = 1e-8

    def __post_init__(self):
        if not self.eta > 1:
            raise ValueError("eta must exceed 1")
        if self.eps_abs < 0:
            raise ValueError("eps_abs must be non-negative")

    def cap(self, r_min: float) -> float:
        return max(self.eta * r_min, self.eps_abs)


def _simpson_cost(ocp, mesh, X, U, Xm, Um):
    h = mesh.steps
    ln = ocp.running_cost(X, U, mesh.node_times)
    lm = ocp.running_cost(Xm, Um, mesh.midpoints)
    integral = np.sum(h / 6.0 * (ln[:-1] + 4.0 * lm + ln[1:]))
    return float(integral + ocp.terminal_cost(X[0], X[-1]))


def objective_quadrature(traj: Trajectory, ocp: OcpDefinition) -> float:
    """Simpson quadrature of the running cost on node/midpoint values plus the terminal cost."""
    return _simpson_cost(ocp, traj.mesh, traj.node_states, traj.node_controls,
                         traj.mid_states, traj.mid_controls)


def residual_by_interval(traj: Trajectory, ocp: OcpDefinition,
                         quad: ResidualQuadrature | None = None) -> np.ndarray:
    quad = quad or ResidualQuadrature()
    tq, wq = quad.points(traj.mesh)
    flat = tq.reshape(-1)
    # keep the quadrature nodes inside their own interval regardless of rounding
    xdot = traj.eval_state_derivative(flat)
    x = traj.eval_state(flat)
    u = traj.eval_control(flat)
    r = xdot - ocp.f(x, u, flat)
    alpha = quad.alpha_for(ocp.n_states)
    sq = np.sum((alpha * r) ** 2, axis=1).reshape(tq.shape)
    return np.sum(wq * sq, axis=1)


def integrated_residual(traj: Trajectory, ocp: OcpDefinition,
                        quad: ResidualQuadrature | None = None) -> float:
    """Quadrature of the weighted squared dynamics residual over the whole trajectory."""
    return float(np.sum(residual_by_interval(traj, ocp, quad)))


class _HermiteSimpson:
    """Vectorised evaluation of Hermite-Simpson quantities for one OCP and mesh."""

    def __init__(self, ocp: OcpDefinition, mesh: Mesh, layout: Layout,
                 quad: ResidualQuadrature | None):
        self.ocp, self.mesh, self.layout = ocp, mesh, layout
        self.quad = quad or ResidualQuadrature()
        n, m, Z = layout.n, layout.m, layout.Z
        B = layout.block
        L = 3 * B
        self.L = L
        self.h = mesh.steps
        self.base = 2 * np.arange(Z) * B
        self.local_cols = self.base[:, None] + np.arange(L)[None, :]

        # DC constraint Jacobian pattern: 2n rows x L columns per interval
        rows = np.arange(Z)[:, None, None] * 2 * n + np.arange(2 * n)[None, :, None]
        self.jac_rows = np.broadcast_to(rows, (Z, 2 * n, L)).reshape(-1)
        self.jac_cols = np.broadcast_to(self.local_cols[:, None, :], (Z, 2 * n, L)).reshape(-1)

        # point Hessian blocks (nodes, midpoints)
        nb = np.arange(B)
        node_idx = layout.node_start(np.arange(Z + 1))[:, None] + nb
        mid_idx = layout.mid_start(np.arange(Z))[:, None] + nb
        self.pt_idx = np.concatenate([node_idx, mid_idx])
        self.pt_rows = np.repeat(self.pt_idx[:, :, None], B, axis=2).reshape(-1)
        self.pt_cols = np.repeat(self.pt_idx[:, None, :], B, axis=1).reshape(-1)
        self.loc_rows = np.repeat(self.local_cols[:, :, None], L, axis=2).reshape(-1)
        self.loc_cols = np.repeat(self.local_cols[:, None, :], L, axis=1).reshape(-1)
        x_end = np.concatenate([layout.node_x[0], layout.node_x[-1]])
        self.mayer_rows = np.repeat(x_end, 2 * n)
        self.mayer_cols = np.tile(x_end, 2 * n)

        s, wq = self.quad.unit_rule
        self.qs, self.qw = s, wq
        self.qt = mesh.node_times[:-1, None] + self.h[:, None] * s[None, :]
        self.hb = hermite_basis(s)
        self.hd = hermite_basis_derivative(s)
        self.qb = quadratic_basis(s)
        self.alpha2 = self.quad.alpha_for(n) ** 2
        self._cache_key = None
        self._cache = {}

    # -- shared evaluation ----------------------------------------------------------

    def _point_data(self, w):
        key = w.tobytes()
        if key != self._cache_key:
            X, U, Xm, Um = self.layout.unpack(w)
            tn, tm = self.mesh.node_times, self.mesh.midpoints
            F = self.ocp.f(X, U, tn)
            Fm = self.ocp.f(Xm, Um, tm)
            fx, fu = self.ocp.dynamics_jacobians(X, U, tn)
            fxm, fum = self.ocp.dynamics_jacobians(Xm, Um, tm)
            self._cache = dict(X=X, U=U, Xm=Xm, Um=Um, F=F, Fm=Fm, fx=fx, fu=fu, fxm=fxm, fum=fum)
            self._cache_key = key
        return self._cache

    # -- objective ------------------------------------------------------------------

    def bolza(self, w):
        d = self._point_data(w)
        return _simpson_cost(self.ocp, self.mesh, d["X"], d["U"], d["Xm"], d["Um"])

    def bolza_gradient(self, w):
        d = self._point_data(w)
        lay, h = self.layout, self.h
        g = np.zeros(lay.dim)
        cn = np.zeros(lay.Z + 1)
        cn[:-1] += h / 6.0
        cn[1:] += h / 6.0
        gx, gu = self.ocp.running_cost_gradients(d["X"], d["U"], self.mesh.node_times)
        gxm, gum = self.ocp.running_cost_gradients(d["Xm"], d["Um"], self.mesh.midpoints)
        g[lay.node_x] = cn[:, None] * gx
        g[lay.node_u] = cn[:, None] * gu
        g[lay.mid_x] = (4.0 * h / 6.0)[:, None] * gxm
        g[lay.mid_u] = (4.0 * h / 6.0)[:, None] * gum
        g0, gf = self.ocp.terminal_cost_gradients(d["X"][0], d["X"][-1])
        g[lay.node_x[0]] += g0
        g[lay.node_x[-1]] += gf
        return g

    # -- collocation defects --------------------------------------------------------

    def defects(self, w):
        d = self._point_data(w)
        X, Xm, F, Fm = d["X"], d["Xm"], d["F"], d["Fm"]
        h = self.h[:, None]
        simpson = X[1:] - X[:-1] - h / 6.0 * (F[:-1] + 4.0 * Fm + F[1:])
        mid = Xm - 0.5 * (X[:-1] + X[1:]) - h / 8.0 * (F[:-1] - F[1:])
        return np.concatenate([simpson, mid], axis=1).reshape(-1)

    def defect_jacobian_values(self, w):
        d = self._point_data(w)
        n, m, Z = self.layout.n, self.layout.m, self.layout.Z
        B = n + m
        h = self.h[:, None, None]
        I = np.eye(n)[None]
        J = np.zeros((Z, 2 * n, self.L))
        fx, fu, fxm, fum = d["fx"], d["fu"], d["fxm"], d["fum"]
        # Simpson rows
        J[:, :n, 0:n] = -I - h / 6.0 * fx[:-1]
        J[:, :n, n:B] = -h / 6.0 * fu[:-1]
        J[:, :n, B:B + n] = -4.0 * h / 6.0 * fxm
        J[:, :n, B + n:2 * B] = -4.0 * h / 6.0 * fum
        J[:, :n, 2 * B:2 * B + n] = I - h / 6.0 * fx[1:]
        J[:, :n, 2 * B + n:] = -h / 6.0 * fu[1:]
        # midpoint consistency rows
        J[:, n:, 0:n] = -0.5 * I - h / 8.0 * fx[:-1]
        J[:, n:, n:B] = -h / 8.0 * fu[:-1]
        J[:, n:, B:B + n] = I
        J[:, n:, 2 * B:2 * B + n] = -0.5 * I + h / 8.0 * fx[1:]
        J[:, n:, 2 * B + n:] = h / 8.0 * fu[1:]
        return J.reshape(-1)

    def defect_point_weights(self, lam):
        """Per-point multipliers on the dynamics for the defect Hessian."""
        n, Z = self.layout.n, self.layout.Z
        lam = lam.reshape(Z, 2, n)
        ls, lm = lam[:, 0], lam[:, 1]
        h = self.h[:, None]
        node = np.zeros((Z + 1, n))
        node[:-1] += -h / 6.0 * ls - h / 8.0 * lm
        node[1:] += -h / 6.0 * ls + h / 8.0 * lm
        mid = -4.0 * h / 6.0 * ls
        return node, mid

    # -- integrated residual --------------------------------------------------------

    def _residual_parts(self, w, need_jac=True):
        d = self._point_data(w)
        n, m, Z = self.layout.n, self.layout.m, self.layout.Z
        B = n + m
        X, U, Um, F = d["X"], d["U"], d["Um"], d["F"]
        h = self.h[:, None, None]
        b00, b10, b01, b11 = (b[None, :, None] for b in self.hb)
        d00, d10, d01, d11 = (b[None, :, None] for b in self.hd)
        l0, lm, l1 = (b[None, :, None] for b in self.qb)
        Xk, Xk1 = X[:-1, None, :], X[1:, None, :]
        Fk, Fk1 = F[:-1, None, :], F[1:, None, :]
        xq = b00 * Xk + h * b10 * Fk + b01 * Xk1 + h * b11 * Fk1
        xdq = d00 / h * Xk + d10 * Fk + d01 / h * Xk1 + d11 * Fk1
        uq = l0 * U[:-1, None, :] + lm * Um[:, None, :] + l1 * U[1:, None, :]
        Q = self.qs.size
        tq = self.qt.reshape(-1)
        xf, uf = xq.reshape(-1, n), uq.reshape(-1, m)
        fq = self.ocp.f(xf, uf, tq).reshape(Z, Q, n)
        r = xdq - fq
        out = dict(r=r, xq=xf, uq=uf, tq=tq)
        if not need_jac:
            return out
        fxq, fuq = self.ocp.dynamics_jacobians(xf, uf, tq)
        fxq = fxq.reshape(Z, Q, n, n)
        fuq = fuq.reshape(Z, Q, n, m)
        fx, fu = d["fx"], d["fu"]
        L = self.L
        I = np.eye(n)
        h4 = self.h[:, None, None, None]
        sq = lambda a: a[None, :, None, None]
        Jx = np.zeros((Z, Q, n, L))
        Jxd = np.zeros((Z, Q, n, L))
        Ju = np.zeros((Z, Q, m, L))
        Jx[..., 0:n] = sq(self.hb[0]) * I + h4 * sq(self.hb[1]) * fx[:-1, None]
        Jx[..., n:B] = h4 * sq(self.hb[1]) * fu[:-1, None]
        Jx[..., 2 * B:2 * B + n] = sq(self.hb[2]) * I + h4 * sq(self.hb[3]) * fx[1:, None]
        Jx[..., 2 * B + n:] = h4 * sq(self.hb[3]) * fu[1:, None]
        Jxd[..., 0:n] = sq(self.hd[0]) / h4 * I + sq(self.hd[1]) * fx[:-1, None]
        Jxd[..., n:B] = sq(self.hd[1]) * fu[:-1, None]
        Jxd[..., 2 * B:2 * B + n] = sq(self.hd[2]) / h4 * I + sq(self.hd[3]) * fx[1:, None]
        Jxd[..., 2 * B + n:] = sq(self.hd[3]) * fu[1:, None]
        Im = np.eye(m)
        Ju[..., n:B] = sq(self.qb[0]) * Im
        Ju[..., B + n:2 * B] = sq(self.qb[1]) * Im
        Ju[..., 2 * B + n:] = sq(self.qb[2]) * Im
        Jr = Jxd - fxq @ Jx - fuq @ Ju
        out.update(Jr=Jr, Jx=Jx, Ju=Ju, fxq=fxq)
        return out

    def residual(self, w):
        r = self._residual_parts(w, need_jac=False)["r"]
        wq = self.h[:, None] * self.qw[None, :]
        return float(np.sum(wq * np.sum(self.alpha2 * r * r, axis=2)))

    def residual_gradient_local(self, w):
        p = self._residual_parts(w)
        wq = (self.h[:, None] * self.qw[None, :])[..., None]
        ar = 2.0 * wq * self.alpha2 * p["r"]
        return np.einsum("zqi,zqil->zl", ar, p["Jr"])

    def residual_gradient(self, w):
        g = self.residual_gradient_local(w)
        return np.bincount(self.local_cols.reshape(-1), weights=g.reshape(-1),
                           minlength=self.layout.dim)

    @property
    def lift_scale(self):
        """``sqrt(h w_q) alpha_i`` with shape (Z, Q, n)."""
        wq = (self.h[:, None] * self.qw[None, :])[..., None]
        return np.sqrt(wq * self.alpha2)

    def lifted_residual(self, w):
        return self.lift_scale * self._residual_parts(w, need_jac=False)["r"]

    def residual_hessian(self, w, sigma):
        """Local (Z, L, L) blocks and node weights (Z+1, n) for ``sigma * R``."""
        p = self._residual_parts(w)
        wq = (self.h[:, None] * self.qw[None, :])[..., None]
        Jr = p["Jr"]
        gn = 2.0 * sigma * np.einsum("zqil,zqi,zqik->zlk", Jr, wq * self.alpha2, Jr)
        local, node = self.residual_curvature(w, 2.0 * sigma * wq * self.alpha2 * p["r"])
        return gn + local, node

    def residual_curvature(self, w, mu):
        """Blocks and node weights for ``sum mu * r`` over quadrature points; ``mu`` is (Z, Q, n)."""
        p = self._residual_parts(w)
        n, m, Z = self.layout.n, self.layout.m, self.layout.Z
        Q = self.qs.size
        Hq = self.ocp.weighted_dynamics_hessian(p["xq"], p["uq"], p["tq"], mu.reshape(-1, n))
        Hq = Hq.reshape(Z, Q, n + m, n + m)
        Jz = np.concatenate([p["Jx"], p["Ju"]], axis=2)
        local = -np.einsum("zqal,zqab,zqbk->zlk", Jz, Hq, Jz)
        fxt_mu = np.einsum("zqij,zqi->zqj", p["fxq"], mu)
        h = self.h[:, None, None]
        b10, b11 = self.hb[1][None, :, None], self.hb[3][None, :, None]
        d10, d11 = self.hd[1][None, :, None], self.hd[3][None, :, None]
        node = np.zeros((Z + 1, n))
        node[:-1] += np.sum(d10 * mu - h * b10 * fxt_mu, axis=1)
        node[1:] += np.sum(d11 * mu - h * b11 * fxt_mu, axis=1)
        return local, node

    # -- Hessian assembly -------------------------------------------------------------

    def lagrangian_hessian(self, w, obj_factor, lam_defects, objective_kind, lift_mult=None):
        """Hessian of ``obj_factor*objective + lam.defects - lift_mult.(lift_scale*r)``."""
        d = self._point_data(w)
        n, Z = self.layout.n, self.layout.Z
        node_w, mid_w = self.defect_point_weights(lam_defects)
        local = None
        if objective_kind == "residual" and obj_factor != 0.0:
            local, node_r = self.residual_hessian(w, obj_factor)
            node_w = node_w + node_r
        if lift_mult is not None:
            loc2, node_r = self.residual_curvature(w, -self.lift_scale * lift_mult)
            local = loc2 if local is None else local + loc2
            node_w = node_w + node_r
        tn, tm = self.mesh.node_times, self.mesh.midpoints
        Hn = self.ocp.weighted_dynamics_hessian(d["X"], d["U"], tn, node_w)
        Hm = self.ocp.weighted_dynamics_hessian(d["Xm"], d["Um"], tm, mid_w)
        data = [Hn.reshape(-1), Hm.reshape(-1)]
        rows = [self.pt_rows]
        cols = [self.pt_cols]
        if objective_kind == "bolza" and obj_factor != 0.0:
            h = self.h
            cn = np.zeros(Z + 1)
            cn[:-1] += h / 6.0
            cn[1:] += h / 6.0
            Ln = self.ocp.running_cost_hessian(d["X"], d["U"], tn) * cn[:, None, None]
            Lm = self.ocp.running_cost_hessian(d["Xm"], d["Um"], tm) * (4.0 * h / 6.0)[:, None, None]
            data += [obj_factor * Ln.reshape(-1), obj_factor * Lm.reshape(-1)]
            rows.append(self.pt_rows)
            cols.append(self.pt_cols)
            if self.ocp.mayer_cost is not None:
                Hmay = self.ocp.terminal_cost_hessian(d["X"][0], d["X"][-1])
                data.append(obj_factor * Hmay.reshape(-1))
                rows.append(self.mayer_rows)
                cols.append(self.mayer_cols)
        if local is not None:
            data.append(local.reshape(-1))
            rows.append(self.loc_rows)
            cols.append(self.loc_cols)
        dim = self.layout.dim
        H = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(dim, dim))
        return H.tocsr()


@dataclass
class NlpProblem:
    """Finite-dimensional program ``min f(w)  s.t.  c(w) = 0,  lower <= w <= upper``.

    ``hessian(w, lam, obj_factor)`` returns the full symmetric Hessian of
    ``obj_factor * f + lam . c`` as a sparse matrix.
    """

    ocp: OcpDefinition
    mesh: Mesh
    layout: Layout
    lower: np.ndarray
    upper: np.ndarray
    objective_kind: str
    residual_cap: Optional[float]
    _hs: _HermiteSimpson = field(repr=False)
    warm_start: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def slack_pairs(self):
        """``(row, index)`` pairs where row ``h(w) - w[index]`` defines a slack."""
        if self.residual_cap is None:
            return ()
        return ((self.n_eq - 1, self.dim - 1),)

    @property
    def _n_dc(self) -> int:
        return 2 * self.layout.n * self.layout.Z

    @property
    def n_eq(self) -> int:
        return self._n_dc + self.layout.lifted + int(self.residual_cap is not None)

    @property
    def _lifted_residual_objective(self) -> bool:
        return self.objective_kind == "residual" and self.layout.lifted > 0

    def objective(self, w) -> float:
        w = np.asarray(w, dtype=float)
        if self._lifted_residual_objective:
            e = w[self.layout.lift_slice]
            return float(e @ e)
        if self.objective_kind == "residual":
            return self._hs.residual(w)
        return self._hs.bolza(w)

    def gradient(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self._lifted_residual_objective:
            g = np.zeros(self.dim)
            g[self.layout.lift_slice] = 2.0 * w[self.layout.lift_slice]
            return g
        if self.objective_kind == "residual":
            return self._hs.residual_gradient(w)
        return self._hs.bolza_gradient(w)

    def constraints(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        c = self._hs.defects(w)
        if not self.layout.lifted:
            return c
        e = w[self.layout.lift_slice]
        parts = [c, e - self._hs.lifted_residual(w).reshape(-1)]
        if self.residual_cap is not None:
            parts.append([e @ e / self.residual_cap - w[-1]])
        return np.concatenate(parts)

    def jacobian(self, w) -> sp.csr_matrix:
        w = np.asarray(w, dtype=float)
        hs = self._hs
        vals = hs.defect_jacobian_values(w).reshape(-1)
        rows, cols = hs.jac_rows, hs.jac_cols
        if self.layout.lifted:
            lay = self.layout
            Z, L, nl = lay.Z, hs.L, lay.lifted
            Jr = hs._residual_parts(w)["Jr"]
            per = nl // Z
            Jl = -(hs.lift_scale[..., None] * Jr).reshape(Z, per, L)
            r0 = self._n_dc
            lrows = r0 + np.arange(nl).reshape(Z, per, 1)
            lcols = hs.local_cols[:, None, :]
            e_idx = np.arange(lay.base_dim, lay.base_dim + nl)
            vals = np.concatenate([vals, Jl.reshape(-1), np.ones(nl)])
            rows = np.concatenate([rows, np.broadcast_to(lrows, Jl.shape).reshape(-1), r0 + np.arange(nl)])
            cols = np.concatenate([cols, np.broadcast_to(lcols, Jl.shape).reshape(-1), e_idx])
            if self.residual_cap is not None:
                last = self.n_eq - 1
                vals = np.concatenate([vals, 2.0 * w[e_idx] / self.residual_cap, [-1.0]])
                rows = np.concatenate([rows, np.full(nl + 1, last)])
                cols = np.concatenate([cols, e_idx, [self.dim - 1]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_eq, self.dim))

    def hessian(self, w, lam, obj_factor: float = 1.0) -> sp.csr_matrix:
        w = np.asarray(w, dtype=float)
        lam = np.asarray(lam, dtype=float)
        p_dc = self._n_dc
        lay = self.layout
        if not lay.lifted:
            return self._hs.lagrangian_hessian(w, obj_factor, lam[:p_dc], self.objective_kind)
        nl = lay.lifted
        mult = lam[p_dc:p_dc + nl].reshape(lay.Z, -1, lay.n)
        kind = "none" if self._lifted_residual_objective else self.objective_kind
        H = self._hs.lagrangian_hessian(w, obj_factor, lam[:p_dc], kind, mult)
        diag = np.zeros(self.dim)
        if self._lifted_residual_objective:
            diag[lay.lift_slice] += 2.0 * obj_factor
        if self.residual_cap is not None:
            diag[lay.lift_slice] += 2.0 * lam[-1] / self.residual_cap
        return (H + sp.diags(diag)).tocsr()

    def complete(self, w) -> np.ndarray:
        """Fill the lifted residual entries and the slack from the trajectory part of ``w``."""
        lay = self.layout
        out = np.zeros(self.dim)
        out[: lay.base_dim] = np.asarray(w, dtype=float)[: lay.base_dim]
        if lay.lifted:
            e = self._hs.lifted_residual(out).reshape(-1)
            out[lay.lift_slice] = e
            if self.residual_cap is not None:
                out[-1] = e @ e / self.residual_cap
        return out

    def integrated_residual(self, w) -> float:
        return self._hs.residual(np.asarray(w, dtype=float))

    def bolza_objective(self, w) -> float:
        return self._hs.bolza(np.asarray(w, dtype=float))

    def to_trajectory(self, w) -> Trajectory:
        X, U, Xm, Um = self.layout.unpack(w)
        return Trajectory.from_values(self.ocp, self.mesh, X, Xm.copy(), U, Um.copy())

    def from_trajectory(self, traj: Trajectory) -> np.ndarray:
        """Decision vector sampling ``traj`` at this problem's nodes and midpoints."""
        tn, tm = self.mesh.node_times, self.mesh.midpoints
        lo, hi = traj.t0, traj.tf
        X = traj.eval_state(np.clip(tn, lo, hi))
        U = traj.eval_control(np.clip(tn, lo, hi))
        Xm = traj.eval_state(np.clip(tm, lo, hi))
        Um = traj.eval_control(np.clip(tm, lo, hi))
        return self.complete(self.layout.pack(X, U, Xm, Um))

    def cold_start(self) -> np.ndarray:
        """States interpolated linearly from x0 (to the terminal target if one is set); u = 0 clipped."""
        ocp = self.ocp
        x0 = ocp.initial_state
        xf = x0 if ocp.terminal_state is None else np.where(np.isnan(ocp.terminal_state), x0, ocp.terminal_state)
        frac_n = (self.mesh.node_times - ocp.t0) / ocp.horizon
        frac_m = (self.mesh.midpoints - ocp.t0) / ocp.horizon
        X = x0 + frac_n[:, None] * (xf - x0)
        Xm = x0 + frac_m[:, None] * (xf - x0)
        u = np.clip(np.zeros(ocp.n_controls), ocp.u_lower, ocp.u_upper)
        U = np.tile(u, (self.mesh.n_intervals + 1, 1))
        Um = np.tile(u, (self.mesh.n_intervals, 1))
        return self.complete(self.layout.pack(X, U, Xm, Um))


def _bounds(ocp: OcpDefinition, layout: Layout, cap: Optional[float]):
    lo = np.full(layout.dim, -np.inf)
    hi = np.full(layout.dim, np.inf)
    lo[layout.node_u] = ocp.u_lower
    hi[layout.node_u] = ocp.u_upper
    lo[layout.mid_u] = ocp.u_lower
    hi[layout.mid_u] = ocp.u_upper
    if ocp.x_lower is not None:
        lo[layout.node_x] = ocp.x_lower
        lo[layout.mid_x] = ocp.x_lower
    if ocp.x_upper is not None:
        hi[layout.node_x] = ocp.x_upper
        hi[layout.mid_x] = ocp.x_upper
    lo[layout.node_x[0]] = hi[layout.node_x[0]] = ocp.initial_state
    if ocp.terminal_state is not None:
        fixed = ~np.isnan(ocp.terminal_state)
        idx = layout.node_x[-1][fixed]
        lo[idx] = hi[idx] = ocp.terminal_state[fixed]
    if cap is not None:
        hi[-1] = 1.0
    return lo, hi


def _validate(ocp, mesh):
    if not (np.isclose(mesh.t0, ocp.t0) and np.isclose(mesh.tf, ocp.tf)):
        raise ValueError(f"mesh [{mesh.t0}, {mesh.tf}] does not cover the OCP horizon [{ocp.t0}, {ocp.tf}]")


def _build(ocp, mesh, quad, objective_kind, cap, lift=None):
    _validate(ocp, mesh)
    lift = cap is not None if lift is None else lift
    lifted = mesh.n_intervals * quad.Q * ocp.n_states if lift else 0
    layout = Layout(ocp.n_states, ocp.n_controls, mesh.n_intervals, slack=cap is not None, lifted=lifted)
    hs = _HermiteSimpson(ocp, mesh, layout, quad)
    lo, hi = _bounds(ocp, layout, cap)
    return NlpProblem(ocp, mesh, layout, lo, hi, objective_kind, cap, hs)


def transcribe_dc(ocp: OcpDefinition, mesh: Mesh) -> NlpProblem:
    """Hermite-Simpson collocation in separated form with Simpson cost quadrature."""
    return _build(ocp, mesh, None, "bolza", None)


def transcribe_residual_min(ocp: OcpDefinition, mesh: Mesh,
                            quad: ResidualQuadrature | None = None, lifted: bool = True) -> NlpProblem:
    """First IRR-DC phase: minimise the integrated residual under the collocation constraints.

    With ``lifted`` the weighted residual samples become variables ``e`` and
    the objective is ``e.e``; otherwise ``R(w)`` is evaluated directly.
    """
    return _build(ocp, mesh, quad or ResidualQuadrature(), "residual", None, lift=lifted)


def transcribe_irrdc(ocp: OcpDefinition, mesh: Mesh, quad: ResidualQuadrature | None = None,
                     cfg: IrrConfig | None = None, w0=None, solver_options=None) -> NlpProblem:
    """Two-phase IRR-DC transcription.

    Solves the residual-minimisation phase, then returns the Bolza problem with
    the extra constraint ``R(w) <= max(eta * r_min, eps_abs)``; the phase-one
    optimum is attached as ``warm_start``.
    """
    from .solver import SolverOptions, solve

    cfg = cfg or IrrConfig()
    quad = quad or ResidualQuadrature()
    phase1 = transcribe_residual_min(ocp, mesh, quad)
    start = phase1.cold_start() if w0 is None else phase1.complete(w0)
    res = solve(phase1, start, solver_options or SolverOptions())
    if not res.success:
        raise TranscriptionError(
            f"residual-minimisation phase ended with status {res.status} "
            f"(kkt={res.kkt_residual:.3e}, iterations={res.iterations})", result=res)
    r_min = max(phase1.integrated_residual(res.primal), 0.0)
    cap = cfg.cap(r_min)
    if np.isfinite(cap):
        nlp = _build(ocp, mesh, quad, "bolza", cap)
        warm = nlp.complete(res.primal)
    else:
        nlp = _build(ocp, mesh, quad, "bolza", None)
        warm = res.primal
    nlp.warm_start = warm
    nlp.info.update(r_min=r_min, residual_cap=cap, phase1=res)
    return nlp
