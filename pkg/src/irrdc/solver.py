"""Primal-dual interior-point method for equality- and bound-constrained NLPs.

Any object exposing ``dim``, ``n_eq``, ``lower``, ``upper``, ``objective``,
``gradient``, ``constraints``, ``jacobian`` and ``hessian(w, lam, obj_factor)``
can be solved; :class:`irrdc.transcription.NlpProblem` is the main client.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

STATUSES = ("optimal", "acceptable", "max_iter", "infeasible", "numerical_failure")

_DENSE_LIMIT = 200
_KAPPA_SIGMA = 1e10
_ARMIJO = 1e-4
_MAX_BACKTRACK = 40
_PROX_START = 1e-6
_PROX_SHORT_STEP = 0.1
_PROX_DECAY = 4.0


@dataclass(frozen=True)
class SolverOptions:
    tol_kkt: float = 1e-9
    max_iter: int = 500
    mu_init: float = 0.1
    barrier_reduction: float = 0.2
    regularization_floor: float = 1e-12
    fraction_to_boundary: float = 0.995
    barrier_tol_factor: float = 10.0
    proximal: float = 0.0  # constant primal damping; fixed points are unchanged
    acceptable_tol: float = 1e-6
    acceptable_iter: int = 15

    def __post_init__(self):
        if not self.tol_kkt > 0:
            raise ValueError("tol_kkt must be positive")
        if not 0 < self.barrier_reduction < 1:
            raise ValueError("barrier_reduction must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.mu_init > 0:
            raise ValueError("mu_init must be positive")
        if self.proximal < 0:
            raise ValueError("proximal must be non-negative")


@dataclass
class SolveResult:
    status: str
    primal: np.ndarray
    eq_multipliers: np.ndarray
    bound_multipliers: np.ndarray  # shape (2, dim): lower-bound row, upper-bound row
    kkt_residual: float
    objective: float
    iterations: int
    message: str = ""
    errors: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status in ("optimal", "acceptable")

    def summary(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
        }


def interiorize(w, lower, upper):
    """Clip to the bounds, then push ``min(1e-3 * range, 1e-3)`` inside every finite bound."""
    w = np.clip(np.asarray(w, dtype=float), lower, upper)
    fixed = lower == upper
    rng = upper - lower
    push = np.minimum(1e-3 * np.where(np.isfinite(rng), rng, np.inf), 1e-3)
    lo_ok = np.isfinite(lower) & ~fixed
    hi_ok = np.isfinite(upper) & ~fixed
    w = np.where(lo_ok, np.maximum(w, lower + push), w)
    w = np.where(hi_ok, np.minimum(w, upper - push), w)
    return w


def kkt_errors(nlp, w, lam, zl, zu, mu=0.0):
    """Unscaled stationarity, feasibility and complementarity (infinity norms)."""
    lower, upper = nlp.lower, nlp.upper
    free = lower != upper
    g = nlp.gradient(w)
    J = nlp.jacobian(w)
    c = nlp.constraints(w)
    dual = (g + J.T @ lam - zl + zu)[free]
    has_lo = np.isfinite(lower) & free
    has_hi = np.isfinite(upper) & free
    comp_l = (zl * np.where(has_lo, w - lower, 0.0) - np.where(has_lo, mu, 0.0))
    comp_u = (zu * np.where(has_hi, upper - w, 0.0) - np.where(has_hi, mu, 0.0))
    return {
        "stationarity": float(np.max(np.abs(dual), initial=0.0)),
        "feasibility": float(np.max(np.abs(c), initial=0.0)),
        "complementarity": float(max(np.max(np.abs(comp_l), initial=0.0),
                                     np.max(np.abs(comp_u), initial=0.0))),
    }


class _KktSolver:
    """Factorises the regularised primal-dual matrix and reports inertia trouble."""

    def __init__(self, n, p):
        self.n, self.p = n, p
        self.dense = n < _DENSE_LIMIT

    def factor(self, W, sigma, J, dw, dc):
        n, p = self.n, self.p
        Wr = W + sp.diags(sigma + dw)
        self.Wr = Wr
        self.dc = dc
        if self.dense:
            K = np.zeros((n + p, n + p))
            K[:n, :n] = Wr.toarray()
            if p:
                Jd = J.toarray()
                K[n:, :n] = Jd
                K[:n, n:] = Jd.T
                K[n:, n:] = -dc * np.eye(p)
            _, d, _ = sla.ldl(K)
            ev = np.linalg.eigvalsh(d)
            pos = int(np.sum(ev > 0))
            neg = int(np.sum(ev < 0))
            if pos != n or neg != p:
                return "inertia" if pos + neg == n + p else "singular"
            try:
                self._lu = sla.lu_factor(K, check_finite=False)
            except (ValueError, np.linalg.LinAlgError):
                return "singular"
            self._kind = "dense"
            return "ok"
        if p:
            K = sp.bmat([[Wr, J.T], [J, -dc * sp.eye(p)]], format="csc")
        else:
            K = sp.csc_matrix(Wr)
        try:
            self._lu = spla.splu(K, permc_spec="COLAMD", diag_pivot_thresh=0.1)
        except RuntimeError:
            return "singular"
        self._kind = "sparse"
        return "ok"

    def solve(self, rhs):
        if self._kind == "dense":
            return sla.lu_solve(self._lu, rhs, check_finite=False)
        return self._lu.solve(rhs)

    def curvature_ok(self, dw, dl):
        if self._kind == "dense":
            return True
        with np.errstate(over="ignore", invalid="ignore"):
            curv = float(dw @ (self.Wr @ dw)) + self.dc * float(dl @ dl)
            return bool(np.isfinite(curv)) and curv >= 1e-12 * float(dw @ dw)


def _fraction_to_boundary(x, dx, tau):
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * x[neg] / dx[neg])))


def solve(nlp, w0, opts: SolverOptions | None = None) -> SolveResult:
    """Minimise ``nlp`` from ``w0``; only primal warm starts are used."""
    opts = opts or SolverOptions()
    lower = np.asarray(nlp.lower, dtype=float)
    upper = np.asarray(nlp.upper, dtype=float)
    fixed = lower == upper
    F = np.flatnonzero(~fixed)
    nF, p = F.size, nlp.n_eq
    w = interiorize(w0, lower, upper)
    w[fixed] = lower[fixed]
    pairs_full = [(int(i), int(j)) for i, j in getattr(nlp, "slack_pairs", ()) if not fixed[j]]

    def reset_slacks(wt, ct):
        # put a paired slack back on its row when that keeps it strictly inside its bounds
        for i, j in pairs_full:
            v = wt[j] + ct[i]
            if lower[j] < v < upper[j]:
                wt[j] = v
                ct[i] = 0.0
        return wt, ct

    lo, hi = lower[F], upper[F]
    has_lo, has_hi = np.isfinite(lo), np.isfinite(hi)

    def slacks(wf):
        return np.where(has_lo, wf - lo, 1.0), np.where(has_hi, hi - wf, 1.0)

    c = nlp.constraints(w)
    w, c = reset_slacks(w, c)
    mu = opts.mu_init
    sl, su = slacks(w[F])
    zl = np.where(has_lo, mu / sl, 0.0)
    zu = np.where(has_hi, mu / su, 0.0)
    lam = _ls_multipliers(nlp, w, F, zl, zu)

    def barrier(wf):
        sl_, su_ = slacks(wf)
        if np.any(sl_ <= 0) or np.any(su_ <= 0):
            return np.inf
        return -mu * (np.sum(np.log(sl_[has_lo])) + np.sum(np.log(su_[has_hi])))

    # rows of the form h(w) - w_j = 0: curvature of h is weighted by the slack's bound duals
    pairs = [(int(i), int(np.searchsorted(F, j))) for i, j in getattr(nlp, "slack_pairs", ())
             if not fixed[j]]

    def hessian_multipliers():
        if not pairs:
            return lam
        out = lam.copy()
        for i, jf in pairs:
            out[i] = zu[jf] - zl[jf]
        return out

    def phi_of(trial_pack):
        t, ft, ct = trial_pack
        val = ft + barrier(t[F]) + nu_box[0] * float(np.sum(np.abs(ct)))
        return val if np.isfinite(val) else np.inf

    kkt = _KktSolver(nF, p)
    nu = max(1.0, float(np.max(np.abs(lam), initial=0.0)))
    nu_box = [nu]
    dw_last = 0.0
    best = None
    ls_failures = 0
    force_reg = False
    prox = opts.proximal
    n_acceptable = 0
    status, message = "max_iter", "iteration limit reached"
    it = 0

    f = nlp.objective(w)
    g = nlp.gradient(w)
    J = nlp.jacobian(w)

    for it in range(opts.max_iter + 1):
        gF = g[F]
        JF = J[:, F]
        sl, su = slacks(w[F])
        dual = gF + JF.T @ lam - zl + zu
        e_stat = float(np.max(np.abs(dual), initial=0.0))
        e_feas = float(np.max(np.abs(c), initial=0.0))
        comp_l, comp_u = zl * np.where(has_lo, sl, 0.0), zu * np.where(has_hi, su, 0.0)
        e_comp = float(max(np.max(comp_l, initial=0.0), np.max(comp_u, initial=0.0)))
        e0 = max(e_stat, e_feas, e_comp)
        if best is None or e0 < best[0]:
            best = (e0, w.copy(), lam.copy(), zl.copy(), zu.copy(), f)
        logger.debug("iter %3d  f=% .10e  kkt=%.3e  mu=%.1e", it, f, e0, mu)
        if e0 <= opts.tol_kkt:
            status, message = "optimal", "KKT tolerance reached"
            break
        n_acceptable = n_acceptable + 1 if e0 <= opts.acceptable_tol else 0
        if opts.acceptable_iter and n_acceptable >= opts.acceptable_iter:
            status, message = "acceptable", "acceptable KKT level held"
            break
        if it == opts.max_iter:
            break

        # monotone barrier update
        while True:
            e_mu = max(e_stat, e_feas,
                       float(np.max(np.abs(np.where(has_lo, comp_l - mu, 0.0)), initial=0.0)),
                       float(np.max(np.abs(np.where(has_hi, comp_u - mu, 0.0)), initial=0.0)))
            if e_mu > opts.barrier_tol_factor * mu or mu <= opts.tol_kkt / 10:
                break
            mu = max(opts.tol_kkt / 10, min(opts.barrier_reduction * mu, mu ** 1.5))
        tau = max(opts.fraction_to_boundary, 1.0 - mu)

        sigma = np.where(has_lo, zl / sl, 0.0) + np.where(has_hi, zu / su, 0.0)
        gphi = gF - np.where(has_lo, mu / sl, 0.0) + np.where(has_hi, mu / su, 0.0)
        W = nlp.hessian(w, hessian_multipliers(), 1.0)[F][:, F]
        rhs = -np.concatenate([gphi + JF.T @ lam, c])

        # inertia-correcting regularisation
        dwr = dw_last if force_reg else 0.0
        dcr = 0.0
        force_reg = False
        step = None
        for _ in range(60):
            state = kkt.factor(W, sigma, JF, dwr + prox, dcr)
            if state == "ok":
                sol = kkt.solve(rhs)
                if np.all(np.isfinite(sol)) and kkt.curvature_ok(sol[:nF], sol[nF:]):
                    step = sol
                    break
                state = "inertia"
            if state == "singular" and dcr == 0.0 and p:
                dcr = 1e-8 * mu ** 0.25
                continue
            if dwr == 0.0:
                dwr = 1e-4 if dw_last == 0.0 else max(opts.regularization_floor, dw_last / 3)
            else:
                dwr *= 100.0 if dw_last == 0.0 else 8.0
            if dwr > 1e40:
                break
        if step is None:
            status, message = "numerical_failure", "KKT matrix could not be regularised"
            break
        if dwr > 0:
            dw_last = dwr
        dx, dl = step[:nF], step[nF:]
        dzl = np.where(has_lo, (mu - zl * sl - zl * dx) / sl, 0.0)
        dzu = np.where(has_hi, (mu - zu * su + zu * dx) / su, 0.0)

        a_max = min(_fraction_to_boundary(sl[has_lo], dx[has_lo], tau),
                    _fraction_to_boundary(su[has_hi], -dx[has_hi], tau))
        a_z = min(_fraction_to_boundary(zl[has_lo], dzl[has_lo], tau),
                  _fraction_to_boundary(zu[has_hi], dzu[has_hi], tau))

        # l1 merit with penalty update
        cnorm = float(np.sum(np.abs(c)))
        curv = max(0.0, float(dx @ (kkt.Wr @ dx)))
        lin = float(gphi @ dx)
        if cnorm > 0:
            nu_req = (lin + 0.5 * curv) / (0.9 * cnorm)
            if nu < nu_req:
                nu = nu_req + 1.0
        nu_box[0] = nu
        phi0 = f + barrier(w[F]) + nu * cnorm
        dphi = lin - nu * cnorm
        fail_tol = 10 * np.finfo(float).eps * max(1.0, abs(phi0))

        alpha = a_max
        accepted = None
        wF = w[F]
        for k in range(_MAX_BACKTRACK):
            trial = w.copy()
            trial[F] = wF + alpha * dx
            ft = nlp.objective(trial)
            trial, ct = reset_slacks(trial, nlp.constraints(trial))
            phit = ft + barrier(trial[F]) + nu * float(np.sum(np.abs(ct)))
            if np.isfinite(phit) and phit <= phi0 + _ARMIJO * alpha * dphi + fail_tol:
                accepted = (trial, ft, ct, alpha)
                break
            if k == 0 and p and np.sum(np.abs(ct)) >= cnorm:
                accepted = _soc_cascade(nlp, kkt, w, F, wF, gphi + JF.T @ lam, alpha * c, ct, alpha,
                                        lambda t: phi_of(t) <= phi0 + _ARMIJO * alpha * dphi + fail_tol,
                                        sl, su, has_lo, has_hi, tau, reset_slacks, nF)
                if accepted is not None:
                    break
            alpha *= 0.5
        if accepted is None:
            ls_failures += 1
            dw_last = max(dw_last * 10, 1e-4)
            force_reg = True
            if ls_failures > 10:
                infeasible = e_feas > np.sqrt(opts.tol_kkt)
                status = "infeasible" if infeasible else "numerical_failure"
                message = "line search failed repeatedly"
                break
            continue
        ls_failures = 0
        # damp the direction when the linear model was far too optimistic
        if accepted[3] < _PROX_SHORT_STEP * a_max:
            prox = max(10.0 * prox, _PROX_START)
        elif accepted[3] == a_max:
            prox = opts.proximal if prox <= 4 * max(opts.proximal, _PROX_START) else prox / _PROX_DECAY
        logger.debug("      alpha=%.2e a_z=%.2e reg=%.1e prox=%.1e nu=%.1e", accepted[3], a_z, dwr, prox, nu)
        w, f, c, alpha = accepted
        lam = lam + alpha * dl
        zl = zl + a_z * dzl
        zu = zu + a_z * dzu
        sl, su = slacks(w[F])
        zl = np.where(has_lo, np.clip(zl, mu / (_KAPPA_SIGMA * sl), _KAPPA_SIGMA * mu / sl), 0.0)
        zu = np.where(has_hi, np.clip(zu, mu / (_KAPPA_SIGMA * su), _KAPPA_SIGMA * mu / su), 0.0)
        g = nlp.gradient(w)
        J = nlp.jacobian(w)

    if status != "optimal" and best is not None:
        e0, w, lam, zl, zu, f = best
        if status != "acceptable" and e0 <= opts.acceptable_tol:
            status, message = "acceptable", f"stopped ({message}) at an acceptable point"
    zfull = np.zeros((2, w.size))
    zfull[0, F], zfull[1, F] = zl, zu
    errs = kkt_errors(nlp, w, lam, zfull[0], zfull[1])
    return SolveResult(
        status=status, primal=w, eq_multipliers=lam, bound_multipliers=zfull,
        kkt_residual=max(errs.values()) if status != "optimal" else e0,
        objective=float(nlp.objective(w)), iterations=it, message=message, errors=errs,
    )


def _soc_cascade(nlp, kkt, w, F, wF, rd, c_lin, ct, alpha, accept, sl, su, has_lo, has_hi,
                 tau, reset_slacks, nF, max_soc=4, kappa=0.99):
    """Up to ``max_soc`` second-order corrections; returns ``(w, f, c, alpha)`` or None."""
    csoc = c_lin + ct
    prev = float(np.sum(np.abs(ct)))
    for _ in range(max_soc):
        soc = _second_order_correction(kkt, rd, csoc, nF)
        if soc is None:
            return None
        a_soc = min(_fraction_to_boundary(sl[has_lo], soc[has_lo], tau),
                    _fraction_to_boundary(su[has_hi], -soc[has_hi], tau))
        t2 = w.copy()
        t2[F] = wF + a_soc * soc
        f2 = nlp.objective(t2)
        t2, c2 = reset_slacks(t2, nlp.constraints(t2))
        if accept((t2, f2, c2)):
            return t2, f2, c2, alpha
        cur = float(np.sum(np.abs(c2)))
        if cur > kappa * prev:
            return None
        prev = cur
        csoc = a_soc * csoc + c2
    return None


def _second_order_correction(kkt, rd, csoc, nF):
    sol = kkt.solve(-np.concatenate([rd, csoc]))
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:nF]


def _ls_multipliers(nlp, w, F, zl, zu):
    p = nlp.n_eq
    if p == 0:
        return np.zeros(0)
    J = nlp.jacobian(w)[:, F]
    g = nlp.gradient(w)[F]
    n = F.size
    K = sp.bmat([[sp.eye(n), J.T], [J, None]], format="csc")
    rhs = np.concatenate([-(g - zl + zu), np.zeros(p)])
    try:
        lam = spla.splu(K, permc_spec="COLAMD").solve(rhs)[n:]
    except RuntimeError:
        return np.zeros(p)
    if not np.all(np.isfinite(lam)) or np.max(np.abs(lam)) > 1e3:
        return np.zeros(p)
    return lam


@dataclass
class DerivativeReport:
    max_gradient_error: float
    max_jacobian_error: float
    max_hessian_error: float
    offending: list

    @property
    def max_error(self) -> float:
        return max(self.max_gradient_error, self.max_jacobian_error, self.max_hessian_error)


def _rel(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.abs(b))


def check_derivatives(nlp, w, step: float = 1e-6, threshold: float = 1e-6,
                      hessian: bool = False, seed: int = 0) -> DerivativeReport:
    """Compare analytic derivatives of ``nlp`` with central differences at ``w``.

    Entries whose relative error (``|a - fd| / max(1, |fd|)``) exceeds
    ``threshold`` are listed in ``offending`` as ``(kind, row, col, analytic,
    numeric, error)``.
    """
    w = np.asarray(w, dtype=float)
    dim = w.size
    g = nlp.gradient(w)
    J = nlp.jacobian(w).toarray()
    g_fd = np.empty(dim)
    J_fd = np.empty_like(J)
    for j in range(dim):
        wp, wm = w.copy(), w.copy()
        wp[j] += step
        wm[j] -= step
        g_fd[j] = (nlp.objective(wp) - nlp.objective(wm)) / (2 * step)
        J_fd[:, j] = (nlp.constraints(wp) - nlp.constraints(wm)) / (2 * step)
    eg = _rel(g, g_fd)
    eJ = _rel(J, J_fd)
    offending = [("gradient", 0, int(j), float(g[j]), float(g_fd[j]), float(eg[j]))
                 for j in np.flatnonzero(eg > threshold)]
    offending += [("jacobian", int(i), int(j), float(J[i, j]), float(J_fd[i, j]), float(eJ[i, j]))
                  for i, j in zip(*np.nonzero(eJ > threshold))]
    eh = 0.0
    if hessian:
        rng = np.random.default_rng(seed)
        lam = rng.standard_normal(nlp.n_eq)
        H = nlp.hessian(w, lam, 1.0).toarray()
        H_fd = np.empty_like(H)

        def lag_grad(x):
            return nlp.gradient(x) + nlp.jacobian(x).T @ lam

        for j in range(dim):
            wp, wm = w.copy(), w.copy()
            wp[j] += step
            wm[j] -= step
            H_fd[:, j] = (lag_grad(wp) - lag_grad(wm)) / (2 * step)
        errH = _rel(H, H_fd)
        eh = float(errH.max(initial=0.0))
        offending += [("hessian", int(i), int(j), float(H[i, j]), float(H_fd[i, j]), float(errH[i, j]))
                      for i, j in zip(*np.nonzero(errH > threshold))]
    return DerivativeReport(float(eg.max(initial=0.0)), float(eJ.max(initial=0.0)), eh, offending)
