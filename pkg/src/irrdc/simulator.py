"""Plant integration, open-loop simulation and the closed-loop EMPC driver.

The plant is integrated with classical RK4 directly on ``ocp.f``; nothing here
reuses the collocation defects, so simulated costs are free to disagree with
the costs reported by the solver.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .metrics import simulated_cost, total_variation
from .ocp import Mesh, OcpDefinition, Trajectory
from .solver import SolveResult, SolverOptions, solve
from .transcription import (IrrConfig, ResidualQuadrature, TranscriptionError, transcribe_dc,
                            transcribe_irrdc)

logger = logging.getLogger(__name__)

MIN_SHRINKING_INTERVALS = 5


class IntegrationError(RuntimeError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


@dataclass
class PlantTrace:
    """Dense plant samples: ``t`` (N,), ``x`` (N, n), ``u`` (N, m)."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray

    def append(self, other: "PlantTrace") -> "PlantTrace":
        # the first sample of ``other`` duplicates our last time; keep the newer control
        if self.t.size == 0:
            return other
        u = self.u.copy()
        u[-1] = other.u[0]
        return PlantTrace(np.concatenate([self.t, other.t[1:]]),
                          np.vstack([self.x, other.x[1:]]),
                          np.vstack([u, other.u[1:]]))


@dataclass
class SimResult:
    trace: PlantTrace
    cost: float

    @property
    def final_state(self) -> np.ndarray:
        return self.trace.x[-1]


def plant_substep(dt: Optional[float]) -> float:
    return 1e-3 if dt is None else min(dt / 10.0, 1e-3)


def integrate_plant(ocp: OcpDefinition, x0, control: Callable, t0: float, t1: float,
                    h_max: float = 1e-3) -> PlantTrace:
    """RK4 on ``[t0, t1]`` with equal substeps no longer than ``h_max``.

    ``control`` maps an array of times to an (N, m) array; it is sampled at
    every RK stage time.
    """
    if not t1 > t0:
        raise ValueError("integration interval must have t1 > t0")
    n_steps = max(1, int(np.ceil((t1 - t0) / h_max - 1e-9)))
    h = (t1 - t0) / n_steps
    stage_t = t0 + 0.5 * h * np.arange(2 * n_steps + 1)
    stage_t[-1] = t1
    U = np.asarray(control(stage_t), dtype=float).reshape(stage_t.size, -1)
    x = np.array(x0, dtype=float)
    xs = np.empty((n_steps + 1, x.size))
    xs[0] = x

    def f(xx, uu, tt):
        return ocp.f(xx[None, :], uu[None, :], np.array([tt]))[0]

    for k in range(n_steps):
        t = stage_t[2 * k]
        u0, um, u1 = U[2 * k], U[2 * k + 1], U[2 * k + 2]
        k1 = f(x, u0, t)
        k2 = f(x + 0.5 * h * k1, um, t + 0.5 * h)
        k3 = f(x + 0.5 * h * k2, um, t + 0.5 * h)
        k4 = f(x + h * k3, u1, t + h)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"plant state blew up at t={t + h:.6g}", time=t + h)
        xs[k + 1] = x
    return PlantTrace(stage_t[::2].copy(), xs, U[::2].copy())


def simulate_open_loop(ocp: OcpDefinition, traj: Trajectory, h_max: float = 1e-3) -> SimResult:
    """Apply the interpolated control of ``traj`` to the plant from the true initial state."""
    trace = integrate_plant(ocp, ocp.initial_state, traj.eval_control, traj.t0, traj.tf, h_max)
    return SimResult(trace, simulated_cost(trace, ocp))


@dataclass(frozen=True)
class EmpcConfig:
    step: float = 0.01
    horizon: float = 5.0
    mode: str = "receding"
    method: str = "dc"
    mesh_Z: int = 100
    warm_start: bool = True
    on_solver_failure: str = "hold_previous"
    duration: Optional[float] = None  # receding mode; defaults to the OCP horizon
    warm_mu_init: float = 1e-6
    solver: SolverOptions = field(default_factory=SolverOptions)
    irr: IrrConfig = field(default_factory=IrrConfig)
    quadrature: ResidualQuadrature = field(default_factory=ResidualQuadrature)

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.horizon >= self.step:
            raise ValueError("horizon must be at least one step")
        if self.mesh_Z < 2:
            raise ValueError("mesh_Z must be at least 2")
        if self.mode not in ("receding", "shrinking"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.method not in ("dc", "irrdc"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.on_solver_failure not in ("hold_previous", "abort"):
            raise ValueError(f"unknown failure policy {self.on_solver_failure!r}")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be positive")


@dataclass
class StepRecord:
    t: float
    status: str
    kkt_residual: float
    iterations: int
    objective: float
    mesh_Z: int
    applied: str  # "solution", "held" or "open-loop"
    residual_cap: Optional[float] = None


@dataclass
class ClosedLoopResult:
    times: np.ndarray
    applied_controls: np.ndarray
    plant_states: np.ndarray
    steps: list
    achieved_cost: float
    fluctuation_tv: float
    trace: PlantTrace
    config: EmpcConfig

    @property
    def statuses(self) -> list:
        return [s.status for s in self.steps]


class EmpcAborted(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


def _shifted_guess(nlp, previous: Optional[Trajectory], x0):
    if previous is None:
        w = nlp.cold_start()
    else:
        w = nlp.from_trajectory(previous)
    w[nlp.layout.node_x[0]] = x0
    return nlp.complete(w)


def _solve_horizon(ocp, mesh, cfg: EmpcConfig, previous: Optional[Trajectory], x0):
    """Transcribe and solve one horizon problem; returns (nlp, result)."""
    warm = cfg.warm_start and previous is not None
    opts = dataclasses.replace(cfg.solver, mu_init=cfg.warm_mu_init) if warm else cfg.solver
    prev = previous if warm else None
    if cfg.method == "dc":
        nlp = transcribe_dc(ocp, mesh)
        return nlp, solve(nlp, _shifted_guess(nlp, prev, x0), opts)
    w1 = None
    if prev is not None:
        from .transcription import transcribe_residual_min

        w1 = _shifted_guess(transcribe_residual_min(ocp, mesh, cfg.quadrature), prev, x0)
    nlp = transcribe_irrdc(ocp, mesh, cfg.quadrature, cfg.irr, w0=w1, solver_options=opts)
    w0 = _shifted_guess(nlp, prev, x0) if prev is not None else nlp.warm_start
    return nlp, solve(nlp, w0, opts)


def run_empc(ocp: OcpDefinition, cfg: EmpcConfig | None = None,
             progress: Optional[Callable[[StepRecord], None]] = None) -> ClosedLoopResult:
    """Closed-loop economic MPC on the plant ``ocp.f``.

    Receding mode solves on ``[t_k, t_k + horizon]`` for ``duration`` seconds;
    shrinking mode solves on ``[t_k, tf]`` with the mesh scaled to the
    remaining time and plays the last solution out once fewer than
    ``MIN_SHRINKING_INTERVALS`` intervals would remain.
    """
    cfg = cfg or EmpcConfig()
    dt = cfg.step
    t0 = ocp.t0
    t_end = ocp.tf if cfg.mode == "shrinking" else t0 + (cfg.duration or ocp.horizon)
    n_steps = int(round((t_end - t0) / dt))
    if n_steps < 1:
        raise ValueError("closed-loop duration shorter than one step")
    h_p = plant_substep(dt)

    x = np.array(ocp.initial_state, dtype=float)
    trace = PlantTrace(np.empty(0), np.empty((0, ocp.n_states)), np.empty((0, ocp.n_controls)))
    times, states, controls, steps = [], [], [], []
    previous: Optional[Trajectory] = None
    playout = False

    for k in range(n_steps):
        tk = t0 + k * dt
        t_next = t_end if k == n_steps - 1 else t0 + (k + 1) * dt
        applied = "solution"
        record = None
        if cfg.mode == "shrinking":
            Z = int(round(cfg.mesh_Z * (t_end - tk) / ocp.horizon))
            playout = playout or Z < MIN_SHRINKING_INTERVALS
            sub = ocp.with_horizon(tk, t_end, x)
        else:
            Z = cfg.mesh_Z
            sub = ocp.with_horizon(tk, tk + cfg.horizon, x)
        if playout and previous is not None:
            record = StepRecord(tk, "open-loop", np.nan, 0, np.nan, 0, "open-loop")
            traj = previous
        else:
            mesh = Mesh.uniform(sub.t0, sub.tf, Z)
            try:
                nlp, res = _solve_horizon(sub, mesh, cfg, previous, x)
                ok = res.success
            except TranscriptionError as exc:
                res = exc.result if isinstance(exc.result, SolveResult) else None
                nlp, ok = None, False
            cap = getattr(nlp, "residual_cap", None) if nlp is not None else None
            record = StepRecord(
                tk, res.status if res is not None else "phase1_failure",
                float(res.kkt_residual) if res is not None else np.nan,
                int(res.iterations) if res is not None else 0,
                float(res.objective) if res is not None else np.nan, Z, "solution", cap)
            if ok:
                traj = nlp.to_trajectory(res.primal)
            elif cfg.on_solver_failure == "hold_previous" and previous is not None:
                traj = previous
                record.applied = "held"
            else:
                # the partial run ends at the state reached, with no control applied there
                nan_u = np.full(ocp.n_controls, np.nan)
                partial = _result(times + [tk], states + [x.copy()], controls + [nan_u], steps + [record],
                                  trace, ocp, cfg)
                raise EmpcAborted(f"solver failed at t={tk:.4g} with status {record.status}", partial)
            previous = traj
        logger.debug("t=%.3f %s %s", tk, record.status, record.applied)
        steps.append(record)
        if progress is not None:
            progress(record)

        times.append(tk)
        states.append(x.copy())
        controls.append(np.asarray(traj.eval_control(np.array([tk])), dtype=float)[0])
        seg = integrate_plant(ocp, x, lambda t, tr=traj: tr.eval_control(np.clip(t, tr.t0, tr.tf)),
                              tk, t_next, h_p)
        trace = trace.append(seg)
        x = seg.x[-1]

    times.append(t_end)
    states.append(x.copy())
    controls.append(trace.u[-1].copy())
    return _result(times, states, controls, steps, trace, ocp, cfg)


def _result(times, states, controls, steps, trace, ocp, cfg):
    have = trace.t.size > 1
    return ClosedLoopResult(
        times=np.asarray(times, dtype=float),
        applied_controls=np.asarray(controls, dtype=float).reshape(len(controls), ocp.n_controls),
        plant_states=np.asarray(states, dtype=float).reshape(len(states), ocp.n_states),
        steps=list(steps),
        achieved_cost=simulated_cost(trace, ocp) if have else float("nan"),
        fluctuation_tv=total_variation(np.asarray(controls, dtype=float)[:-1]) if len(controls) > 1 else float("nan"),
        trace=trace,
        config=cfg,
    )
