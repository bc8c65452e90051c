"""Cost, gap and fluctuation metrics plus CSV/JSON/SVG serialization."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import simpson

CSV_FLOAT = "%.17g"


class GapUndefined(ValueError):
    """Relative gap requested for a zero reference cost."""


def optimality_gap(J_m: float, J_a: float) -> float:
    """Relative excess ``|J_a - J_m| / |J_a|``."""
    if J_a == 0:
        raise GapUndefined("relative gap undefined for a zero reference cost; use the absolute error")
    return abs(J_a - J_m) / abs(J_a)


def simulated_cost(trace, ocp) -> float:
    """Composite Simpson integral of the running cost on a dense trace plus the Mayer term."""
    t = np.asarray(trace.t, dtype=float)
    x = np.asarray(trace.x, dtype=float).reshape(t.size, -1)
    u = np.asarray(trace.u, dtype=float).reshape(t.size, -1)
    J = 0.0
    if ocp.lagrange_cost is not None and t.size > 1:
        J += float(simpson(ocp.running_cost(x, u, t), x=t))
    if ocp.mayer_cost is not None:
        J += float(ocp.terminal_cost(x[0], x[-1]))
    return J


def total_variation(u_series) -> float:
    """Sum over channels of ``sum_k |u[k+1] - u[k]|``."""
    u = np.asarray(u_series, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] < 2:
        return 0.0
    return float(np.sum(np.abs(np.diff(u, axis=0))))


def sample_control(traj, oversample: int = 10):
    """Times and control values on a grid ``oversample`` times finer than the mesh."""
    steps = traj.mesh.steps
    n = int(math.ceil((traj.tf - traj.t0) / (float(np.min(steps)) / oversample) - 1e-9))
    t = np.linspace(traj.t0, traj.tf, n + 1)
    return t, np.asarray(traj.eval_control(t), dtype=float)


def open_loop_tv(traj, oversample: int = 10) -> float:
    return total_variation(sample_control(traj, oversample)[1])


@dataclass
class ResidualReport:
    interval_starts: np.ndarray
    per_interval: np.ndarray
    total: float


def residual_report(traj, ocp, quad=None) -> ResidualReport:
    from .transcription import ResidualQuadrature, residual_by_interval

    per = np.asarray(residual_by_interval(traj, ocp, quad or ResidualQuadrature()), dtype=float)
    return ResidualReport(traj.mesh.node_times[:-1].copy(), per, float(np.sum(per)))


def _clean(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class MetricsRow:
    label: str
    solver_reported_cost: Optional[float] = None
    simulated_cost: Optional[float] = None
    optimality_gap_percent: Optional[float] = None
    total_variation: Optional[float] = None
    integrated_residual: Optional[float] = None
    gap_kind: str = "relative"  # "relative" (percent) or "absolute" (cost units)
    status: str = "ok"

    def __post_init__(self):
        for name in ("solver_reported_cost", "simulated_cost", "optimality_gap_percent",
                     "total_variation", "integrated_residual"):
            setattr(self, name, _clean(getattr(self, name)))

    @property
    def gap_cost(self) -> Optional[float]:
        """Cost used for the gap: simulated if available, else solver-reported."""
        return self.simulated_cost if self.simulated_cost is not None else self.solver_reported_cost


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)
    reference_label: str = "Analytic"
    reference_cost: Optional[float] = None

    def add(self, label, solver_reported_cost=None, simulated_cost=None, total_variation=None,
            integrated_residual=None, status="ok") -> MetricsRow:
        row = MetricsRow(label, solver_reported_cost, simulated_cost, None, total_variation,
                         integrated_residual, status=status)
        self._fill_gap(row)
        self.rows.append(row)
        return row

    def _fill_gap(self, row: MetricsRow):
        J = row.gap_cost
        if J is None or self.reference_cost is None:
            return
        try:
            row.optimality_gap_percent = 100.0 * optimality_gap(J, self.reference_cost)
            row.gap_kind = "relative"
        except GapUndefined:
            row.optimality_gap_percent = abs(J - self.reference_cost)
            row.gap_kind = "absolute"

    def row(self, label: str) -> MetricsRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {"reference_label": self.reference_label, "reference_cost": self.reference_cost,
                "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsTable":
        return cls([MetricsRow(**r) for r in d.get("rows", [])], d.get("reference_label", "Analytic"),
                   d.get("reference_cost"))


@dataclass
class Series:
    """One time series for serialization; ``status``/``kkt`` are set for closed-loop runs."""

    label: str
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    status: Optional[Sequence[str]] = None
    kkt: Optional[Sequence[float]] = None


@dataclass
class Report:
    series: list = field(default_factory=list)
    table: Optional[MetricsTable] = None
    config: dict = field(default_factory=dict)
    portrait: list = field(default_factory=list)  # (label, x1 scaled, x2 scaled)
    portrait_axes: tuple = ("x1/C1", "x2/C2")


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return CSV_FLOAT % v if math.isfinite(v) else "nan"


def _csv_rows(s: Series):
    t = np.asarray(s.t, dtype=float)
    x = np.asarray(s.x, dtype=float).reshape(t.size, -1)
    u = np.asarray(s.u, dtype=float).reshape(t.size, -1)
    header = ["t"] + [f"x_{i + 1}" for i in range(x.shape[1])] + [f"u_{j + 1}" for j in range(u.shape[1])]
    closed = s.status is not None
    if closed:
        header += ["solve_status", "kkt_residual"]
    rows = []
    for k in range(t.size):
        row = [_fmt(t[k])] + [_fmt(v) for v in x[k]] + [_fmt(v) for v in u[k]]
        if closed:
            st = s.status[k] if k < len(s.status) else ""
            kk = s.kkt[k] if s.kkt is not None and k < len(s.kkt) else None
            row += [st, _fmt(kk)]
        rows.append(row)
    return header, rows


def _write_csv(path: Path, series: Series | None):
    header, rows = (["t"], []) if series is None else _csv_rows(series)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> dict:
    """Column name -> list of strings (numeric columns converted to float)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for i, name in enumerate(header):
        col = [r[i] for r in body]
        if name == "solve_status":
            out[name] = col
        else:
            out[name] = [float(v) if v not in ("",) else float("nan") for v in col]
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return _clean(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, report: Report):
    doc = {"table": report.table.to_dict() if report.table is not None else None,
           "config": _jsonable(report.config)}
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _write_svg(path: Path, report: Report):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "irrdc", "svg.fonttype": "none"}):
        panels = int(bool(report.series)) * 2 + int(bool(report.portrait))
        fig, axes = plt.subplots(max(panels, 1), 1, figsize=(7, 3 * max(panels, 1)), squeeze=False)
        axes = axes[:, 0]
        i = 0
        if report.series:
            ax_u, ax_x = axes[0], axes[1]
            for s in report.series:
                t = np.asarray(s.t, dtype=float)
                u = np.asarray(s.u, dtype=float).reshape(t.size, -1)
                x = np.asarray(s.x, dtype=float).reshape(t.size, -1)
                for j in range(u.shape[1]):
                    ax_u.plot(t, u[:, j], label=f"{s.label} u{j + 1}")
                for j in range(x.shape[1]):
                    ax_x.plot(t, x[:, j], label=f"{s.label} x{j + 1}")
            ax_u.set_ylabel("control")
            ax_x.set_ylabel("state")
            ax_x.set_xlabel("t")
            ax_u.legend(fontsize=7)
            ax_x.legend(fontsize=7)
            i = 2
        if report.portrait:
            ax = axes[i]
            for k, (label, a, b) in enumerate(report.portrait):
                ax.plot(a, b, label=label, gid=f"curve-{k}")
            ax.set_xlabel(report.portrait_axes[0])
            ax.set_ylabel(report.portrait_axes[1])
            ax.axhline(0, color="0.7", lw=0.5)
            ax.axvline(0, color="0.7", lw=0.5)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit(report: Report, fmt: str, path) -> list:
    """Write ``report`` as ``fmt`` to ``path``; returns the written paths.

    CSV holds one series per file; extra series go to ``<stem>_<label>.csv``.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            if len(report.series) <= 1:
                _write_csv(path, report.series[0] if report.series else None)
                return [path]
            out = []
            for s in report.series:
                safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in s.label)
                p = path.with_name(f"{path.stem}_{safe}{path.suffix}")
                _write_csv(p, s)
                out.append(p)
            return out
        if fmt == "json":
            _write_json(path, report)
            return [path]
        if fmt == "svg":
            _write_svg(path, report)
            return [path]
    except OSError as exc:
        raise OSError(f"could not write {fmt} output to {path}: {exc}") from exc
    raise ValueError(f"unknown output format {fmt!r}")
