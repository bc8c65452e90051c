"""Command-line entry point: ``irrdc {solve,empc,table1,report}``.

Settings are layered: built-in defaults, problem-specific defaults, a YAML
config file (``--config``) and finally command-line flags.
"""
from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import experiments as ex
from .benchmarks import SmibParams, get_problem
from .metrics import MetricsTable, Report, Series, emit, read_csv
from .simulator import EmpcAborted, EmpcConfig, run_empc
from .solver import SolverOptions
from .transcription import IrrConfig

OUTPUT_ENV = "IRRDC_OUTPUT_DIR"
PROBLEMS = ("second-order", "aly-chan", "smib")
FORMATS = ("csv", "json", "svg")

EXIT_OK, EXIT_USAGE, EXIT_NONOPTIMAL = 0, 1, 2


class ConfigError(ValueError):
    pass


def _fields(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls)}


_EMPC_KEYS = {k for k in _fields(EmpcConfig) if k not in ("method", "mesh_Z", "solver", "irr", "quadrature")}
_SECTIONS = {
    "empc": _EMPC_KEYS,
    "solver": set(_fields(SolverOptions)),
    "smib": set(_fields(SmibParams)),
    "irr": set(_fields(IrrConfig)),
}
_TOP_KEYS = {"problem", "method", "mode", "mesh_Z", "output_dir", "formats", "sweep_initial"} | set(_SECTIONS)

DEFAULTS = {
    "problem": None,
    "method": "irrdc",
    "mode": None,
    "mesh_Z": 100,
    "output_dir": None,
    "formats": ["csv", "json"],
    "sweep_initial": None,
    "empc": {},
    "solver": {},
    "smib": {},
    "irr": {},
}


def problem_defaults(problem: Optional[str]) -> dict:
    if problem == "aly-chan":
        # a Mayer cost at a fixed endpoint only makes sense on a shrinking horizon
        return {"empc": {"mode": "shrinking"}, "irr": {"eps_abs": ex.ALY_CHAN_IRR.eps_abs}}
    if problem != "smib":
        return {}
    solver = {k: getattr(ex.SMIB_SOLVER, k) for k in ("acceptable_tol", "acceptable_iter", "max_iter")}
    return {"smib": {"H": ex.SMIB_PARAMS.H}, "empc": {"mode": ex.SMIB_EMPC_MODE, "step": ex.SMIB_STEP},
            "solver": solver}


def validate_config(cfg: dict) -> dict:
    """Reject unknown keys and bad enumerations; returns ``cfg`` unchanged."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for sec, keys in _SECTIONS.items():
        val = cfg.get(sec) or {}
        if not isinstance(val, dict):
            raise ConfigError(f"section {sec!r} must be a mapping")
        bad = set(val) - keys
        if bad:
            raise ConfigError(f"unknown keys in {sec!r}: {sorted(bad)}")
    if cfg.get("problem") is not None and cfg["problem"] not in PROBLEMS:
        raise ConfigError(f"problem must be one of {PROBLEMS}")
    if cfg.get("method") is not None and cfg["method"] not in ex.METHODS:
        raise ConfigError(f"method must be one of {ex.METHODS}")
    if cfg.get("mode") is not None and cfg["mode"] not in ("open-loop", "closed-loop"):
        raise ConfigError("mode must be open-loop or closed-loop")
    fmts = cfg.get("formats")
    if fmts is not None and (not isinstance(fmts, list) or set(fmts) - set(FORMATS)):
        raise ConfigError(f"formats must be a list drawn from {FORMATS}")
    if cfg.get("sweep_initial") not in (None, "phase-grid"):
        raise ConfigError("sweep_initial must be 'phase-grid'")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return validate_config(data)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        elif v is not None:
            out[k] = v
    return out


def resolve_config(file_cfg: dict, cli_cfg: dict) -> dict:
    problem = cli_cfg.get("problem") or file_cfg.get("problem")
    cfg = _merge(_merge(_merge(DEFAULTS, problem_defaults(problem)), file_cfg), cli_cfg)
    validate_config(cfg)
    if cfg["output_dir"] is None:
        cfg["output_dir"] = os.environ.get(OUTPUT_ENV, "results")
    return cfg


def _build_objects(cfg: dict):
    try:
        solver = SolverOptions(**cfg["solver"])
        irr = IrrConfig(**cfg["irr"])
        smib = SmibParams(**cfg["smib"])
        empc = EmpcConfig(method=cfg["method"], mesh_Z=int(cfg["mesh_Z"]), solver=solver, irr=irr,
                          **cfg["empc"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return solver, irr, smib, empc


def _problem(cfg: dict, smib: SmibParams):
    if cfg["problem"] is None:
        raise ConfigError("a problem is required (--problem or 'problem' in the config file)")
    return get_problem(cfg["problem"], smib)


def _stem(cfg: dict, loop: str) -> str:
    return f"{cfg['problem']}_{cfg['method']}_{loop}"


def _emit_all(report: Report, out_dir: Path, stem: str, formats) -> list:
    written = []
    for fmt in formats:
        written += emit(report, fmt, out_dir / f"{stem}.{fmt}")
    return written


def _x_series(label, t, x, u, status=None, kkt=None):
    return Series(label, np.asarray(t), np.asarray(x), np.asarray(u), status, kkt)


def cmd_solve(cfg: dict) -> int:
    solver, irr, smib, _ = _build_objects(cfg)
    ocp = _problem(cfg, smib)
    run = ex.solve_open_loop(ocp, cfg["method"], int(cfg["mesh_Z"]), solver, irr)
    if run.trajectory is None:
        print(f"error: {run.info.get('error')}", file=sys.stderr)
        return EXIT_NONOPTIMAL
    table = MetricsTable(reference_cost=_reference(cfg["problem"]))
    table.add(f"open-loop {ex.METHOD_LABELS[cfg['method']]}", run.result.objective, run.simulation.cost,
              run.total_variation, run.integrated_residual, run.result.status)
    tr = run.simulation.trace
    report = Report([_x_series(cfg["problem"], tr.t, tr.x, tr.u)], table,
                    _config_record(cfg, run=dict(run.result.summary(), **run.info)))
    _emit_all(report, Path(cfg["output_dir"]), _stem(cfg, "open_loop"), cfg["formats"])
    print(f"{run.result.status}: objective={run.result.objective:.10g} "
          f"simulated={run.simulation.cost:.10g} tv={run.total_variation:.6g}")
    return EXIT_OK if run.success else EXIT_NONOPTIMAL


def _reference(problem):
    try:
        return ex.analytic_reference(problem)
    except ValueError:
        return None


def _closed_loop_series(label, res):
    status = [s.status for s in res.steps] + [""]
    kkt = [s.kkt_residual for s in res.steps] + [None]
    return _x_series(label, res.times, res.plant_states, res.applied_controls, status, kkt)


def _closed_ok(res) -> bool:
    return all(s.applied != "held" and (s.applied == "open-loop" or s.status in ("optimal", "acceptable"))
               for s in res.steps)


def cmd_empc(cfg: dict) -> int:
    solver, irr, smib, empc = _build_objects(cfg)
    ocp = _problem(cfg, smib)
    out_dir = Path(cfg["output_dir"])
    if cfg["sweep_initial"] == "phase-grid":
        if cfg["problem"] != "smib":
            raise ConfigError("the phase-grid sweep applies to the smib problem")
        starts = ex.phase_grid(smib)
    else:
        starts = [ocp.initial_state]
    table = MetricsTable(reference_cost=_reference(cfg["problem"]))
    report = Report(table=table)
    ok = True
    for x0 in starts:
        sub = ocp.with_horizon(ocp.t0, ocp.tf, np.asarray(x0, dtype=float))
        label = f"x0=({x0[0]:g},{x0[1]:g})" if len(starts) > 1 else cfg["problem"]
        try:
            res = run_empc(sub, empc)
        except EmpcAborted as exc:
            print(f"error: {exc}", file=sys.stderr)
            res, ok = exc.partial, False
        ok = ok and _closed_ok(res)
        table.add(f"closed-loop {ex.METHOD_LABELS[cfg['method']]} {label}", simulated_cost=res.achieved_cost,
                  total_variation=res.fluctuation_tv, status="ok" if _closed_ok(res) else "degraded")
        report.series.append(_closed_loop_series(label, res))
        if cfg["problem"] == "smib":
            report.portrait.append((label, res.plant_states[:, 0] / smib.C1, res.plant_states[:, 1] / smib.C2))
        print(f"{label}: cost={res.achieved_cost:.10g} tv={res.fluctuation_tv:.6g}")
    report.config = _config_record(cfg)
    _emit_all(report, out_dir, _stem(cfg, "closed_loop"), cfg["formats"])
    return EXIT_OK if ok else EXIT_NONOPTIMAL


def cmd_table1(cfg: dict) -> int:
    solver, irr, _, empc = _build_objects(cfg)
    table = ex.table1(int(cfg["mesh_Z"]), solver, empc, irr,
                      progress=lambda label: print(f"running {label}", file=sys.stderr))
    report = Report(table=table, config=_config_record(cfg))
    emit(report, "json", Path(cfg["output_dir"]) / "table1.json")
    print(format_table(table))
    failed = any(r.status.startswith("failed") for r in table.rows)
    return EXIT_NONOPTIMAL if failed else EXIT_OK


def cmd_report(cfg: dict, input_dir: Path) -> int:
    """Print every stored table under ``input_dir`` and plot its trace CSVs into ``report.svg``."""
    if not input_dir.is_dir():
        raise ConfigError(f"no such directory: {input_dir}")
    for path in sorted(input_dir.glob("*.json")):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("table"):
            print(f"# {path.name}")
            print(format_table(MetricsTable.from_dict(doc["table"])))
    series = []
    for path in sorted(input_dir.glob("*.csv")):
        cols = read_csv(path)
        if not cols.get("t"):
            continue
        xs = [k for k in cols if k.startswith("x_")]
        us = [k for k in cols if k.startswith("u_")]
        series.append(Series(path.stem, np.array(cols["t"]), np.column_stack([cols[k] for k in xs]),
                             np.column_stack([cols[k] for k in us])))
    if series:
        emit(Report(series), "svg", Path(cfg["output_dir"]) / "report.svg")
    return EXIT_OK


def format_table(table: MetricsTable) -> str:
    head = f"{'method':<32} {'solver cost':>14} {'simulated':>14} {'gap':>12} {'TV':>10}  status"
    lines = [head, "-" * len(head)]

    def num(v, fmt):
        return format(v, fmt) if v is not None else "-"

    for r in table.rows:
        gap = "-" if r.optimality_gap_percent is None else (
            f"{r.optimality_gap_percent:.4f}%" if r.gap_kind == "relative" else f"{r.optimality_gap_percent:.2e}")
        lines.append(f"{r.label:<32} {num(r.solver_reported_cost, '14.8f')} {num(r.simulated_cost, '14.8f')} "
                     f"{gap:>12} {num(r.total_variation, '10.4g')}  {r.status}")
    return "\n".join(lines)


def _config_record(cfg: dict, **extra) -> dict:
    rec = {k: v for k, v in cfg.items() if k != "output_dir"}
    rec.update(extra)
    return rec


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="irrdc", description="Direct collocation and integrated-residual experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML file with the run configuration")
        sp.add_argument("--output-dir", dest="output_dir", help=f"artifact directory (default ${OUTPUT_ENV} or ./results)")
        sp.add_argument("--formats", nargs="+", choices=FORMATS)
        sp.add_argument("--mesh", "--mesh-Z", dest="mesh_Z", type=int)
        sp.add_argument("--tol-kkt", dest="solver.tol_kkt", type=float)
        sp.add_argument("--max-iter", dest="solver.max_iter", type=int)
        sp.add_argument("--eta", dest="irr.eta", type=float)
        sp.add_argument("--eps-abs", dest="irr.eps_abs", type=float)

    def problem_args(sp):
        sp.add_argument("--problem", choices=PROBLEMS)
        sp.add_argument("--method", choices=ex.METHODS)
        sp.add_argument("--H", dest="smib.H", type=float, help="SMIB inertia constant")

    s = sub.add_parser("solve", help="open-loop transcription, solve and plant simulation")
    common(s)
    problem_args(s)
    e = sub.add_parser("empc", help="closed-loop economic MPC")
    common(e)
    problem_args(e)
    e.add_argument("--step", dest="empc.step", type=float)
    e.add_argument("--horizon", dest="empc.horizon", type=float)
    e.add_argument("--empc-mode", dest="empc.mode", choices=("receding", "shrinking"))
    e.add_argument("--duration", dest="empc.duration", type=float)
    e.add_argument("--no-warm-start", dest="empc.warm_start", action="store_const", const=False)
    e.add_argument("--on-solver-failure", dest="empc.on_solver_failure", choices=("hold_previous", "abort"))
    e.add_argument("--sweep-initial", dest="sweep_initial", choices=("phase-grid",))
    t = sub.add_parser("table1", help="costs and gaps of every method on the double integrator")
    common(t)
    t.add_argument("--step", dest="empc.step", type=float)
    t.add_argument("--duration", dest="empc.duration", type=float)
    r = sub.add_parser("report", help="summarise stored artifacts")
    r.add_argument("input_dir", type=Path)
    r.add_argument("--output-dir", dest="output_dir")
    return p


def _cli_overrides(ns: argparse.Namespace) -> dict:
    out: dict = {}
    for key, val in vars(ns).items():
        if key in ("command", "config", "input_dir") or val is None:
            continue
        if "." in key:
            sec, name = key.split(".", 1)
            out.setdefault(sec, {})[name] = val
        else:
            out[key] = val
    return out


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        file_cfg = load_config(ns.config) if getattr(ns, "config", None) else {}
        cfg = resolve_config(file_cfg, _cli_overrides(ns))
        if ns.command == "solve":
            cfg["mode"] = "open-loop"
            return cmd_solve(cfg)
        if ns.command == "empc":
            cfg["mode"] = "closed-loop"
            return cmd_empc(cfg)
        if ns.command == "table1":
            return cmd_table1(cfg)
        return cmd_report(cfg, ns.input_dir)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"irrdc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"irrdc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
