import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import integrator, time_cost
from irrdc.benchmarks import aly_chan
from irrdc.metrics import (GapUndefined, MetricsRow, MetricsTable, Report, Series, emit, open_loop_tv,
                           optimality_gap, read_csv, residual_report, sample_control, simulated_cost,
                           total_variation)
from irrdc.oracles import aly_chan_analytic
from irrdc.transcription import ResidualQuadrature, integrated_residual


def test_gap_examples():
    assert optimality_gap(0.37699186, 0.37699) == pytest.approx(4.934e-6, rel=1e-3)
    assert optimality_gap(0.37706, 0.37699) == pytest.approx(7e-5 / 0.37699, rel=1e-9)
    assert optimality_gap(0.5, 0.5) == 0.0
    assert optimality_gap(0.3, 0.4) == pytest.approx(optimality_gap(0.5, 0.4), rel=1e-14)


def test_gap_undefined_for_zero_reference():
    with pytest.raises(GapUndefined):
        optimality_gap(1e-3, 0.0)
    assert issubclass(GapUndefined, ValueError)


def _trace(t, x, u):
    return SimpleNamespace(t=np.asarray(t), x=np.asarray(x), u=np.asarray(u))


def test_simulated_cost_unit_running_cost():
    ocp = integrator(tf=4.0, cost=time_cost(lambda t: np.ones_like(t)))
    t = np.linspace(0, 4, 4001)
    assert simulated_cost(_trace(t, np.zeros((t.size, 1)), np.zeros((t.size, 1))), ocp) == pytest.approx(4.0, abs=1e-13)


def test_simulated_cost_mayer_only():
    ocp = aly_chan()
    t = np.linspace(0, np.pi / 2, 1571)
    x, u = aly_chan_analytic(t)
    assert abs(simulated_cost(_trace(t, x, u[:, None]), ocp)) <= 1e-6


def test_tv_examples():
    assert total_variation(np.full(7, 0.3)) == 0.0
    assert total_variation([-1.0, 1.0, -1.0, 1.0]) == 6.0
    t = np.arange(0, np.pi / 2 + 1e-12, 0.01)
    assert total_variation(-np.sin(t)) == pytest.approx(1.0, abs=0.01)
    assert total_variation(np.array([[0.0, 1.0], [1.0, -1.0]])) == 3.0
    assert total_variation([2.0]) == 0.0


series = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=40)


@settings(max_examples=100, deadline=None)
@given(series)
def test_tv_unchanged_by_linear_midpoints(u):
    u = np.asarray(u)
    fine = np.empty(2 * u.size - 1)
    fine[::2] = u
    fine[1::2] = 0.5 * (u[:-1] + u[1:])
    assert total_variation(fine) == pytest.approx(total_variation(u), rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(series, st.integers(0, 38), st.floats(0.01, 5))
def test_tv_grows_with_oscillation(u, k, amp):
    u = np.asarray(u)
    k = k % (u.size - 1)
    mid = 0.5 * (u[k] + u[k + 1])
    spike = np.insert(u, k + 1, max(u[k], u[k + 1]) + amp)
    assert total_variation(spike) > total_variation(u)
    assert total_variation(np.insert(u, k + 1, mid)) == pytest.approx(total_variation(u), abs=1e-12)


def test_sample_control_grid(second_order_runs):
    traj = second_order_runs["dc"].trajectory
    t, u = sample_control(traj)
    assert t.size == 1001
    assert np.allclose(np.diff(t), 0.005)
    assert u.shape == (1001, 1)
    assert open_loop_tv(traj) == total_variation(u)


def test_residual_report_matches_integrated_residual(second_order_runs):
    run = second_order_runs["dc"]
    rep = residual_report(run.trajectory, run.ocp)
    assert rep.per_interval.shape == (100,)
    assert rep.total == pytest.approx(integrated_residual(run.trajectory, run.ocp, ResidualQuadrature()), rel=1e-12)
    assert np.array_equal(rep.interval_starts, run.trajectory.mesh.node_times[:-1])


def _table():
    table = MetricsTable(reference_cost=0.3769919302879695)
    table.add("Analytic", solver_reported_cost=0.3769919302879695, status="reference")
    table.add("open DC", solver_reported_cost=0.37699231, total_variation=83.0, integrated_residual=1e-6)
    table.add("sim DC", simulated_cost=0.376996, total_variation=83.0)
    table.add("closed", simulated_cost=0.3770576, total_variation=float("nan"))
    return table


def test_gap_prefers_simulated_cost():
    row = MetricsRow("x", solver_reported_cost=1.0, simulated_cost=2.0)
    assert row.gap_cost == 2.0
    assert MetricsRow("y", solver_reported_cost=1.0).gap_cost == 1.0
    assert MetricsRow("z", total_variation=float("inf")).total_variation is None


def test_absolute_gap_for_zero_reference():
    table = MetricsTable(reference_cost=0.0)
    row = table.add("IRR-DC", solver_reported_cost=-3e-7)
    assert row.gap_kind == "absolute"
    assert row.optimality_gap_percent == 3e-7


def test_json_round_trip_and_gap_recomputation(tmp_path):
    table = _table()
    path = emit(Report(table=table, config={"mesh_Z": 100, "eta": np.float64(10.0)}), "json", tmp_path / "t.json")[0]
    doc = json.loads(path.read_text())
    back = MetricsTable.from_dict(doc["table"])
    assert back == table
    assert doc["config"] == {"mesh_Z": 100, "eta": 10.0}
    for row in back.rows:
        if row.optimality_gap_percent is not None:
            assert row.optimality_gap_percent == pytest.approx(
                100 * optimality_gap(row.gap_cost, back.reference_cost), abs=1e-12)
    assert back.row("closed").total_variation is None


def test_emit_is_deterministic(tmp_path):
    t = np.linspace(0, 1, 11)
    rep = Report([Series("a", t, np.c_[t, t ** 2], np.sin(t))], _table(), {"k": 1},
                 [("a", t, -t)])
    outs = {}
    for fmt in ("csv", "json", "svg"):
        a = emit(rep, fmt, tmp_path / "one" / f"r.{fmt}")[0].read_bytes()
        b = emit(rep, fmt, tmp_path / "two" / f"r.{fmt}")[0].read_bytes()
        assert a == b
        outs[fmt] = a
    assert outs["svg"].count(b'id="curve-0"') == 1


def test_csv_header_and_precision(tmp_path):
    t = np.array([0.0, 0.1])
    x = np.array([[1 / 3, 2.0], [np.pi, -1e-300]])
    u = np.array([[0.1], [0.2]])
    path = emit(Report([Series("s", t, x, u)]), "csv", tmp_path / "s.csv")[0]
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x_1,x_2,u_1"
    back = read_csv(path)
    assert back["x_1"] == [1 / 3, np.pi]
    assert back["x_2"][1] == -1e-300


def test_closed_loop_csv_columns(tmp_path):
    t = np.array([0.0, 0.5, 1.0])
    s = Series("c", t, np.zeros((3, 2)), np.ones((3, 1)), status=["optimal", "max_iter"], kkt=[1e-10, 2.0])
    path = emit(Report([s]), "csv", tmp_path / "c.csv")[0]
    back = read_csv(path)
    assert path.read_text().splitlines()[0] == "t,x_1,x_2,u_1,solve_status,kkt_residual"
    assert back["solve_status"] == ["optimal", "max_iter", ""]
    assert back["kkt_residual"][:2] == [1e-10, 2.0] and math.isnan(back["kkt_residual"][2])


def test_empty_report_writes_header_only(tmp_path):
    path = emit(Report(), "csv", tmp_path / "e.csv")[0]
    assert path.read_text() == "t\n"
    assert json.loads(emit(Report(), "json", tmp_path / "e.json")[0].read_text()) == {"config": {}, "table": None}
    assert emit(Report(), "svg", tmp_path / "e.svg")[0].stat().st_size > 0


def test_multiple_series_split_csv(tmp_path):
    t = np.array([0.0, 1.0])
    rep = Report([Series("x0=(1,2)", t, t, t), Series("b", t, t, t)])
    paths = emit(rep, "csv", tmp_path / "r.csv")
    assert [p.name for p in paths] == ["r_x0__1_2_.csv", "r_b.csv"]


def test_portrait_one_curve_per_initial_condition(tmp_path):
    t = np.linspace(0, 1, 5)
    rep = Report(portrait=[(f"ic{k}", t * k, -t) for k in range(9)])
    svg = emit(rep, "svg", tmp_path / "p.svg")[0].read_text()
    assert sum(svg.count(f'id="curve-{k}"') for k in range(9)) == 9


def test_emit_errors(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError) as info:
        emit(Report(), "csv", blocker / "sub" / "x.csv")
    assert str(blocker) in str(info.value)
    with pytest.raises(ValueError):
        emit(Report(), "xml", tmp_path / "x.xml")
