import io
import math

import numpy as np
import pytest

from frs_coord.planner import PlannerParams, Wall
from frs_coord.qpsolver import Status
from frs_coord.sim import (
    AgentSpec,
    Circular,
    Diagonal,
    Fidelity,
    ObstacleSpec,
    Scenario,
    Static,
    TraceLog,
    metrics,
    obstacle_state,
    read_trace_header,
    run,
)


def test_circular_examples():
    c = Circular((4.0, 0.0), 1.0, 0.5, 0.0)
    np.testing.assert_allclose(obstacle_state(c, 0.0).position, [5, 0])
    np.testing.assert_allclose(obstacle_state(c, 2 * math.pi / 0.5).position, [5, 0], atol=1e-12)
    ob = obstacle_state(c, 1.0)
    np.testing.assert_allclose(ob.velocity_bound, np.abs(ob.velocity))
    assert np.linalg.norm(ob.velocity) == pytest.approx(0.5)


def test_diagonal_triangle_wave():
    d = Diagonal((2.0, -1.0), (-2.0, 1.0), 0.5)
    L = math.hypot(4, 2)
    np.testing.assert_allclose(obstacle_state(d, 0.0).position, [2, -1])
    np.testing.assert_allclose(obstacle_state(d, L / 0.5).position, [-2, 1], atol=1e-12)
    np.testing.assert_allclose(obstacle_state(d, 2 * L / 0.5).position, [2, -1], atol=1e-12)
    # heading back on the second leg
    assert obstacle_state(d, 1.5 * L / 0.5).velocity[0] > 0


def test_pattern_validation():
    with pytest.raises(ValueError):
        Circular((0, 0), 0.0)
    with pytest.raises(ValueError):
        Diagonal((1, 1), (1, 1))
    with pytest.raises(ValueError):
        obstacle_state(Static((0, 0)), -1.0)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario("x", [])
    with pytest.raises(ValueError):
        Scenario("x", [AgentSpec((0, 0), (1, 0)), AgentSpec((0, 0), (2, 0))])
    with pytest.raises(ValueError):
        Scenario("x", [AgentSpec((0, 0), (1, 0))], duration_s=0.0)


def small_scenario(**kw):
    base = dict(
        name="small",
        agents=[AgentSpec((-3.0, 0.1), (3.0, 0.0)), AgentSpec((3.0, -0.1), (-3.0, 0.0))],
        obstacles=[ObstacleSpec(Circular((0.0, 0.0), 1.0, 0.5))],
        walls=[Wall(2.5, 1), Wall(-2.5, -1)],
        planner=PlannerParams(frs_horizon_s=0.5),
        duration_s=2.0,
    )
    base.update(kw)
    return Scenario(**base)


def test_agent_at_goal_stays():
    tr = run(Scenario("rest", [AgentSpec((1.0, 2.0), (1.0, 2.0))], duration_s=1.0))
    assert np.abs(tr.position - [1.0, 2.0]).max() <= 1e-6


def test_rate_contract_and_shapes():
    tr = run(small_scenario())
    K = 2000
    assert tr.time.size == K
    np.testing.assert_array_equal(tr.time, np.arange(K) * 0.001)
    assert tr.position.shape == (K, 2, 2) and tr.safe_input.shape == (K, 4)
    assert len(tr.pair_keys) == 2 * (1 + 1 + 2)
    assert all(s == Status.OPTIMAL.value for s in tr.status)


def test_deterministic_traces():
    a, b = run(small_scenario()), run(small_scenario())
    assert a.to_csv() == b.to_csv()


def test_csv_roundtrip_header(tmp_path):
    tr = run(small_scenario(duration_s=0.05), config={"name": "small"})
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    assert read_trace_header(path) == {"name": "small"}
    lines = path.read_text().splitlines()
    assert len(lines) == 2 + 50
    header = lines[1].split(",")
    assert header[:3] == ["time", "a0_x", "a0_y"]
    assert len(header) == len(lines[2].split(","))
    buf = io.StringIO()
    tr.to_csv(buf)
    assert buf.getvalue() == path.read_text()


def _synthetic_trace():
    K = 5
    t = np.arange(K) * 0.8
    d = np.array([[3.0, 2.0], [2.0, 1.5], [1.0, 0.7], [2.0, 1.0], [3.0, 2.0]])
    h = d - 0.6
    return TraceLog(
        time=t, position=np.zeros((K, 1, 2)), velocity=np.zeros((K, 1, 2)), safe_input=np.zeros((K, 2)),
        nominal_input=np.zeros((K, 2)), pair_keys=[(0, "obs0"), (0, "obs1")], h=h, psi1=h.copy(), distance=d,
        clearance=h.copy(), ball=np.zeros((K, 2, 3)), status=["Optimal"] * 4 + ["Infeasible"],
        qp_iterations=np.array([1, 2, 3, 4, -1]), goal=np.ones((K, 1, 2)),
    )


def test_metrics_synthetic():
    m = metrics(_synthetic_trace())
    assert m.min_distance == 0.7
    assert m.argmin_time == pytest.approx(1.6)
    assert m.argmin_pair == (0, "obs1")
    assert m.min_h == {"a0_obs0": pytest.approx(0.4), "a0_obs1": pytest.approx(0.1)}
    assert m.min_psi0 == pytest.approx(0.1) and m.safe
    assert m.infeasible_steps == 1
    assert m.mean_qp_iterations == 2.5
    assert m.final_goal_error == [pytest.approx(math.sqrt(2))]


def test_metrics_flags_unsafe():
    tr = _synthetic_trace()
    tr.h[2, 1] = -0.01
    assert not metrics(tr).safe


@pytest.mark.slow
def test_srb_closed_loop_smoke():
    scn = Scenario(
        "srb", [AgentSpec((0.0, 0.0), (0.5, 0.0))], fidelity=Fidelity.SRB_CLOSED_LOOP,
        planner=PlannerParams(frs_horizon_s=0.5), duration_s=1.0,
    )
    tr = run(scn)
    m = metrics(tr)
    assert all(s == "Optimal" for s in tr.status)
    assert 0.21 <= m.min_com_height and m.max_com_height <= 0.31
    assert tr.grf.shape == (1000, 1, 4, 3)
    # the MPC runs on every second tick and its forces hold in between
    np.testing.assert_array_equal(tr.grf[1], tr.grf[0])
    assert (tr.mpc_iterations[1::2] == 0).all()
