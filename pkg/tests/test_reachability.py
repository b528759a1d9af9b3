import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frs_coord.reachability import (
    AgentState,
    Ball,
    Box,
    DomainError,
    ObstacleState,
    ProximityCase,
    ProximityError,
    agent_reach_ball,
    classify_proximity,
    obstacle_reach_box,
    pc_ball_case1,
    pc_ball_case2,
    projected_reach_max,
)
from frs_coord.verify import check_reachability

pos = st.floats(-10, 10, allow_nan=False)
nonneg = st.floats(0, 5, allow_nan=False)


def test_obstacle_box_half_widths():
    box = obstacle_reach_box(ObstacleState((1.0, 2.0), (0.5, 0.2)), 2.0)
    np.testing.assert_allclose(box.center, [1, 2])
    np.testing.assert_allclose(box.half_widths, [1.0, 0.4])


def test_obstacle_bound_defaults_to_speed():
    ob = ObstacleState((0, 0), velocity=(-0.3, 0.4))
    np.testing.assert_allclose(ob.velocity_bound, [0.3, 0.4])


def test_zero_horizon_gives_points():
    assert agent_reach_ball(AgentState((0, 0), (3, 4)), 0.0).radius == 0.0
    np.testing.assert_array_equal(obstacle_reach_box(ObstacleState((0, 0), (1, 1)), 0.0).half_widths, [0, 0])


def test_agent_ball_radius():
    # |v| T + a T^2 / 2 = 5 + 1
    ball = agent_reach_ball(AgentState((1, 1), (3, 4), accel_limit=2.0), 1.0)
    assert ball.radius == pytest.approx(6.0)


def test_negative_horizon_rejected():
    with pytest.raises(DomainError):
        agent_reach_ball(AgentState((0, 0), (0, 0)), -1.0)
    with pytest.raises(DomainError):
        obstacle_reach_box(ObstacleState((0, 0)), -0.1)


@pytest.mark.parametrize("bad", [(np.nan, 0.0), (0.0, np.inf), (1.0, 2.0, 3.0)])
def test_state_validation(bad):
    with pytest.raises(DomainError):
        AgentState(bad, (0, 0))


def test_projected_reach_box_and_ball():
    box = Box((2.0, 0.0), (1.0, 0.5))
    assert projected_reach_max(box, (0, 0), (1.0, 0.0)) == pytest.approx(3.0)
    u = np.array([1.0, 1.0]) / math.sqrt(2)
    assert projected_reach_max(box, (0, 0), u) == pytest.approx((2.0 + 1.5) / math.sqrt(2))
    assert projected_reach_max(Ball((0, 0), 2.0), (0, 0), (0.0, -1.0)) == pytest.approx(2.0)


def test_projected_reach_requires_unit_direction():
    with pytest.raises(DomainError):
        projected_reach_max(Ball((0, 0), 1.0), (0, 0), (2.0, 0.0))


@settings(max_examples=200, deadline=None)
@given(pos, pos, nonneg, nonneg, st.floats(0, 2 * math.pi), st.integers(0, 2**31 - 1))
def test_support_function_bounds_samples(cx, cy, wx, wy, th, seed):
    rng = np.random.default_rng(seed)
    box = Box((cx, cy), (wx, wy))
    u = np.array([math.cos(th), math.sin(th)])
    pts = box.center + rng.uniform(-1, 1, (200, 2)) * box.half_widths
    assert np.all(pts @ u <= projected_reach_max(box, (0, 0), u) + 1e-9)


def test_classify_boundary_is_case1():
    assert classify_proximity(1.0, 2.0, 3.0) is ProximityCase.CASE1
    assert classify_proximity(1.0, 2.0, 2.999) is ProximityCase.CASE2


@settings(max_examples=200, deadline=None)
@given(nonneg, nonneg, nonneg, st.floats(0.01, 100))
def test_classify_scale_equivariant(a, b, d, lam):
    # skip values whose scaled comparison can flip from rounding
    if abs(a + b - d) < 1e-9 * max(1.0, a + b + d):
        return
    assert classify_proximity(a, b, d) == classify_proximity(lam * a, lam * b, lam * d)


def test_case1_ball():
    ball = pc_ball_case1((4.0, 0.0), 1.5, 0.6)
    np.testing.assert_allclose(ball.center, [4, 0])
    assert ball.radius == pytest.approx(2.1)


def test_case2_lens_example():
    # disks of radius 1 at (0,0) and (1.5,0): lens on [0.5, 1], chord half 0.6614
    pc = pc_ball_case2(Ball((0, 0), 1.0), Ball((1.5, 0), 1.0), 0.0)
    np.testing.assert_allclose(pc.center, [0.75, 0.0], atol=1e-12)
    assert pc.radius == pytest.approx(math.sqrt(1 - 0.75**2), abs=1e-12)


def test_case2_containment_returns_smaller_disk():
    pc = pc_ball_case2(Ball((0, 0), 2.0), Ball((0.5, 0), 0.5), 0.1)
    np.testing.assert_allclose(pc.center, [0.5, 0.0])
    assert pc.radius == pytest.approx(0.6)


def test_case2_disjoint_raises():
    with pytest.raises(ProximityError):
        pc_ball_case2(Ball((0, 0), 1.0), Ball((3, 0), 1.0), 0.0)


def test_case2_tangent_collapses_to_point():
    pc = pc_ball_case2(Ball((0, 0), 1.0), Ball((2, 0), 1.0), 0.0)
    np.testing.assert_allclose(pc.center, [1.0, 0.0], atol=1e-12)
    assert pc.radius == pytest.approx(0.0, abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0, 1), st.floats(0, 2), st.floats(0, 2))
def test_case2_radius_monotone_in_margin(r1, r2, frac, m1, m2):
    d = abs(r1 - r2) + frac * (r1 + r2 - abs(r1 - r2))
    lo, hi = sorted((m1, m2))
    a = pc_ball_case2(Ball((0, 0), r1), Ball((d, 0), r2), lo)
    b = pc_ball_case2(Ball((0, 0), r1), Ball((d, 0), r2), hi)
    assert b.radius >= a.radius


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 3), st.floats(0.1, 3), st.floats(0, 2), st.floats(0, 2))
def test_reach_monotone_in_horizon(speed, accel, t1, t2):
    lo, hi = sorted((t1, t2))
    ag = AgentState((0, 0), (speed, 0.0), accel_limit=accel)
    assert agent_reach_ball(ag, hi).radius >= agent_reach_ball(ag, lo).radius
    ob = ObstacleState((0, 0), (speed, accel))
    assert np.all(obstacle_reach_box(ob, hi).half_widths >= obstacle_reach_box(ob, lo).half_widths)


def test_monte_carlo_containment_quick():
    res = check_reachability(np.random.default_rng(3), geometries=20, samples=500)
    assert res.passed, res.detail


def test_containment_check_catches_shrunken_ball():
    def small(agent, horizon):
        b = agent_reach_ball(agent, horizon)
        return Ball(b.center, 0.9 * b.radius)

    res = check_reachability(np.random.default_rng(3), geometries=20, samples=500, ball_fn=small)
    assert not res.passed
