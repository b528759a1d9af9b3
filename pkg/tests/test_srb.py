import math

import numpy as np
import pytest

from frs_coord import srb
from frs_coord.qpsolver import Status
from frs_coord.reachability import DomainError
from frs_coord.srb import (
    STANDING,
    TROT,
    ContactSchedule,
    Gait,
    ModifiedState,
    MpcWeights,
    SrbParams,
    SrbState,
    chart_dynamics,
    friction_cone_rows,
    foot_placement,
    gait_schedule,
    hip_positions,
    jr_inv,
    linearize,
    mpc_step,
    reference_eta,
    rk4_step,
    skew,
    so3_exp,
    so3_log,
    srb_dynamics,
)
from frs_coord.verify import check_srb

P = SrbParams()
ALL = np.ones(4, bool)


def standing_feet(params=P):
    return hip_positions(SrbState.standing(params), params)


def test_exp_log_examples():
    np.testing.assert_array_equal(so3_exp(np.zeros(3)), np.eye(3))
    R = so3_exp([0, 0, math.pi / 2])
    np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_exp_log_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(500):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        xi = axis * rng.uniform(0, math.pi - 1e-3)
        np.testing.assert_allclose(so3_log(so3_exp(xi)), xi, atol=1e-10)


def test_log_near_pi_and_out_of_chart():
    xi = np.array([0.0, 0.6, 0.8]) * (math.pi - 5e-4)
    np.testing.assert_allclose(so3_log(so3_exp(xi)), xi, atol=1e-6)
    with pytest.raises(DomainError):
        so3_log(np.diag([1.0, -1.0, -1.0]))


def test_skew_is_cross_product():
    a, b = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -4.0])
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))


def test_jr_inv_maps_omega_to_chart_rate():
    # d/dt exp(xi) = exp(xi) [w]x  with  xi_dot = Jr^-1(xi) w
    rng = np.random.default_rng(1)
    for _ in range(50):
        xi, w = rng.normal(0, 0.7, 3), rng.normal(size=3)
        s = 1e-6
        lhs = (so3_exp(xi + s * jr_inv(xi) @ w) - so3_exp(xi - s * jr_inv(xi) @ w)) / (2 * s)
        np.testing.assert_allclose(lhs, so3_exp(xi) @ skew(w), atol=1e-8)


def test_state_validation():
    with pytest.raises(DomainError):
        SrbState(np.zeros(3), np.zeros(3), np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(DomainError):
        ModifiedState(np.r_[np.zeros(6), 4.0, 0, 0, np.zeros(3)], np.eye(3))
    with pytest.raises(ValueError):
        SrbParams(mass=-1.0)
    with pytest.raises(ValueError):
        SrbParams(fz_bounds=(10.0, 5.0))
    with pytest.raises(ValueError):
        MpcWeights(R=np.zeros(12))


def test_modified_state_roundtrip():
    st = SrbState([0.1, 0.2, 0.3], [1, 0, 0], so3_exp([0.1, -0.2, 0.3]), [0.0, 0.1, 0.0])
    back = ModifiedState.from_state(st, srb.rot_z(0.4)).to_state()
    np.testing.assert_allclose(back.rotation, st.rotation, atol=1e-12)
    np.testing.assert_allclose(back.position, st.position)


def test_static_equilibrium():
    st = SrbState.standing(P)
    f = np.tile([0.0, 0.0, P.weight / 4], (4, 1))
    feet = standing_feet()
    feet[:, :2] -= feet[:, :2].mean(axis=0)  # symmetric about the COM
    dp, dv, dR, dw = srb_dynamics(st, f, ALL, feet, P)
    for d in (dp, dv, dR, dw):
        np.testing.assert_allclose(d, 0.0, atol=1e-12)
    assert P.mass == 12.45


def test_free_fall():
    st = SrbState.standing(P)
    _, dv, _, _ = srb_dynamics(st, np.zeros((4, 3)), ALL, standing_feet(), P)
    np.testing.assert_allclose(dv, [0, 0, -9.81])


def test_swing_feet_carry_no_force():
    st = SrbState.standing(P)
    f = np.tile([0.0, 0.0, 30.0], (4, 1))
    stance = np.array([True, False, False, True])
    _, dv, _, _ = srb_dynamics(st, f, stance, standing_feet(), P)
    assert dv[2] == pytest.approx(60.0 / P.mass - 9.81)


def test_angular_momentum_balance():
    """World-frame d/dt (R I w) equals the total contact torque about the COM."""
    rng = np.random.default_rng(2)
    for _ in range(50):
        R = so3_exp(rng.normal(0, 0.3, 3))
        st = SrbState(rng.normal(0, 0.1, 3) + [0, 0, 0.26], rng.normal(size=3), R, rng.normal(size=3))
        f = rng.normal(0, 30, (4, 3))
        feet = standing_feet() + np.c_[rng.normal(0, 0.05, (4, 2)), np.zeros(4)]
        _, _, dR, dw = srb_dynamics(st, f, ALL, feet, P)
        L_dot = dR @ P.inertia @ st.omega + R @ P.inertia @ dw
        tau = sum(np.cross(feet[k] - st.position, f[k]) for k in range(4))
        np.testing.assert_allclose(L_dot, tau, atol=1e-9)


def test_chart_matches_full_dynamics():
    rng = np.random.default_rng(3)
    st = SrbState([0, 0, 0.26], rng.normal(size=3), so3_exp(rng.normal(0, 0.2, 3)), rng.normal(size=3))
    f = rng.normal(0, 30, (4, 3))
    feet = standing_feet()
    ms = ModifiedState.from_state(st, np.eye(3))
    d = chart_dynamics(ms.eta, f, ALL, feet, np.eye(3), P)
    _, dv, _, dw = srb_dynamics(st, f, ALL, feet, P)
    np.testing.assert_allclose(d[3:6], dv)
    np.testing.assert_allclose(d[9:12], dw, atol=1e-12)


def test_linearize_blocks():
    dt = 0.03
    stance = np.array([True, False, False, True])
    C, D, eps = linearize(SrbState.standing(P), np.tile([0, 0, P.weight / 2], (4, 1)), stance, standing_feet(), dt, P)
    np.testing.assert_allclose(C[0:3, 3:6], dt * np.eye(3))
    assert D.shape == (12, 6)
    for k in range(2):
        np.testing.assert_allclose(D[3:6, 3 * k : 3 * k + 3], dt / P.mass * np.eye(3))
    with pytest.raises(ValueError):
        linearize(SrbState.standing(P), None, ALL, standing_feet(), 0.0, P)


def test_linearization_order_quick():
    res = check_srb(np.random.default_rng(4), n=100)
    assert res.passed, res.detail


def test_friction_cone_examples():
    G, h = friction_cone_rows(0.6, (0.0, 200.0))
    assert np.all(G @ [0, 0, 10] >= h)
    viol = G @ [7, 0, 10] < h
    assert viol.any() and viol[0]


def test_friction_cone_generator_samples():
    G, h = friction_cone_rows(0.6, (0.0, 200.0))
    rng = np.random.default_rng(5)
    for _ in range(1000):
        fz = rng.uniform(0, 200)
        th = rng.uniform(0, 2 * math.pi)
        # the pyramid is inscribed by |fx|, |fy| <= mu fz; this sample is inside
        f = [0.9 * 0.6 * fz * math.cos(th) / math.sqrt(2), 0.9 * 0.6 * fz * math.sin(th) / math.sqrt(2), fz]
        assert np.all(G @ f >= h - 1e-12)


def test_gait_schedules():
    assert STANDING.in_stance(0.37).all()
    np.testing.assert_array_equal(TROT.in_stance(0.0), [True, False, False, True])
    np.testing.assert_array_equal(TROT.in_stance(0.2), [False, True, True, False])
    sched = gait_schedule(0.1, Gait(0.5, 1.0, (0, 0, 0, 0)), steps=5, dt=0.03)
    assert sched.stance.all() and sched.steps == 5
    with pytest.raises(ValueError):
        Gait(0.4, 0.0, (0, 0, 0, 0))
    with pytest.raises(ValueError):
        ContactSchedule(np.ones((2, 4)), np.c_[np.zeros((4, 2)), np.ones(4)])


def test_foot_placement():
    st = SrbState.standing(P)
    np.testing.assert_allclose(foot_placement(st, ALL * False, (0, 0), P, 0.2), hip_positions(st, P))
    moving = SrbState(st.position, [1.0, 0, 0], st.rotation, st.omega)
    off = foot_placement(moving, ALL * False, (1.0, 0), P, 0.2) - hip_positions(moving, P)
    np.testing.assert_allclose(off[:, 0], 0.1)
    feet = foot_placement(st, ALL * False, (0, 0), P, 0.2)
    np.testing.assert_allclose(feet[0, :2], feet[1, :2] * [1, -1])
    # stance feet stay where they are
    current = feet + 0.05
    current[:, 2] = 0.0
    kept = foot_placement(moving, np.array([True, False, False, True]), (1.0, 0), P, 0.2, current)
    np.testing.assert_array_equal(kept[[0, 3]], current[[0, 3]])


def test_rk4_keeps_rotation_orthonormal():
    st = SrbState([0, 0, 0.26], np.zeros(3), np.eye(3), [1.0, 2.0, -0.5])
    for _ in range(100):
        st = rk4_step(st, np.zeros((4, 3)), ALL, standing_feet(), 0.01, P)
    assert np.abs(st.rotation.T @ st.rotation - np.eye(3)).max() < 1e-12


def _standing_mpc(state=None, horizon=5, **kw):
    st = state or SrbState.standing(P)
    ks = np.arange(horizon + 1) * 0.03
    ref = reference_eta(st, np.tile(SrbState.standing(P).position[:2], (ks.size, 1)), np.zeros((ks.size, 2)), 0.0, P)
    sched = ContactSchedule(np.ones((horizon, 4), bool), standing_feet())
    return mpc_step(st, ref, sched, MpcWeights(), horizon, 0.03, P, **kw), ref, sched


def test_mpc_standing_equilibrium():
    res, _, _ = _standing_mpc()
    assert res.status is Status.OPTIMAL
    np.testing.assert_allclose(res.grf, np.tile([0, 0, P.weight / 4], (4, 1)), atol=1e-3 * P.weight)
    # holding mg/4 per foot is feasible and costs only its force penalty; the
    # optimum trades a sliver of that for a tiny sag
    force_cost = 5 * 4 * 0.01 * (P.weight / 4) ** 2
    assert 0.98 * force_cost < res.cost <= force_cost


def test_mpc_matches_uncondensed_cvxpy():
    """Same problem written with explicit state variables and solved generically."""
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(6)
    N, dt = 4, 0.03
    st = SrbState([0.01, -0.01, 0.25], [0.1, 0, 0], so3_exp([0.02, -0.01, 0.03]), rng.normal(0, 0.1, 3))
    stance = np.array([[True, False, False, True], [True, False, False, True], [False, True, True, False], [False, True, True, False]])
    feet = standing_feet()
    ks = np.arange(N + 1) * dt
    ref = reference_eta(st, np.outer(ks, [0.3, 0.0]), np.tile([0.3, 0.0], (N + 1, 1)), 0.0, P)
    W = MpcWeights()
    res = mpc_step(st, ref, ContactSchedule(stance, feet), W, N, dt, P)

    op = np.zeros((4, 3))
    op[stance[0], 2] = P.weight / 2
    C, D, eps = linearize(st, op, ALL, feet, dt, P, full=True)
    eta0 = np.concatenate([st.position, st.velocity, np.zeros(3), st.omega])
    x = cp.Variable((N + 1, 12))
    u = cp.Variable((N, 12))
    Gc, hc = friction_cone_rows(P.mu, P.fz_bounds)
    cons = [x[0] == eta0]
    cost = 0
    for k in range(N):
        cons.append(x[k + 1] == C @ x[k] + D @ u[k] + eps)
        for f in range(4):
            uf = u[k, 3 * f : 3 * f + 3]
            cons += [Gc @ uf >= hc] if stance[k, f] else [uf == 0]
        w = W.P if k == N - 1 else W.Q
        cost += cp.sum(cp.multiply(w, cp.square(x[k + 1] - ref[k + 1]))) + cp.sum(cp.multiply(W.R, cp.square(u[k])))
    prob = cp.Problem(cp.Minimize(cost), cons)
    prob.solve(solver=cp.CLARABEL)
    assert res.status is Status.OPTIMAL
    assert res.cost == pytest.approx(prob.value, rel=1e-5)
    np.testing.assert_allclose(res.grf.reshape(12), u.value[0], atol=1e-2 * P.weight)


def test_mpc_one_foot_saturates_on_cone():
    st = SrbState.standing(P)
    ks = np.arange(6) * 0.03
    # a lateral sprint that no single foot can deliver inside the cone
    ref = reference_eta(st, np.outer(ks, [0.0, 20.0]) + st.position[:2], np.tile([0.0, 20.0], (6, 1)), 0.0, P)
    stance = np.zeros((5, 4), bool)
    stance[:, 0] = True
    res = mpc_step(st, ref, ContactSchedule(stance, standing_feet()), MpcWeights(), 5, 0.03, P)
    assert res.status is Status.OPTIMAL
    fx, fy, fz = res.grf[0]
    assert abs(fy) == pytest.approx(P.mu * fz, rel=1e-6)
    assert np.all(res.grf[1:] == 0)


def test_mpc_rejects_bad_inputs():
    st = SrbState.standing(P)
    ref = np.zeros((6, 12))
    with pytest.raises(ValueError):
        mpc_step(st, ref, ContactSchedule(np.zeros((5, 4), bool), standing_feet()), MpcWeights(), 5, 0.03, P)
    with pytest.raises(ValueError):
        mpc_step(st, ref[:3], ContactSchedule(np.ones((5, 4), bool), standing_feet()), MpcWeights(), 5, 0.03, P)


def test_mpc_warm_start_same_answer():
    res, ref, sched = _standing_mpc(SrbState([0.01, 0, 0.25], np.zeros(3), np.eye(3), np.zeros(3)))
    again = mpc_step(SrbState([0.01, 0, 0.25], np.zeros(3), np.eye(3), np.zeros(3)), ref, sched, MpcWeights(), 5, 0.03, P,
                     warm_start=res.solution)
    np.testing.assert_allclose(again.grf, res.grf, atol=1e-8)
