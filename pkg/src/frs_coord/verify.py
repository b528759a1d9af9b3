"""Randomized property oracles behind ``frs-coord verify``.

Each check takes a seeded generator and returns a ``CheckResult``. The
functions under test are parameters so a deliberately broken variant can be
passed in to confirm the oracle notices.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from . import qpsolver
from .hocbf import CbfGains, hocbf_row
from .planner import PlannerParams, Wall, plan_step
from .qpsolver import QpProblem, Status
from .reachability import (
    AgentState,
    Ball,
    ObstacleState,
    PcBall,
    agent_reach_ball,
    obstacle_reach_box,
    pc_ball_case2,
)
from .srb import SrbParams, SrbState, chart_dynamics, linearize, so3_exp

SUITES = ("reachability", "hocbf", "qp", "srb")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0
    stats: Dict[str, float] = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.detail} ({self.elapsed:.2f} s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.elapsed = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --------------------------------------------------------------- reachability

def _disk_samples(rng, n):
    """Uniform samples in the unit disk."""
    r = np.sqrt(rng.random(n))
    th = rng.uniform(0.0, 2 * math.pi, n)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def _lens_samples(rng, c1, r1, c2, r2, n):
    lo = np.maximum(c1 - r1, c2 - r2)
    hi = np.minimum(c1 + r1, c2 + r2)
    pts = rng.uniform(lo, hi, size=(4 * n, 2))
    keep = (np.linalg.norm(pts - c1, axis=1) <= r1) & (np.linalg.norm(pts - c2, axis=1) <= r2)
    return pts[keep][:n]


@_timed
def check_reachability(rng, geometries=100, samples=1000, box_fn=obstacle_reach_box,
                       ball_fn=agent_reach_ball, lens_fn=pc_ball_case2) -> CheckResult:
    """Monte Carlo containment for obstacle boxes, agent disks and lens balls.

    Obstacle paths use constant velocities within the bound. Agent paths
    integrate a piecewise constant acceleration of norm at most the limit.
    Lens points are drawn uniformly from the intersection of two disks.
    """
    violations = {"box": 0, "ball": 0, "lens": 0}
    total = 0
    for _ in range(geometries):
        T = rng.uniform(0.1, 2.0)
        # obstacle box
        bound = rng.uniform(0.0, 2.0, 2)
        ob = ObstacleState(rng.uniform(-5, 5, 2), bound)
        box = box_fn(ob, T)
        v = rng.uniform(-1, 1, (samples, 2)) * bound
        t = rng.uniform(0, T, (samples, 1))
        violations["box"] += int(np.count_nonzero(~box.contains(ob.position + t * v)))

        # agent disk under bounded acceleration
        ag = AgentState(rng.uniform(-5, 5, 2), rng.normal(0, 1, 2), accel_limit=rng.uniform(0.1, 3.0))
        disk = ball_fn(ag, T)
        segs = 8
        acc = _disk_samples(rng, samples * segs).reshape(samples, segs, 2) * ag.accel_limit
        dt = T / segs
        p = np.repeat(ag.position[None], samples, axis=0)
        vel = np.repeat(ag.velocity[None], samples, axis=0)
        for k in range(segs):
            p = p + vel * dt + 0.5 * acc[:, k] * dt * dt
            vel = vel + acc[:, k] * dt
            violations["ball"] += int(np.count_nonzero(~disk.contains(p)))

        # lens enclosing ball
        c1 = rng.uniform(-3, 3, 2)
        r1 = rng.uniform(0.2, 3.0)
        r2 = rng.uniform(0.2, 3.0)
        d = rng.uniform(abs(r1 - r2) * 0.5, r1 + r2)
        th = rng.uniform(0, 2 * math.pi)
        c2 = c1 + d * np.array([math.cos(th), math.sin(th)])
        pts = _lens_samples(rng, c1, r1, c2, r2, samples)
        pc = lens_fn(Ball(c1, r1), Ball(c2, r2), 0.0)
        violations["lens"] += int(np.count_nonzero(~pc.contains(pts)))
        total += samples
    bad = sum(violations.values())
    return CheckResult(
        "reachability containment",
        bad == 0,
        f"{bad} violations over {geometries} geometries per set "
        f"(box {violations['box']}, disk {violations['ball']}, lens {violations['lens']})",
        stats={k: float(v) for k, v in violations.items()},
    )


# --------------------------------------------------------------------- hocbf

def _frozen_psi1(row_fn, p, v, ball, gains):
    ev = row_fn(AgentState(p, v), ball, gains, 0, 1)
    return ev.h, ev.psi1


@_timed
def check_hocbf(rng, n=1000, row_fn: Callable = hocbf_row, tol=1e-5) -> CheckResult:
    """Analytic ``dh/dt`` and ``dpsi1/dt`` against central differences.

    The ball is frozen and the agent is a double integrator under a random
    constant acceleration.
    """
    worst_h = worst_p = 0.0
    step = 1e-4
    for _ in range(n):
        ball = PcBall(rng.uniform(-2, 2, 2), rng.uniform(0.1, 1.5))
        while True:
            p = rng.uniform(-5, 5, 2)
            if np.linalg.norm(p - ball.center) > 0.2:
                break
        v = rng.normal(0, 1.5, 2)
        a = rng.uniform(-2, 2, 2)
        gains = CbfGains(rng.uniform(0.1, 2), rng.uniform(0.1, 2))
        ev = row_fn(AgentState(p, v), ball, gains, 0, 1)
        hp, pp = _frozen_psi1(row_fn, p + step * v + 0.5 * step * step * a, v + step * a, ball, gains)
        hm, pm = _frozen_psi1(row_fn, p - step * v + 0.5 * step * step * a, v - step * a, ball, gains)
        fd_h = (hp - hm) / (2 * step)
        fd_p = (pp - pm) / (2 * step)
        err_h = abs(fd_h - ev.h_dot) / max(1.0, abs(fd_h))
        err_p = abs(fd_p - ev.psi1_dot(a)) / max(1.0, abs(fd_p))
        worst_h = max(worst_h, err_h)
        worst_p = max(worst_p, err_p)
    ok = worst_h <= tol and worst_p <= tol
    return CheckResult(
        "hocbf derivatives",
        ok,
        f"max rel error dh/dt {worst_h:.2e}, dpsi1/dt {worst_p:.2e} over {n} states (tol {tol:g})",
        stats={"h_dot": worst_h, "psi1_dot": worst_p},
    )


@_timed
def check_minimality(rng, n=10000, tol=1e-8, planner=plan_step) -> CheckResult:
    """If the nominal input already satisfies every row strictly, the filter returns it."""
    worst = 0.0
    tested = 0
    params = PlannerParams()
    attempts = 0
    while tested < n:
        attempts += 1
        ag = AgentState(rng.uniform(-1, 1, 2), rng.normal(0, 0.3, 2))
        obs = []
        for _ in range(int(rng.integers(0, 4))):
            ang = rng.uniform(0, 2 * math.pi)
            pos = ag.position + rng.uniform(3.0, 8.0) * np.array([math.cos(ang), math.sin(ang)])
            obs.append(ObstacleState(pos, rng.uniform(0, 0.3, 2)))
        walls = [Wall(rng.uniform(2.5, 4), 1), Wall(-rng.uniform(2.5, 4), -1)]
        goal = ag.position + rng.uniform(-1, 1, 2)
        out = planner([ag], obs, [goal], walls, params)
        G, b = out.rows
        slack = float(np.min(G @ out.nominal_input - b, initial=np.inf))
        if not slack > 1e-9:
            continue
        tested += 1
        worst = max(worst, float(np.max(np.abs(out.safe_input - out.nominal_input))))
    return CheckResult(
        "filter minimality",
        worst <= tol,
        f"max |safe - nominal| {worst:.2e} over {tested} strictly feasible states ({attempts} drawn)",
        stats={"worst": worst, "tested": float(tested)},
    )


# ------------------------------------------------------------------------ qp

def random_qp(rng, n=None, m=None):
    """Strictly convex instance with a known feasible point."""
    n = int(rng.integers(1, 21)) if n is None else n
    m = int(rng.integers(0, 41)) if m is None else m
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    c = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n) * 0.5
    b = A @ x0 - rng.uniform(0, 1, m)
    lo = up = None
    if rng.random() < 0.5:
        lo = x0 - rng.uniform(0.1, 2, n)
        up = x0 + rng.uniform(0.1, 2, n)
    return QpProblem(H, c, A, b, lo, up)


def enumerate_qp(problem: QpProblem, tol=1e-9):
    """Exact minimizer by checking KKT on every active set. Small sizes only."""
    H = problem.hessian
    c = problem.linear
    n = c.size
    rows = [problem.ineq_matrix[k] for k in range(problem.ineq_matrix.shape[0])]
    rhs = list(problem.ineq_rhs)
    for k in np.flatnonzero(np.isfinite(problem.lower)):
        e = np.zeros(n)
        e[k] = 1.0
        rows.append(e)
        rhs.append(problem.lower[k])
    for k in np.flatnonzero(np.isfinite(problem.upper)):
        e = np.zeros(n)
        e[k] = -1.0
        rows.append(e)
        rhs.append(-problem.upper[k])
    A = np.array(rows).reshape(len(rows), n)
    b = np.array(rhs)
    # strict convexity makes the KKT point unique, so the first hit is the answer
    for size in range(0, min(n, len(rows)) + 1):
        for act in itertools.combinations(range(len(rows)), size):
            Aa = A[list(act)]
            K = np.block([[H, -Aa.T], [Aa, np.zeros((size, size))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-c, b[list(act)]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(lam >= -tol) and np.all(A @ x - b >= -tol * (1 + np.abs(b))):
                return x, 0.5 * x @ H @ x + c @ x
    return None


def planted_qp(rng, n=None, m=None):
    """Random instance with a known optimum.

    A point, an active set and positive multipliers are drawn first and the
    linear term is chosen so they satisfy the KKT conditions, which are
    sufficient for a strictly convex problem. Inactive rows keep a slack of
    at least 0.1. Returns the problem and its minimizer.
    """
    n = int(rng.integers(1, 21)) if n is None else n
    m = int(rng.integers(0, 41)) if m is None else m
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    x = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    k = int(rng.integers(0, min(n, m) + 1))
    act = rng.choice(m, size=k, replace=False) if k else np.zeros(0, int)
    lam = np.zeros(m)
    lam[act] = rng.uniform(0.1, 2.0, k)
    b = A @ x - rng.uniform(0.1, 1.0, m)
    b[act] = A[act] @ x
    mu = np.zeros(n)
    lo = np.full(n, -np.inf)
    up = np.full(n, np.inf)
    if rng.random() < 0.5:
        lo = x - rng.uniform(0.1, 1.0, n)
        up = x + rng.uniform(0.1, 1.0, n)
        # a few bounds active, keeping the total active count <= n
        spare = n - k
        for j in rng.permutation(n)[: int(rng.integers(0, spare + 1))]:
            if rng.random() < 0.5:
                lo[j] = x[j]
                mu[j] = rng.uniform(0.1, 2.0)
            else:
                up[j] = x[j]
                mu[j] = -rng.uniform(0.1, 2.0)
    c = -H @ x + A.T @ lam + mu
    return QpProblem(H, c, A, b, lo, up), x


@_timed
def check_qp(rng, n_instances=200, solver=None, obj_tol=1e-7, kkt_tol=1e-8) -> CheckResult:
    """Active-set solver against exact optima on random instances.

    Even instances are small and checked against full active-set
    enumeration. Odd instances go up to 20 variables and 40 rows, where
    enumeration is out of reach, and carry a planted optimum instead.
    """
    solve = solver or qpsolver.solve
    worst_obj = worst_kkt = 0.0
    enumerated = 0
    failures = []
    for k in range(n_instances):
        if k % 2 == 0:
            prob = random_qp(rng, n=int(rng.integers(1, 6)), m=int(rng.integers(0, 9)))
            ref = enumerate_qp(prob)
            enumerated += 1
            if ref is None:
                failures.append(f"instance {k}: oracle found no point")
                continue
            ref_val = ref[1]
        else:
            prob, x_star = planted_qp(rng)
            ref_val = prob.objective(x_star)
        sol = solve(prob)
        if sol.status is not Status.OPTIMAL:
            failures.append(f"instance {k}: {sol.status.value}")
            continue
        worst_kkt = max(worst_kkt, qpsolver.kkt_residual(prob, sol))
        worst_obj = max(worst_obj, abs(prob.objective(sol.x) - ref_val) / max(1.0, abs(ref_val)))
    ok = not failures and worst_obj <= obj_tol and worst_kkt <= kkt_tol
    detail = (
        f"max rel objective error {worst_obj:.2e} over {n_instances} instances "
        f"({enumerated} by enumeration), max KKT residual {worst_kkt:.2e}"
    )
    if failures:
        detail += "; " + "; ".join(failures[:3])
    return CheckResult("qp correctness", ok, detail, stats={"objective": worst_obj, "kkt": worst_kkt})


# ----------------------------------------------------------------------- srb

def _random_operating_point(rng, params: SrbParams):
    axis = rng.normal(size=3)
    R = so3_exp(axis / np.linalg.norm(axis) * rng.uniform(0, 0.4))
    state = SrbState(
        np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.2, 0.32)]),
        rng.normal(0, 0.3, 3),
        R,
        rng.normal(0, 0.5, 3),
    )
    stance = rng.random(4) < 0.7
    if not stance.any():
        stance[int(rng.integers(4))] = True
    feet = np.zeros((4, 3))
    feet[:, :2] = state.position[:2] + params.hip_offsets + rng.normal(0, 0.05, (4, 2))
    f = np.zeros((4, 3))
    f[stance] = rng.normal(0, 10, (int(stance.sum()), 3))
    f[stance, 2] = rng.uniform(10, 80, int(stance.sum()))
    return state, stance, feet, f


def euler_chart_step(state: SrbState, grfs, stance, feet, dt, params, d_eta=np.zeros(12)):
    """One forward Euler step of the chart dynamics around ``state.rotation``."""
    eta = np.concatenate([state.position, state.velocity, np.zeros(3), state.omega]) + d_eta
    return eta + dt * chart_dynamics(eta, grfs, stance, feet, state.rotation, params)


@_timed
def check_srb(rng, n=1000, dt=0.03, eps=1e-3, params=None, lin_fn=linearize) -> CheckResult:
    """Linearization order and exact force dependence at random operating points.

    Doubling a state and force perturbation should scale the one-step
    model error by four. Changing the forces alone is predicted exactly
    because the dynamics are affine in them at a fixed state.
    """
    params = params or SrbParams()
    ratios = []
    worst_force = 0.0
    for _ in range(n):
        state, stance, feet, f = _random_operating_point(rng, params)
        C, D, e0 = lin_fn(state, f, stance, feet, dt, params, full=True)
        eta0 = np.concatenate([state.position, state.velocity, np.zeros(3), state.omega])
        d_eta = rng.normal(size=12)
        d_eta /= np.linalg.norm(d_eta)
        d_f = np.zeros((4, 3))
        d_f[stance] = rng.normal(size=(int(stance.sum()), 3))
        errs = []
        for s in (eps, 2 * eps):
            nl = euler_chart_step(state, f + s * 10 * d_f, stance, feet, dt, params, s * d_eta)
            lin = C @ (eta0 + s * d_eta) + D @ (f + s * 10 * d_f).reshape(12) + e0
            errs.append(np.linalg.norm(nl - lin))
        ratios.append(errs[1] / errs[0] if errs[0] > 0 else math.nan)

        df = np.zeros((4, 3))
        df[stance] = rng.normal(0, 20, (int(stance.sum()), 3))
        nl = euler_chart_step(state, f + df, stance, feet, dt, params)
        lin = C @ eta0 + D @ (f + df).reshape(12) + e0
        worst_force = max(worst_force, float(np.max(np.abs(nl - lin))))
    ratios = np.array(ratios)
    lo, hi = float(np.nanmin(ratios)), float(np.nanmax(ratios))
    ok = bool(np.all(np.isfinite(ratios))) and lo >= 3.0 and hi <= 5.0 and worst_force <= 1e-10
    return CheckResult(
        "srb linearization",
        ok,
        f"error ratio in [{lo:.3f}, {hi:.3f}] over {n} points, force prediction error {worst_force:.1e}",
        stats={"ratio_min": lo, "ratio_max": hi, "force": worst_force},
    )


def run_suite(name: str, seed: int = 0, quick: bool = False) -> List[CheckResult]:
    """Run one suite (or ``all``) and return its results."""
    if name not in SUITES + ("all",):
        raise ValueError(f"unknown suite {name!r}")
    names = SUITES if name == "all" else (name,)
    out = []
    for s in names:
        rng = np.random.default_rng(seed)
        if s == "reachability":
            out.append(check_reachability(rng, samples=100 if quick else 1000))
        elif s == "hocbf":
            out.append(check_hocbf(rng, n=100 if quick else 1000))
            out.append(check_minimality(rng, n=500 if quick else 10000))
        elif s == "qp":
            out.append(check_qp(rng, n_instances=40 if quick else 200))
        else:
            out.append(check_srb(rng, n=100 if quick else 1000))
    return out
