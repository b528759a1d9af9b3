"""Centralized safety filter for a fleet of double-integrator agents.

Every control tick the planner computes a PD command toward each agent's
goal, builds one barrier row per (agent, object) pair from the forward
reachable sets, adds wall rows, and solves a single QP over the stacked
accelerations of all agents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import qpsolver
from .hocbf import (
    OBJECT_GAINS,
    WALL_GAINS,
    CbfEvaluation,
    CbfGains,
    LinearInequality,
    SINGULAR_EPS,
    SingularityError,
    hocbf_row,
    stack_rows,
    wall_rows,
)
from .qpsolver import QpProblem, QpSolution, Status
from .reachability import (
    AgentState,
    Ball,
    ObstacleState,
    PcBall,
    ProximityCase,
    agent_reach_ball,
    classify_proximity,
    obstacle_reach_box,
    pc_ball_case1,
    pc_ball_case2,
    projected_reach_max,
)


@dataclass(frozen=True)
class Wall:
    """Line ``y = y``; ``side=+1`` keeps agents below it, ``-1`` above."""

    y: float
    side: int

    def __post_init__(self):
        if self.side not in (1, -1):
            raise ValueError(f"wall side must be +1 or -1, got {self.side}")
        if not math.isfinite(self.y):
            raise ValueError("wall y must be finite")


PAIR_MODELS = ("ball", "geometric")
REACH_RATES = ("none", "agent_pairs", "all")


@dataclass
class PlannerParams:
    beta1: float = 1.0
    beta2: float = 2.0
    Ps: Optional[np.ndarray] = None
    object_gains: CbfGains = OBJECT_GAINS
    wall_gains: CbfGains = WALL_GAINS
    # per-pair overrides keyed by (agent index, object key), e.g. (0, "obs1"),
    # (2, "agent0") or (1, "wall0")
    gains: Dict[Tuple[int, str], CbfGains] = field(default_factory=dict)
    frs_horizon_s: float = 1.0
    slack_weight: float = 1e6
    # "ball": translating ball barrier; "geometric": barrier as a function
    # of pair distance (see _geometric_row)
    pair_model: str = "geometric"
    # which pairs account for agent reach radii growing with speed: "none",
    # "agent_pairs" (agent-agent rows only) or "all"; geometric model only
    reach_rate: str = "agent_pairs"
    # cap on the nominal controller's commanded speed (m/s); None for plain PD
    max_speed: Optional[float] = None
    # geometric model: overlap depth (m) past which the barrier used in the
    # rows follows a tangent line instead of the square-root edge; 0 disables
    kink_depth: float = 0.1

    def __post_init__(self):
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ValueError("beta1 and beta2 must be positive")
        if not self.frs_horizon_s >= 0:
            raise ValueError("frs_horizon_s must be >= 0")
        if not self.kink_depth >= 0:
            raise ValueError("kink_depth must be >= 0")
        if self.max_speed is not None and not self.max_speed > 0:
            raise ValueError("max_speed must be positive")
        if self.reach_rate not in REACH_RATES:
            raise ValueError(f"reach_rate must be one of {REACH_RATES}, got {self.reach_rate!r}")
        if self.pair_model not in PAIR_MODELS:
            raise ValueError(f"pair_model must be one of {PAIR_MODELS}, got {self.pair_model!r}")
        if self.Ps is not None:
            Ps = np.atleast_2d(np.asarray(self.Ps, dtype=float))
            if not np.allclose(Ps, Ps.T, atol=1e-12):
                raise ValueError("Ps must be symmetric")
            if np.linalg.eigvalsh(Ps)[0] <= 0:
                raise ValueError("Ps must be positive definite")
            self.Ps = Ps

    def weight(self, n_agents: int) -> np.ndarray:
        if self.Ps is None:
            return np.eye(2 * n_agents)
        if self.Ps.shape != (2 * n_agents, 2 * n_agents):
            raise ValueError(f"Ps has shape {self.Ps.shape}, expected {(2 * n_agents,) * 2}")
        return self.Ps

    def gains_for(self, agent: int, key: str) -> CbfGains:
        g = self.gains.get((agent, key))
        if g is not None:
            return g
        return self.wall_gains if key.startswith("wall") else self.object_gains


@dataclass
class PairRecord:
    """Diagnostics for one barrier row."""

    agent: int
    key: str
    h: float
    psi1: float
    distance: float
    ball: Optional[PcBall]
    case: Optional[ProximityCase]


@dataclass
class PlannerOutput:
    safe_input: np.ndarray
    nominal_input: np.ndarray
    active_rows: np.ndarray
    pairs: List[PairRecord]
    solver_status: Status
    rows: Tuple[np.ndarray, np.ndarray]
    solution: Optional[QpSolution] = None
    braking: Tuple[int, ...] = ()

    @property
    def cbf_values(self):
        return {(p.agent, p.key): (p.h, p.psi1) for p in self.pairs}


def nominal_control(agent: AgentState, goal, params: PlannerParams, goal_velocity=None, goal_accel=None) -> np.ndarray:
    """PD law toward ``goal``, radially clamped to the agent's accel limit.

    A moving goal may pass its velocity and acceleration as feedforward.
    With ``params.max_speed`` set, the position term is read as a velocity
    command ``(beta1 / beta2) (goal - p)`` and capped in norm; below the cap
    the law is unchanged.
    """
    gv = np.zeros(2) if goal_velocity is None else np.asarray(goal_velocity, dtype=float)
    v_cmd = params.beta1 / params.beta2 * (np.asarray(goal, dtype=float) - agent.position)
    if params.max_speed is not None:
        v_cmd = _clamp(v_cmd, params.max_speed)
    u = params.beta2 * (gv + v_cmd - agent.velocity)
    if goal_accel is not None:
        u = u + np.asarray(goal_accel, dtype=float)
    return _clamp(u, agent.accel_limit)


def _clamp(u, limit):
    nrm = math.hypot(u[0], u[1])
    if nrm > limit:
        u = u * (limit / nrm)
    return u


def _pc_ball(agent: AgentState, obj_pos, obj_disk_radius_fn, obj_body, horizon):
    """Proximity ball between ``agent`` and one object.

    ``obj_disk_radius_fn(u)`` gives the object's reach along unit ``u``
    (pointing from the object toward the agent).
    """
    delta = agent.position - obj_pos
    dist = math.hypot(delta[0], delta[1])
    margin = agent.body_radius + obj_body
    disk_i = agent_reach_ball(agent, horizon)
    if dist < 1e-12:
        return PcBall(obj_pos, disk_i.radius + margin), ProximityCase.CASE2, dist
    u = delta / dist
    reach_j = obj_disk_radius_fn(u)
    reach_i = disk_i.radius
    case = classify_proximity(reach_i, reach_j, dist)
    if case is ProximityCase.CASE1:
        return pc_ball_case1(obj_pos, reach_j, margin), case, dist
    return pc_ball_case2(disk_i, Ball(obj_pos, reach_j), margin), case, dist


def _pair_h(dist, reach_i, reach_j, margin):
    """Barrier value as a function of the pair geometry only.

    Same construction as ``pc_ball_case2`` with the agent at the origin and
    the object on the +x axis, written out in scalars because the rows
    evaluate it many times per tick.
    """
    if reach_i + reach_j <= dist:
        return dist - reach_j - margin
    if dist + reach_j <= reach_i:
        return dist - reach_j - margin
    if dist + reach_i <= reach_j:
        return -reach_i - margin
    mid = 0.5 * (dist - reach_j + reach_i)
    x = (dist * dist + reach_i * reach_i - reach_j * reach_j) / (2.0 * dist)
    a = math.sqrt(max(reach_i * reach_i - x * x, 0.0))
    return abs(mid) - max(reach_i - mid, math.hypot(x - mid, a)) - margin


def _pair_h_soft(dist, reach_i, reach_j, margin, depth):
    """Lower bound on ``_pair_h`` with bounded slope near the case boundary.

    Just inside the overlap case the barrier falls like the square root of
    the overlap depth, so a sampled controller loses ground every time the
    pair crosses the boundary. Closer than ``depth`` to the boundary the
    barrier is replaced by its tangent line there; the barrier is convex in
    distance on this stretch, so the line stays below it and a nonnegative
    soft value still certifies the true one. The tangent point moves toward
    the boundary until the line is steeper than the separated-case barrier
    (slope 1), so that far pairs see the exact value.
    """
    h = _pair_h(dist, reach_i, reach_j, margin)
    touch = reach_i + reach_j
    lo = abs(reach_i - reach_j)
    if depth <= 0 or dist <= touch - depth:
        return h
    step = 1e-7 * max(1.0, touch)
    for k in range(4):
        d0 = touch - depth * 0.25**k
        if d0 <= lo or dist <= d0:
            continue
        h0 = _pair_h(d0, reach_i, reach_j, margin)
        slope = (_pair_h(d0 + step, reach_i, reach_j, margin) - h0) / step
        if slope >= 1.5:
            return min(h, h0 + slope * (dist - d0))
    return h


def _partial(f, x, step=1e-6):
    """Central difference that stays on ``x >= 0``."""
    lo = max(x - step, 0.0)
    return (f(x + step) - f(lo)) / (x + step - lo)


def _geometric_row(
    ag, slot, n, obj_pos, obj_vel, other, other_slot, reach_i, reach_j, margin, gains, horizon, reach_rate, depth=0.0
):
    """Pair barrier written as ``h(d, r_i, r_j)``.

    The enclosing ball moves and resizes with the pair distance ``d``, so
    ``dh/dt = h_d * d_dot`` with ``h_d`` taken from the ball construction
    rather than assumed to be one. The drift leaves out ``h_dd * d_dot^2``:
    ``h`` is convex in ``d`` between its kinks, so the row is slightly
    tighter than exact and never looser. With ``reach_rate`` the input-dependent
    growth of agent reach radii (``T <v_hat, accel>``) also enters: it is
    added to the second-order row with gain ``alpha1`` and a first-order
    row ``c @ accel >= -psi1`` is returned alongside.

    The rows use ``_pair_h_soft`` with ``depth``; the third return value
    is ``(h, psi1)`` of the unsoftened barrier, for logging.
    """
    diff = ag.position - obj_pos
    dist = math.hypot(diff[0], diff[1])
    if dist < SINGULAR_EPS:
        raise SingularityError("agent and object coincide")
    e = diff / dist
    rel = ag.velocity - (np.zeros(2) if obj_vel is None else np.asarray(obj_vel, dtype=float))
    d_dot = float(e @ rel)
    curvature = (float(rel @ rel) - d_dot * d_dot) / dist

    h_true = _pair_h(dist, reach_i, reach_j, margin)
    psi1_true = _partial(lambda x: _pair_h(x, reach_i, reach_j, margin), dist) * d_dot + gains.alpha1 * h_true

    def soft(x, ri=reach_i, rj=reach_j):
        return _pair_h_soft(x, ri, rj, margin, depth)

    h = soft(dist)
    h_d = _partial(soft, dist)
    h_dot = h_d * d_dot
    psi1 = h_dot + gains.alpha1 * h

    coeffs = np.zeros(2 * n)
    coeffs[2 * slot : 2 * slot + 2] = h_d * e
    if other_slot is not None:
        coeffs[2 * other_slot : 2 * other_slot + 2] = -h_d * e
    extra = None
    if reach_rate:
        c = np.zeros(2 * n)
        parts = [(ag, slot, lambda r: soft(dist, ri=r), reach_i)]
        if other_slot is not None:
            parts.append((other, other_slot, lambda r: soft(dist, rj=r), reach_j))
        for state, s, f, r in parts:
            speed = math.hypot(state.velocity[0], state.velocity[1])
            if speed > 1e-9:
                c[2 * s : 2 * s + 2] += horizon * _partial(f, r) * state.velocity / speed
        if np.any(c):
            coeffs += gains.alpha1 * c
            extra = LinearInequality(c, -psi1)
    lf_psi1 = h_d * curvature + gains.alpha1 * h_dot
    rhs = -lf_psi1 - gains.alpha2 * psi1
    return CbfEvaluation(h, h_dot, psi1, LinearInequality(coeffs, rhs), lf_psi1), extra, (h_true, psi1_true)


def build_rows(agents, obstacles, walls, params: PlannerParams):
    """Barrier rows for the whole fleet in deterministic order.

    Per agent: obstacles, then the other agents, then walls. Returns the
    evaluations, their pair records, and the agents whose rows were
    singular.
    """
    n = len(agents)
    T = params.frs_horizon_s
    evals: List[CbfEvaluation] = []
    records: List[PairRecord] = []
    singular = []
    boxes = [obstacle_reach_box(o, T) for o in obstacles]
    for i, ag in enumerate(agents):
        objs = []
        for j, ob in enumerate(obstacles):
            box = boxes[j]
            objs.append(
                (f"obs{j}", ob.position, ob.velocity, ob.body_radius, None,
                 lambda u, box=box, p=ob.position: projected_reach_max(box, p, u))
            )
        for j, other in enumerate(agents):
            if j == i:
                continue
            r = agent_reach_ball(other, T).radius
            objs.append((f"agent{j}", other.position, other.velocity, other.body_radius, j, lambda u, r=r: r))
        for key, pos, vel, body, slot, reach_fn in objs:
            ball, case, dist = _pc_ball(ag, pos, reach_fn, body, T)
            gains = params.gains_for(i, key)
            try:
                if params.pair_model == "ball":
                    ev, extra = hocbf_row(ag, ball, gains, i, n, object_velocity=vel, object_slot=slot), None
                    logged = (ev.h, ev.psi1)
                else:
                    u = (ag.position - pos) / max(dist, 1e-12)
                    ev, extra, logged = _geometric_row(
                        ag, i, n, pos, vel, agents[slot] if slot is not None else None, slot,
                        agent_reach_ball(ag, T).radius, reach_fn(u), ag.body_radius + body,
                        gains, T, params.reach_rate == "all" or (params.reach_rate == "agent_pairs" and slot is not None),
                        params.kink_depth,
                    )
            except SingularityError:
                singular.append(i)
                records.append(PairRecord(i, key, -ball.radius, float("nan"), dist, ball, case))
                continue
            evals.append(ev)
            if extra is not None:
                evals.append(CbfEvaluation(ev.h, ev.h_dot, ev.psi1, extra))
            records.append(PairRecord(i, key, logged[0], logged[1], dist, ball, case))
        for w, wall in enumerate(walls):
            key = f"wall{w}"
            ev = wall_rows(ag, wall.y, wall.side, params.gains_for(i, key), i, n)
            evals.append(ev)
            records.append(PairRecord(i, key, ev.h, ev.psi1, abs(wall.y - ag.position[1]), None, None))
    return evals, records, sorted(set(singular))


def plan_step(
    agents: Sequence[AgentState],
    obstacles: Sequence[ObstacleState],
    goals,
    walls: Sequence[Wall] = (),
    params: Optional[PlannerParams] = None,
    warm_start: Optional[QpSolution] = None,
    goal_velocities=None,
    goal_accels=None,
) -> PlannerOutput:
    """One tick of the centralized filter.

    ``warm_start`` is the previous tick's solution (row layout is stable
    while the agent/obstacle/wall counts are).
    """
    params = params or PlannerParams()
    n = len(agents)
    if n < 1:
        raise ValueError("at least one agent is required")
    goals = np.asarray(goals, dtype=float).reshape(n, 2)
    gv = [None] * n if goal_velocities is None else np.asarray(goal_velocities, dtype=float).reshape(n, 2)
    ga = [None] * n if goal_accels is None else np.asarray(goal_accels, dtype=float).reshape(n, 2)
    kd = np.concatenate([nominal_control(a, g, params, v, acc) for a, g, v, acc in zip(agents, goals, gv, ga)])

    evals, records, singular = build_rows(agents, obstacles, walls, params)
    G, b = stack_rows(evals, 2 * n)
    lim = np.repeat([a.accel_limit for a in agents], 2)
    lower, upper = -lim, lim.copy()
    for i in singular:
        # at a ball center the barrier gradient is undefined; brake instead
        brake = _clamp(-params.beta2 * agents[i].velocity, agents[i].accel_limit)
        lower[2 * i : 2 * i + 2] = brake
        upper[2 * i : 2 * i + 2] = brake

    Ps = params.weight(n)
    H = 2.0 * Ps
    c = -2.0 * (Ps @ kd)
    sol = qpsolver.solve(QpProblem(H, c, G, b, lower, upper), warm_start=warm_start)
    x = sol.x
    status = sol.status
    if status is not Status.OPTIMAL:
        x = _slack_solve(H, c, G, b, lower, upper, params.slack_weight)
        status = Status.INFEASIBLE if status is Status.INFEASIBLE else status
    active = sol.active_rows if sol.status is Status.OPTIMAL else np.flatnonzero(G @ x - b < 1e-9)
    return PlannerOutput(
        safe_input=x,
        nominal_input=kd,
        active_rows=active,
        pairs=records,
        solver_status=status,
        rows=(G, b),
        solution=sol if sol.status is Status.OPTIMAL else None,
        braking=tuple(singular),
    )


def _slack_solve(H, c, G, b, lower, upper, weight):
    """Least-violation fallback: one nonnegative slack per row, quadratic penalty."""
    nv = H.shape[0]
    m = G.shape[0]
    Hs = np.zeros((nv + m, nv + m))
    Hs[:nv, :nv] = H
    Hs[nv:, nv:] = 2.0 * weight * np.eye(m)
    cs = np.concatenate([c, np.zeros(m)])
    Gs = np.hstack([G, np.eye(m)])
    lo = np.concatenate([lower, np.zeros(m)])
    up = np.concatenate([upper, np.full(m, np.inf)])
    sol = qpsolver.solve(QpProblem(Hs, cs, Gs, b, lo, up))
    if sol.status is Status.INFEASIBLE:  # pragma: no cover - only if bounds cross
        return np.clip(-np.linalg.solve(H, c), lower, upper)
    return sol.x[:nv]
