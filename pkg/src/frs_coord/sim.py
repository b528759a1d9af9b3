"""Fixed-step scenario engine.

The planner runs every tick (1 ms by default). At ``DoubleIntegrator``
fidelity each agent integrates the filtered acceleration directly; at
``SrbClosedLoop`` fidelity each agent is a single rigid body whose ground
reaction forces come from the MPC, solved every ``mpc_every`` ticks and
held in between.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from .planner import PlannerParams, Wall, plan_step
from .qpsolver import Status
from .reachability import AgentState, ObstacleState
from . import srb as srbm


# ------------------------------------------------------------ motion patterns

@dataclass(frozen=True)
class Circular:
    center: tuple
    radius: float
    angular_rate: float = 0.5
    phase: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("Circular radius must be positive")

    def kinematics(self, t):
        th = self.angular_rate * t + self.phase
        c, s = math.cos(th), math.sin(th)
        w = self.angular_rate
        r = self.radius
        pos = np.array([self.center[0] + r * c, self.center[1] + r * s])
        vel = np.array([-r * w * s, r * w * c])
        acc = np.array([-r * w * w * c, -r * w * w * s])
        return pos, vel, acc


@dataclass(frozen=True)
class Diagonal:
    """Back-and-forth between ``p_a`` and ``p_b`` at constant speed."""

    p_a: tuple
    p_b: tuple
    speed: float = 0.5

    def __post_init__(self):
        if np.allclose(self.p_a, self.p_b):
            raise ValueError("Diagonal endpoints must differ")
        if not self.speed >= 0:
            raise ValueError("Diagonal speed must be >= 0")

    def kinematics(self, t):
        a = np.asarray(self.p_a, dtype=float)
        b = np.asarray(self.p_b, dtype=float)
        L = float(np.linalg.norm(b - a))
        u = (b - a) / L
        s = self.speed * t
        leg = math.floor(s / L)
        frac = s - leg * L
        if leg % 2 == 0:
            return a + frac * u, self.speed * u, np.zeros(2)
        return b - frac * u, -self.speed * u, np.zeros(2)


@dataclass(frozen=True)
class Static:
    p: tuple

    def kinematics(self, t):
        return np.asarray(self.p, dtype=float).copy(), np.zeros(2), np.zeros(2)


MotionPattern = Union[Circular, Diagonal, Static]


def obstacle_state(pattern: MotionPattern, t: float, body_radius: float = 0.3) -> ObstacleState:
    if t < 0:
        raise ValueError("t must be >= 0")
    pos, vel, _ = pattern.kinematics(t)
    return ObstacleState(pos, np.abs(vel), body_radius, velocity=vel)


# ------------------------------------------------------------------- scenario

class Fidelity(str, enum.Enum):
    DOUBLE_INTEGRATOR = "DoubleIntegrator"
    SRB_CLOSED_LOOP = "SrbClosedLoop"


@dataclass
class AgentSpec:
    """``goal`` is a fixed point or a motion pattern the agent tracks."""

    start: tuple
    goal: Union[tuple, MotionPattern]
    accel_limit: float = 2.0
    body_radius: float = 0.3

    def goal_at(self, t):
        if isinstance(self.goal, (Circular, Diagonal, Static)):
            return self.goal.kinematics(t)
        return np.asarray(self.goal, dtype=float), None, None


@dataclass
class ObstacleSpec:
    pattern: MotionPattern
    body_radius: float = 0.3


@dataclass
class SrbConfig:
    params: srbm.SrbParams = field(default_factory=srbm.SrbParams)
    weights: srbm.MpcWeights = field(default_factory=srbm.MpcWeights)
    horizon: int = 5
    dt_mpc: float = 0.03
    gait: str = "trot"
    init_perturbation: float = 0.0


@dataclass
class Scenario:
    name: str
    agents: List[AgentSpec]
    obstacles: List[ObstacleSpec] = field(default_factory=list)
    walls: List[Wall] = field(default_factory=list)
    planner: PlannerParams = field(default_factory=PlannerParams)
    srb: SrbConfig = field(default_factory=SrbConfig)
    duration_s: float = 30.0
    seed: int = 0
    fidelity: Fidelity = Fidelity.DOUBLE_INTEGRATOR
    dt: float = 0.001
    mpc_every: int = 2

    def __post_init__(self):
        self.fidelity = Fidelity(self.fidelity)
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if not self.agents:
            raise ValueError("scenario needs at least one agent")
        starts = [tuple(np.round(np.asarray(a.start, dtype=float), 12)) for a in self.agents]
        if len(set(starts)) != len(starts):
            raise ValueError("agent start positions must be distinct")
        if not self.dt > 0 or self.mpc_every < 1:
            raise ValueError("dt must be positive and mpc_every >= 1")

    @property
    def steps(self) -> int:
        return int(round(self.duration_s / self.dt))


# ------------------------------------------------------------------ trace log

@dataclass
class TraceLog:
    """Per-tick record. Arrays are indexed ``[tick, ...]``.

    ``pair_keys`` lists ``(agent, object key)`` in the planner's row order.
    """

    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    safe_input: np.ndarray
    nominal_input: np.ndarray
    pair_keys: List[tuple]
    h: np.ndarray
    psi1: np.ndarray
    distance: np.ndarray
    clearance: np.ndarray
    ball: np.ndarray
    status: List[str]
    qp_iterations: np.ndarray
    goal: np.ndarray
    eta: Optional[np.ndarray] = None
    grf: Optional[np.ndarray] = None
    mpc_iterations: Optional[np.ndarray] = None
    config: Dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return self.position.shape[1]

    def columns(self) -> List[str]:
        cols = ["time"]
        for i in range(self.n_agents):
            cols += [f"a{i}_{c}" for c in ("x", "y", "vx", "vy", "ux", "uy", "kx", "ky")]
        for a, key in self.pair_keys:
            p = f"a{a}_{key}"
            cols += [f"{p}_{c}" for c in ("h", "psi1", "dist", "clear", "qx", "qy", "r")]
        cols += ["status", "qp_iters"]
        if self.eta is not None:
            for i in range(self.n_agents):
                cols += [f"a{i}_eta{k}" for k in range(12)]
                cols += [f"a{i}_f{k}" for k in range(12)]
            cols += ["mpc_iters"]
        return cols

    def rows(self):
        K = self.time.size
        N = self.n_agents
        P = len(self.pair_keys)
        ag = np.concatenate(
            [self.position, self.velocity, self.safe_input.reshape(K, N, 2), self.nominal_input.reshape(K, N, 2)],
            axis=2,
        ).reshape(K, N * 8)
        pr = np.concatenate(
            [self.h[..., None], self.psi1[..., None], self.distance[..., None], self.clearance[..., None], self.ball],
            axis=2,
        ).reshape(K, P * 7)
        for k in range(K):
            row = [repr(float(self.time[k]))]
            row += [repr(float(v)) for v in ag[k]]
            row += [repr(float(v)) for v in pr[k]]
            row += [self.status[k], str(int(self.qp_iterations[k]))]
            if self.eta is not None:
                for i in range(N):
                    row += [repr(float(v)) for v in self.eta[k, i]]
                    row += [repr(float(v)) for v in self.grf[k, i].reshape(12)]
                row.append(str(int(self.mpc_iterations[k])))
            yield row

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        buf.write("# config: " + json.dumps(self.config, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for row in self.rows():
            w.writerow(row)
        text = buf.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w") as fh:
                    fh.write(text)
        return text


def read_trace_header(path) -> Dict:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("# config: "):
        raise ValueError(f"{path}: missing config header")
    return json.loads(first[len("# config: "):])


# ------------------------------------------------------------------------ run

def _planner_inputs(scn: Scenario, t, agent_states):
    obstacles = [obstacle_state(o.pattern, t, o.body_radius) for o in scn.obstacles]
    goals, gvel, gacc = [], [], []
    for spec in scn.agents:
        p, v, a = spec.goal_at(t)
        goals.append(p)
        gvel.append(np.zeros(2) if v is None else v)
        gacc.append(np.zeros(2) if a is None else a)
    moving = any(isinstance(s.goal, (Circular, Diagonal)) for s in scn.agents)
    return obstacles, np.array(goals), (np.array(gvel) if moving else None), (np.array(gacc) if moving else None)


def _body_sum(scn: Scenario, i, key):
    base = scn.agents[i].body_radius
    if key.startswith("obs"):
        return base + scn.obstacles[int(key[3:])].body_radius
    if key.startswith("agent"):
        return base + scn.agents[int(key[5:])].body_radius
    return base


def run(scenario: Scenario, config: Optional[Dict] = None) -> TraceLog:
    """Run ``scenario`` and return its trace. Deterministic in its inputs."""
    scn = scenario
    K = scn.steps
    N = len(scn.agents)
    dt = scn.dt
    srb_mode = scn.fidelity is Fidelity.SRB_CLOSED_LOOP

    pos = np.array([np.asarray(a.start, dtype=float) for a in scn.agents])
    vel = np.zeros((N, 2))

    # record buffers; pair layout is fixed after the first tick
    T_time = np.arange(K) * dt
    T_pos = np.zeros((K, N, 2))
    T_vel = np.zeros((K, N, 2))
    T_safe = np.zeros((K, 2 * N))
    T_nom = np.zeros((K, 2 * N))
    T_goal = np.zeros((K, N, 2))
    T_status: List[str] = []
    T_iter = np.zeros(K, dtype=int)
    pair_keys = None
    T_h = T_psi = T_dist = T_clear = T_ball = None

    if srb_mode:
        sp = scn.srb.params
        rng = np.random.default_rng(scn.seed)
        gait = srbm.TROT if scn.srb.gait == "trot" else srbm.STANDING
        bodies = []
        for i in range(N):
            st = srbm.SrbState.standing(sp, pos[i])
            if scn.srb.init_perturbation > 0:
                d = rng.normal(size=3)
                st.position = st.position + scn.srb.init_perturbation * d / np.linalg.norm(d)
            bodies.append(st)
        feet = [srbm.hip_positions(b, sp) for b in bodies]
        grf = [None] * N
        stance = [np.ones(4, bool)] * N
        mpc_warm = [None] * N
        yaw_ref = [0.0] * N
        T_eta = np.zeros((K, N, 12))
        T_grf = np.zeros((K, N, 4, 3))
        T_mpc = np.zeros(K, dtype=int)
        for i in range(N):
            pos[i] = bodies[i].position[:2]

    warm = None
    for k in range(K):
        t = k * dt
        if srb_mode:
            for i in range(N):
                pos[i] = bodies[i].position[:2]
                vel[i] = bodies[i].velocity[:2]
        agents = [AgentState(pos[i], vel[i], a.accel_limit, a.body_radius) for i, a in enumerate(scn.agents)]
        obstacles, goals, gvel, gacc = _planner_inputs(scn, t, agents)
        try:
            out = plan_step(agents, obstacles, goals, scn.walls, scn.planner, warm, gvel, gacc)
        except Exception as exc:  # keep the loop alive; the step is flagged
            out = None
            status = f"Error:{type(exc).__name__}"
        if out is not None:
            warm = out.solution
            status = out.solver_status.value
            u = out.safe_input
            if pair_keys is None:
                pair_keys = [(p.agent, p.key) for p in out.pairs]
                P = len(pair_keys)
                T_h = np.full((K, P), np.nan)
                T_psi = np.full((K, P), np.nan)
                T_dist = np.full((K, P), np.nan)
                T_clear = np.full((K, P), np.nan)
                T_ball = np.full((K, P, 3), np.nan)
            for q, pr in enumerate(out.pairs):
                T_h[k, q] = pr.h
                T_psi[k, q] = pr.psi1
                T_dist[k, q] = pr.distance
                T_clear[k, q] = pr.h if pr.key.startswith("wall") else pr.distance - _body_sum(scn, pr.agent, pr.key)
                if pr.ball is not None:
                    T_ball[k, q, :2] = pr.ball.center
                    T_ball[k, q, 2] = pr.ball.radius
            T_nom[k] = out.nominal_input
            T_iter[k] = out.solution.iterations if out.solution is not None else -1
        else:
            u = np.zeros(2 * N)
        T_status.append(status)
        T_pos[k] = pos
        T_vel[k] = vel
        T_safe[k] = u
        T_goal[k] = goals

        if not srb_mode:
            a = u.reshape(N, 2)
            # exact for a constant input, identical to an RK4 step
            pos = pos + dt * vel + 0.5 * dt * dt * a
            vel = vel + dt * a
            continue

        cfg = scn.srb
        for i in range(N):
            b = bodies[i]
            if k % scn.mpc_every == 0:
                a_i = u[2 * i : 2 * i + 2]
                ks = np.arange(cfg.horizon + 1) * cfg.dt_mpc
                ref_p = b.position[:2] + np.outer(ks, b.velocity[:2]) + 0.5 * np.outer(ks * ks, a_i)
                ref_v = b.velocity[:2] + np.outer(ks, a_i)
                v_end = ref_v[-1]
                if np.hypot(*v_end) > 0.2:
                    yaw_ref[i] = _unwrap(math.atan2(v_end[1], v_end[0]), b.yaw())
                sched = srbm.gait_schedule(t, gait, cfg.horizon, cfg.dt_mpc)
                stance[i] = sched.stance[0]
                feet[i] = srbm.foot_placement(b, stance[i], v_end, sp, gait.stance_time, feet[i])
                sched.foot_positions = feet[i]
                ref = srbm.reference_eta(b, ref_p, ref_v, yaw_ref[i], sp)
                try:
                    res = srbm.mpc_step(b, ref, sched, cfg.weights, cfg.horizon, cfg.dt_mpc, sp, grf[i], mpc_warm[i])
                    grf[i] = res.grf
                    mpc_warm[i] = res.solution if res.status is Status.OPTIMAL else None
                    T_mpc[k] += res.iterations
                    if res.status is not Status.OPTIMAL and T_status[k] == Status.OPTIMAL.value:
                        T_status[k] = f"Mpc{res.status.value}"
                except Exception as exc:
                    T_status[k] = f"MpcError:{type(exc).__name__}"
            T_eta[k, i] = srbm.ModifiedState.from_state(b, srbm.rot_z(b.yaw())).eta
            T_grf[k, i] = grf[i]
            bodies[i] = srbm.rk4_step(b, grf[i], stance[i], feet[i], dt, sp)

    if pair_keys is None:
        pair_keys = []
        T_h = T_psi = T_dist = T_clear = np.zeros((K, 0))
        T_ball = np.zeros((K, 0, 3))
    trace = TraceLog(
        time=T_time, position=T_pos, velocity=T_vel, safe_input=T_safe, nominal_input=T_nom,
        pair_keys=pair_keys, h=T_h, psi1=T_psi, distance=T_dist, clearance=T_clear, ball=T_ball,
        status=T_status, qp_iterations=T_iter, goal=T_goal, config=config or {},
    )
    if srb_mode:
        trace.eta = T_eta
        trace.grf = T_grf
        trace.mpc_iterations = T_mpc
    return trace


def _unwrap(angle, ref):
    return ref + (angle - ref + math.pi) % (2 * math.pi) - math.pi


# -------------------------------------------------------------------- metrics

@dataclass
class Metrics:
    min_distance: float
    argmin_time: float
    argmin_pair: Optional[tuple]
    min_clearance: float
    min_h: Dict[str, float]
    min_psi1: Dict[str, float]
    min_psi0: float
    final_goal_error: List[float]
    infeasible_steps: int
    mean_qp_iterations: float
    mean_mpc_iterations: Optional[float] = None
    min_com_height: Optional[float] = None
    max_com_height: Optional[float] = None

    @property
    def safe(self) -> bool:
        return self.min_psi0 >= -1e-6 and self.min_clearance > 0.0

    def as_dict(self) -> Dict:
        d = dict(self.__dict__)
        d["argmin_pair"] = list(self.argmin_pair) if self.argmin_pair else None
        d["safe"] = self.safe
        return d

    def text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            if isinstance(v, dict):
                for kk, vv in v.items():
                    lines.append(f"{k}.{kk} = {vv:.6g}")
            elif isinstance(v, float):
                lines.append(f"{k} = {v:.6g}")
            else:
                lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def metrics(trace: TraceLog) -> Metrics:
    if trace.time.size == 0:
        raise ValueError("empty trace")
    obj = [q for q, (_, key) in enumerate(trace.pair_keys) if not key.startswith("wall")]
    if obj:
        dist = trace.distance[:, obj]
        flat = int(np.nanargmin(dist))
        k, q = divmod(flat, len(obj))
        min_distance = float(dist[k, q])
        argmin_time = float(trace.time[k])
        argmin_pair = trace.pair_keys[obj[q]]
    else:
        min_distance, argmin_time, argmin_pair = math.inf, math.nan, None
    names = [f"a{a}_{key}" for a, key in trace.pair_keys]
    min_h = {n: float(np.nanmin(trace.h[:, q])) for q, n in enumerate(names)}
    min_psi1 = {n: float(np.nanmin(trace.psi1[:, q])) for q, n in enumerate(names)}
    err = [float(np.linalg.norm(trace.position[-1, i] - trace.goal[-1, i])) for i in range(trace.n_agents)]
    infeasible = sum(1 for s in trace.status if s != Status.OPTIMAL.value)
    iters = trace.qp_iterations[trace.qp_iterations >= 0]
    m = Metrics(
        min_distance=min_distance,
        argmin_time=argmin_time,
        argmin_pair=argmin_pair,
        min_clearance=float(np.nanmin(trace.clearance)) if trace.clearance.size else math.inf,
        min_h=min_h,
        min_psi1=min_psi1,
        min_psi0=min(min_h.values()) if min_h else math.inf,
        final_goal_error=err,
        infeasible_steps=infeasible,
        mean_qp_iterations=float(iters.mean()) if iters.size else 0.0,
    )
    if trace.eta is not None:
        ticks = trace.mpc_iterations[trace.mpc_iterations > 0]
        m.mean_mpc_iterations = float(ticks.mean()) if ticks.size else 0.0
        m.min_com_height = float(trace.eta[:, :, 2].min())
        m.max_com_height = float(trace.eta[:, :, 2].max())
    return m


# ------------------------------------------------------- SRB reference runs

@dataclass
class SrbRun:
    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    grf: np.ndarray
    stance: np.ndarray
    status: List[str]
    cone_violation: float


def run_srb_velocity(cfg: SrbConfig, velocity, duration_s: float, dt: float = 0.001,
                     mpc_every: int = 2, offset=(0.0, 0.0, 0.0), gait: Optional[str] = None) -> SrbRun:
    """Closed-loop SRB + MPC tracking a constant planar velocity.

    The reference starts at the current COM each MPC tick, so a zero
    velocity holds position. ``offset`` perturbs the initial COM.
    """
    sp = cfg.params
    g = srbm.TROT if (gait or cfg.gait) == "trot" else srbm.STANDING
    v_ref = np.asarray(velocity, dtype=float).reshape(2)
    body = srbm.SrbState.standing(sp)
    feet = srbm.hip_positions(body, sp)
    body.position = body.position + np.asarray(offset, dtype=float)
    K = int(round(duration_s / dt))
    out_p = np.zeros((K, 3))
    out_v = np.zeros((K, 3))
    out_R = np.zeros((K, 3, 3))
    out_f = np.zeros((K, 4, 3))
    out_s = np.zeros((K, 4), dtype=bool)
    status = []
    f = None
    warm = None
    st = np.ones(4, bool)
    worst = 0.0
    yaw = math.atan2(v_ref[1], v_ref[0]) if np.hypot(*v_ref) > 0 else 0.0
    for k in range(K):
        t = k * dt
        if k % mpc_every == 0:
            sched = srbm.gait_schedule(t, g, cfg.horizon, cfg.dt_mpc)
            st = sched.stance[0]
            feet = srbm.foot_placement(body, st, v_ref, sp, g.stance_time, feet)
            sched.foot_positions = feet
            ks = np.arange(cfg.horizon + 1) * cfg.dt_mpc
            p0 = body.position[:2]
            ref = srbm.reference_eta(body, p0 + np.outer(ks, v_ref), np.tile(v_ref, (ks.size, 1)), yaw, sp)
            res = srbm.mpc_step(body, ref, sched, cfg.weights, cfg.horizon, cfg.dt_mpc, sp, f, warm)
            f = res.grf
            warm = res.solution if res.status is Status.OPTIMAL else None
            status.append(res.status.value)
            worst = max(worst, srbm.cone_violation(f, st, sp))
        out_p[k] = body.position
        out_v[k] = body.velocity
        out_R[k] = body.rotation
        out_f[k] = f
        out_s[k] = st
        body = srbm.rk4_step(body, f, st, feet, dt, sp)
    return SrbRun(np.arange(K) * dt, out_p, out_v, out_R, out_f, out_s, status, worst)
