"""Single-rigid-body (SRB) model of a quadruped and a GRF model-predictive controller.

State: COM position ``sigma``, COM velocity, body rotation ``R`` and body
angular velocity ``omega``. Forces act at stance feet in the world frame.
For the MPC the rotation is written in a local chart ``R = R_op exp([xi]x)``
around the operating rotation, which gives the 12-dim state
``eta = (sigma, sigma_dot, xi, omega)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import qpsolver
from .qpsolver import QpProblem, QpSolution, Status
from .reachability import DomainError

FEET = ("FL", "FR", "RL", "RR")


# --------------------------------------------------------------------- SO(3)

def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    th = math.sqrt(float(xi @ xi))
    K = skew(xi)
    if th < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + (math.sin(th) / th) * K + ((1.0 - math.cos(th)) / (th * th)) * K @ K


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    tr = float(np.trace(R))
    if tr <= -1.0 + 1e-9:
        raise DomainError("rotation angle too close to pi for the log chart")
    c = min(1.0, 0.5 * (tr - 1.0))
    th = math.acos(c)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th < 1e-6:
        return 0.5 * (1.0 + th * th / 6.0) * w
    if th > math.pi - 1e-3:
        # sin(th) is small; recover the axis from the symmetric part
        B = 0.5 * (R + R.T) - c * np.eye(3)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return th * axis
    return (th / (2.0 * math.sin(th))) * w


def jr_inv(xi) -> np.ndarray:
    """Inverse right Jacobian of SO(3)."""
    xi = np.asarray(xi, dtype=float)
    th = math.sqrt(float(xi @ xi))
    K = skew(xi)
    if th < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    coef = 1.0 / (th * th) - (1.0 + math.cos(th)) / (2.0 * th * math.sin(th))
    return np.eye(3) + 0.5 * K + coef * K @ K


def orthonormalize(R) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    Rn = U @ Vt
    if np.linalg.det(Rn) < 0:
        U[:, -1] *= -1
        Rn = U @ Vt
    return Rn


def rot_z(yaw) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# --------------------------------------------------------------------- types

@dataclass
class SrbParams:
    mass: float = 12.45
    inertia: np.ndarray = field(default_factory=lambda: np.diag([0.07, 0.26, 0.242]))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 9.81]))
    mu: float = 0.6
    fz_bounds: Tuple[float, float] = (0.0, 200.0)
    com_height: float = 0.26
    # hip positions in the body frame, order FL, FR, RL, RR
    hip_offsets: np.ndarray = field(
        default_factory=lambda: np.array([[0.18, 0.13], [0.18, -0.13], [-0.18, 0.13], [-0.18, -0.13]])
    )
    raibert_gain: float = 0.03

    def __post_init__(self):
        self.inertia = np.atleast_2d(np.asarray(self.inertia, dtype=float))
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        self.hip_offsets = np.asarray(self.hip_offsets, dtype=float).reshape(4, 2)
        self.fz_bounds = tuple(float(v) for v in self.fz_bounds)
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.inertia.shape != (3, 3) or not np.allclose(self.inertia, self.inertia.T):
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(self.inertia)[0] <= 0:
            raise ValueError("inertia must be positive definite")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        lo, hi = self.fz_bounds
        if not 0 <= lo <= hi:
            raise ValueError(f"fz_bounds must satisfy 0 <= min <= max, got {self.fz_bounds}")
        if not self.com_height > 0:
            raise ValueError("com_height must be positive")
        self.inertia_inv = np.linalg.inv(self.inertia)

    @property
    def weight(self) -> float:
        return self.mass * float(self.gravity[2])


@dataclass
class SrbState:
    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)
        R = self.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) <= 0:
            raise DomainError("rotation must be in SO(3)")

    @classmethod
    def standing(cls, params: SrbParams, xy=(0.0, 0.0), yaw=0.0):
        return cls(np.array([xy[0], xy[1], params.com_height]), np.zeros(3), rot_z(yaw), np.zeros(3))

    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])


@dataclass
class ModifiedState:
    """Chart coordinates ``eta = (sigma, sigma_dot, xi, omega)`` about ``R_op``."""

    eta: np.ndarray
    rotation_op: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float).reshape(12)
        if np.linalg.norm(self.eta[6:9]) >= math.pi:
            raise DomainError("xi outside the chart |xi| < pi")

    @classmethod
    def from_state(cls, state: SrbState, rotation_op=None):
        R_op = state.rotation if rotation_op is None else np.asarray(rotation_op, dtype=float)
        xi = so3_log(R_op.T @ state.rotation)
        return cls(np.concatenate([state.position, state.velocity, xi, state.omega]), R_op)

    def to_state(self) -> SrbState:
        R = orthonormalize(self.rotation_op @ so3_exp(self.eta[6:9]))
        return SrbState(self.eta[0:3], self.eta[3:6], R, self.eta[9:12])


@dataclass
class ContactSchedule:
    """Stance flags ``(steps, 4)`` and world-frame foot positions ``(4, 3)``."""

    stance: np.ndarray
    foot_positions: np.ndarray

    def __post_init__(self):
        self.stance = np.atleast_2d(np.asarray(self.stance, dtype=bool))
        if self.stance.shape[1] != 4:
            raise ValueError("stance must have 4 columns (FL, FR, RL, RR)")
        self.foot_positions = np.asarray(self.foot_positions, dtype=float).reshape(4, 3)
        st = self.stance.any(axis=0)
        if np.any(np.abs(self.foot_positions[st, 2]) > 1e-12):
            raise ValueError("stance feet must lie on the ground (z = 0)")

    @property
    def steps(self) -> int:
        return self.stance.shape[0]

    def now(self) -> np.ndarray:
        return self.stance[0]


@dataclass(frozen=True)
class Gait:
    period: float
    duty: float
    offsets: Tuple[float, float, float, float]

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("gait period must be positive")
        if not 0 < self.duty <= 1:
            raise ValueError("gait duty must be in (0, 1]")

    @property
    def stance_time(self) -> float:
        return self.period * self.duty

    def in_stance(self, t) -> np.ndarray:
        if self.duty >= 1.0:
            return np.ones(4, dtype=bool)
        ph = np.mod(t / self.period + np.asarray(self.offsets), 1.0)
        return ph < self.duty


TROT = Gait(0.4, 0.5, (0.0, 0.5, 0.5, 0.0))
STANDING = Gait(1.0, 1.0, (0.0, 0.0, 0.0, 0.0))


@dataclass
class MpcWeights:
    Q: np.ndarray = field(
        default_factory=lambda: np.array([3e5, 3e7, 3e6] + [1e5] * 3 + [1e8] * 3 + [5e3] * 3)
    )
    P: Optional[np.ndarray] = None
    R: np.ndarray = field(default_factory=lambda: np.full(12, 0.01))

    def __post_init__(self):
        self.Q = _diag12(self.Q, "Q")
        self.P = 0.1 * self.Q if self.P is None else _diag12(self.P, "P")
        self.R = _diag12(self.R, "R")
        if np.any(self.R <= 0) or np.any(self.Q < 0) or np.any(self.P < 0):
            raise ValueError("R must be positive and Q, P nonnegative")


def _diag12(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        v = np.diag(v)
    if v.shape != (12,):
        raise ValueError(f"{name} must have 12 diagonal entries")
    return v


# ----------------------------------------------------------------- dynamics

def _grf_matrix(grfs, stance):
    """Accept ``(4, 3)`` forces or a flat list over stance feet only."""
    g = np.asarray(grfs, dtype=float)
    if g.shape == (4, 3):
        out = g.copy()
    else:
        g = g.reshape(-1, 3)
        if g.shape[0] != int(np.count_nonzero(stance)):
            raise ValueError("number of forces does not match stance feet")
        out = np.zeros((4, 3))
        out[np.asarray(stance, dtype=bool)] = g
    out[~np.asarray(stance, dtype=bool)] = 0.0
    return out


def world_torque(position, grfs, feet) -> np.ndarray:
    return np.cross(feet - position, grfs).sum(axis=0)


def srb_dynamics(state: SrbState, grfs, stance, feet, params: SrbParams):
    """Return ``(sigma_dot, sigma_ddot, R_dot, omega_dot)``."""
    f = _grf_matrix(grfs, stance)
    feet = np.asarray(feet, dtype=float).reshape(4, 3)
    acc = f.sum(axis=0) / params.mass - params.gravity
    tau_w = world_torque(state.position, f, feet)
    w = state.omega
    I = params.inertia
    wdot = params.inertia_inv @ (state.rotation.T @ tau_w - np.cross(w, I @ w))
    Rdot = state.rotation @ skew(w)
    return state.velocity.copy(), acc, Rdot, wdot


def chart_dynamics(eta, grfs, stance, feet, rotation_op, params: SrbParams) -> np.ndarray:
    """Time derivative of ``eta`` with ``xi_dot = Jr^-1(xi) omega``."""
    eta = np.asarray(eta, dtype=float)
    xi = eta[6:9]
    R = rotation_op @ so3_exp(xi)
    f = _grf_matrix(grfs, stance)
    feet = np.asarray(feet, dtype=float).reshape(4, 3)
    sigma, w = eta[0:3], eta[9:12]
    I = params.inertia
    out = np.empty(12)
    out[0:3] = eta[3:6]
    out[3:6] = f.sum(axis=0) / params.mass - params.gravity
    out[6:9] = jr_inv(xi) @ w
    out[9:12] = params.inertia_inv @ (R.T @ world_torque(sigma, f, feet) - np.cross(w, I @ w))
    return out


def jacobians(op_state: SrbState, op_grfs, stance, feet, params: SrbParams):
    """Continuous ``A (12x12)`` and ``B (12x12)`` of the chart dynamics at ``xi = 0``."""
    f = _grf_matrix(op_grfs, stance)
    feet = np.asarray(feet, dtype=float).reshape(4, 3)
    R = op_state.rotation
    w = op_state.omega
    I = params.inertia
    Iinv = params.inertia_inv
    F = f.sum(axis=0)
    tau_b = R.T @ world_torque(op_state.position, f, feet)

    A = np.zeros((12, 12))
    A[0:3, 3:6] = np.eye(3)
    A[6:9, 6:9] = -0.5 * skew(w)
    A[6:9, 9:12] = np.eye(3)
    A[9:12, 0:3] = Iinv @ R.T @ skew(F)
    A[9:12, 6:9] = Iinv @ skew(tau_b)
    A[9:12, 9:12] = -Iinv @ (skew(w) @ I - skew(I @ w))

    B = np.zeros((12, 12))
    st = np.asarray(stance, dtype=bool)
    for k in range(4):
        if not st[k]:
            continue
        B[3:6, 3 * k : 3 * k + 3] = np.eye(3) / params.mass
        B[9:12, 3 * k : 3 * k + 3] = Iinv @ R.T @ skew(feet[k] - op_state.position)
    return A, B


def linearize(op_state: SrbState, op_grfs, stance, feet, dt: float, params: SrbParams, full=False):
    """Discrete model ``eta+ = C eta + D f + eps`` (forward Euler).

    ``D`` has ``3 * n_stance`` columns, one 3-block per stance foot in
    FL, FR, RL, RR order, unless ``full`` is set.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    st = np.asarray(stance, dtype=bool)
    f = _grf_matrix(op_grfs, st)
    A, B = jacobians(op_state, f, st, feet, params)
    eta_op = np.concatenate([op_state.position, op_state.velocity, np.zeros(3), op_state.omega])
    F_op = chart_dynamics(eta_op, f, st, feet, op_state.rotation, params)
    fv = f.reshape(12)
    C = np.eye(12) + dt * A
    D = dt * B
    eps = dt * (F_op - A @ eta_op - B @ fv)
    if not full:
        cols = np.concatenate([np.arange(3 * k, 3 * k + 3) for k in range(4) if st[k]] or [np.zeros(0, int)])
        D = D[:, cols]
    return C, D, eps


def friction_cone_rows(mu: float, fz_bounds) -> Tuple[np.ndarray, np.ndarray]:
    """Six rows ``G f >= h`` for one foot force ``f = (fx, fy, fz)``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    lo, hi = fz_bounds
    G = np.array(
        [
            [-1.0, 0.0, mu],
            [1.0, 0.0, mu],
            [0.0, -1.0, mu],
            [0.0, 1.0, mu],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]
    )
    h = np.array([0.0, 0.0, 0.0, 0.0, lo, -hi])
    return G, h


def cone_violation(grfs, stance, params: SrbParams) -> float:
    """Largest friction-row violation over the stance feet (0 when all hold)."""
    G, h = friction_cone_rows(params.mu, params.fz_bounds)
    f = np.asarray(grfs, dtype=float).reshape(4, 3)
    worst = 0.0
    for k in np.flatnonzero(stance):
        worst = max(worst, float((h - G @ f[k]).max()))
    return worst


def gait_schedule(t: float, gait: Gait, steps: int = 1, dt: float = 0.0, foot_positions=None) -> ContactSchedule:
    stance = np.array([gait.in_stance(t + k * dt) for k in range(steps)])
    feet = np.zeros((4, 3)) if foot_positions is None else foot_positions
    return ContactSchedule(stance, feet)


def hip_positions(state: SrbState, params: SrbParams) -> np.ndarray:
    """Hips projected to the ground using the body yaw only."""
    Rz = rot_z(state.yaw())[:2, :2]
    out = np.zeros((4, 3))
    out[:, :2] = state.position[:2] + params.hip_offsets @ Rz.T
    return out


def foot_placement(state: SrbState, stance, desired_velocity, params: SrbParams,
                   stance_time: float, current_feet=None) -> np.ndarray:
    """Stance feet stay put; swing feet land at ``hip + v T/2 + k (v - v_des)``."""
    v = state.velocity[:2]
    vd = np.asarray(desired_velocity, dtype=float).reshape(-1)[:2]
    target = hip_positions(state, params)
    target[:, :2] += 0.5 * stance_time * v + params.raibert_gain * (v - vd)
    if current_feet is None:
        return target
    out = np.asarray(current_feet, dtype=float).reshape(4, 3).copy()
    st = np.asarray(stance, dtype=bool)
    out[~st] = target[~st]
    return out


def rk4_step(state: SrbState, grfs, stance, feet, dt: float, params: SrbParams) -> SrbState:
    """One RK4 step of the full SRB model with zero-order-hold forces."""

    def f(p, v, R, w):
        s = SrbState.__new__(SrbState)
        s.position, s.velocity, s.rotation, s.omega = p, v, R, w
        return srb_dynamics(s, grfs, stance, feet, params)

    p, v, R, w = state.position, state.velocity, state.rotation, state.omega
    k1 = f(p, v, R, w)
    k2 = f(p + 0.5 * dt * k1[0], v + 0.5 * dt * k1[1], R + 0.5 * dt * k1[2], w + 0.5 * dt * k1[3])
    k3 = f(p + 0.5 * dt * k2[0], v + 0.5 * dt * k2[1], R + 0.5 * dt * k2[2], w + 0.5 * dt * k2[3])
    k4 = f(p + dt * k3[0], v + dt * k3[1], R + dt * k3[2], w + dt * k3[3])
    out = [
        x + dt / 6.0 * (a + 2 * b + 2 * c + d)
        for x, a, b, c, d in zip((p, v, R, w), k1, k2, k3, k4)
    ]
    return SrbState(out[0], out[1], orthonormalize(out[2]), out[3])


# ---------------------------------------------------------------------- MPC

@dataclass
class MpcResult:
    eta_next: np.ndarray
    grf: np.ndarray
    status: Status
    cost: float
    solution: Optional[QpSolution] = None
    rotation_op: Optional[np.ndarray] = None
    iterations: int = 0


def reference_eta(state: SrbState, positions, velocities, yaw, params: SrbParams) -> np.ndarray:
    """Chart reference rows from planar positions/velocities and a yaw target.

    Height is the nominal COM height and attitude is level; ``xi`` is
    expressed about the current body rotation.
    """
    positions = np.atleast_2d(positions)
    velocities = np.atleast_2d(velocities)
    n = positions.shape[0]
    yaw = np.broadcast_to(np.asarray(yaw, dtype=float), (n,))
    ref = np.zeros((n, 12))
    ref[:, 0:2] = positions[:, :2]
    ref[:, 2] = params.com_height
    ref[:, 3:5] = velocities[:, :2]
    R_op_T = state.rotation.T
    for k in range(n):
        Rd = R_op_T @ rot_z(yaw[k])
        try:
            ref[k, 6:9] = so3_log(Rd)
        except DomainError:
            ref[k, 6:9] = 0.0
    return ref


def mpc_step(
    state: SrbState,
    reference,
    schedule: ContactSchedule,
    weights: MpcWeights,
    horizon: int,
    dt_mpc: float,
    params: SrbParams,
    op_grfs=None,
    warm_start: Optional[QpSolution] = None,
) -> MpcResult:
    """Condensed GRF MPC over ``horizon`` steps.

    ``reference`` has ``horizon + 1`` rows of ``eta`` (row 0 is the current
    time and is not penalized). The dynamics are linearized once about the
    current state and ``op_grfs`` (the previously applied forces).
    """
    ref = np.asarray(reference, dtype=float)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if ref.ndim != 2 or ref.shape[1] != 12 or ref.shape[0] < horizon + 1:
        raise ValueError(f"reference must have at least {horizon + 1} rows of 12")
    stance = schedule.stance
    if stance.shape[0] < horizon:
        stance = np.vstack([stance, np.repeat(stance[-1:], horizon - stance.shape[0], axis=0)])
    stance = stance[:horizon]
    if not stance.any():
        raise ValueError("no stance feet over the horizon; the MPC has no force authority")
    feet = schedule.foot_positions

    if op_grfs is None:
        n0 = max(1, int(np.count_nonzero(stance[0])))
        op = np.zeros((4, 3))
        op[stance[0], 2] = params.weight / n0
    else:
        op = np.asarray(op_grfs, dtype=float).reshape(4, 3)
    C, Dfull, eps = linearize(state, op, np.ones(4, bool), feet, dt_mpc, params, full=True)
    eta0 = np.concatenate([state.position, state.velocity, np.zeros(3), state.omega])

    # variable layout: stance-foot forces per step
    cols = []
    for k in range(horizon):
        cols.append([3 * f + a for f in range(4) if stance[k, f] for a in range(3)])
    offs = np.cumsum([0] + [len(c) for c in cols])
    nv = int(offs[-1])

    # eta_k = Phi_k eta0 + sum_j Gam_kj u_j + e_k, k = 1..N
    S = np.zeros((horizon, 12, nv))
    free = np.zeros((horizon, 12))
    x = eta0
    for k in range(horizon):
        x = C @ x + eps
        free[k] = x
        if k > 0:
            S[k] = C @ S[k - 1]
        S[k][:, offs[k] : offs[k + 1]] = Dfull[:, cols[k]]

    H = np.zeros((nv, nv))
    c = np.zeros(nv)
    const = 0.0
    for k in range(horizon):
        w = weights.P if k == horizon - 1 else weights.Q
        err = free[k] - ref[k + 1]
        Sw = S[k].T * w
        H += Sw @ S[k]
        c += Sw @ err
        const += float(err @ (w * err))
    Rdiag = np.concatenate([weights.R[cols[k]] for k in range(horizon)])
    H[np.diag_indices(nv)] += Rdiag
    H = 0.5 * (H + H.T)
    scale = float(np.max(np.diag(H)))

    Gc, hc = friction_cone_rows(params.mu, params.fz_bounds)
    n_feet = nv // 3
    G = np.zeros((6 * n_feet, nv))
    hrow = np.tile(hc, n_feet)
    for q in range(n_feet):
        G[6 * q : 6 * q + 6, 3 * q : 3 * q + 3] = Gc

    prob = QpProblem(2.0 * H / scale, 2.0 * c / scale, G, hrow)
    sol = qpsolver.solve(prob, warm_start=warm_start if _same_rows(warm_start, prob) else None)
    u = sol.x
    grf = np.zeros((4, 3))
    grf.reshape(12)[cols[0]] = u[offs[0] : offs[1]]
    eta_next = free[0] + S[0] @ u
    cost = float(u @ H @ u + 2.0 * c @ u + const)
    return MpcResult(eta_next, grf, sol.status, cost, sol, state.rotation.copy(), sol.iterations)


def _same_rows(warm, prob):
    return warm is not None and warm.duals.size == prob.m and warm.x.size == prob.n
