"""Second-order (high-order) barrier constraints for double-integrator agents.

For a barrier ``h`` with relative degree two the series is::

    psi0 = h
    psi1 = dh/dt + alpha1 * psi0
    psi2 = dpsi1/dt + alpha2 * psi1 >= 0

and ``psi2 >= 0`` is affine in the stacked acceleration vector. Each
constraint is returned as a row ``coeffs @ accel >= rhs``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .reachability import AgentState, PcBall

SINGULAR_EPS = 1e-6


class SingularityError(ArithmeticError):
    """Agent sits at the center of a barrier ball; the gradient is undefined."""


@dataclass(frozen=True)
class CbfGains:
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if not (self.alpha1 > 0.0 and self.alpha2 > 0.0):
            raise ValueError(f"CBF gains must be positive, got {self.alpha1}, {self.alpha2}")


OBJECT_GAINS = CbfGains(0.82, 0.3)
WALL_GAINS = CbfGains(0.82, 0.15)


@dataclass(eq=False)
class LinearInequality:
    """Row ``coeffs @ x >= rhs``."""

    coeffs: np.ndarray
    rhs: float

    @property
    def vacuous(self) -> bool:
        return not np.any(self.coeffs)

    def satisfied(self, x, tol=0.0) -> bool:
        return float(self.coeffs @ x) >= self.rhs - tol


@dataclass(eq=False)
class CbfEvaluation:
    h: float
    h_dot: float
    psi1: float
    row: LinearInequality
    lf_psi1: float = 0.0

    def psi1_dot(self, accel) -> float:
        """Time derivative of ``psi1`` under the stacked input ``accel``."""
        return self.lf_psi1 + float(self.row.coeffs @ accel)


def h_rpc(agent_pos, ball: PcBall) -> float:
    d = np.asarray(agent_pos, dtype=float) - ball.center
    nrm = math.hypot(d[0], d[1])
    if nrm < SINGULAR_EPS:
        raise SingularityError("agent is at the barrier ball center")
    return nrm - ball.radius


def hocbf_row(
    agent: AgentState,
    ball: PcBall,
    gains: CbfGains,
    agent_slot: int,
    n_agents: int,
    object_velocity=None,
    object_slot: Optional[int] = None,
) -> CbfEvaluation:
    """Ball barrier ``|p - q| - r`` for the agent in ``agent_slot``.

    With no ``object_velocity`` the ball is frozen at its current pose. When
    given, the ball translates with the object; if the object is itself a
    planned agent (``object_slot``) its acceleration enters the row with the
    opposite sign.
    """
    if not 0 <= agent_slot < n_agents:
        raise IndexError(f"agent_slot {agent_slot} outside [0, {n_agents})")
    d = agent.position - ball.center
    nrm = math.hypot(d[0], d[1])
    if nrm < SINGULAR_EPS:
        raise SingularityError("agent is at the barrier ball center")
    n_hat = d / nrm
    rel_vel = agent.velocity if object_velocity is None else agent.velocity - np.asarray(object_velocity, dtype=float)

    h = nrm - ball.radius
    h_dot = float(n_hat @ rel_vel)
    psi1 = h_dot + gains.alpha1 * h
    # second derivative of |d| without the input term
    curvature = (float(rel_vel @ rel_vel) - h_dot * h_dot) / nrm
    lf_psi1 = curvature + gains.alpha1 * h_dot

    coeffs = np.zeros(2 * n_agents)
    coeffs[2 * agent_slot : 2 * agent_slot + 2] = n_hat
    if object_slot is not None:
        if object_slot == agent_slot or not 0 <= object_slot < n_agents:
            raise IndexError(f"invalid object_slot {object_slot}")
        coeffs[2 * object_slot : 2 * object_slot + 2] = -n_hat
    rhs = -lf_psi1 - gains.alpha2 * psi1
    return CbfEvaluation(h, h_dot, psi1, LinearInequality(coeffs, rhs), lf_psi1)


def wall_rows(
    agent: AgentState,
    wall_y: float,
    side: int,
    gains: CbfGains,
    slot: int,
    n_agents: int,
) -> CbfEvaluation:
    """Halfspace barrier for a wall parallel to the x axis.

    ``side=+1`` keeps the agent below ``wall_y``, ``side=-1`` above. The
    agent's body radius is subtracted from the clearance.
    """
    if side not in (1, -1):
        raise ValueError(f"side must be +1 or -1, got {side}")
    if not 0 <= slot < n_agents:
        raise IndexError(f"slot {slot} outside [0, {n_agents})")
    h = side * (wall_y - agent.position[1]) - agent.body_radius
    h_dot = -side * float(agent.velocity[1])
    psi1 = h_dot + gains.alpha1 * h
    lf_psi1 = gains.alpha1 * h_dot
    coeffs = np.zeros(2 * n_agents)
    coeffs[2 * slot + 1] = -side
    rhs = -lf_psi1 - gains.alpha2 * psi1
    return CbfEvaluation(h, h_dot, psi1, LinearInequality(coeffs, rhs), lf_psi1)


def stack_rows(evaluations: Sequence[CbfEvaluation], dim: Optional[int] = None):
    """Stack rows into ``(G, b)`` with ``G @ x >= b``."""
    if not evaluations:
        if dim is None:
            raise ValueError("dim is required for an empty row set")
        return np.zeros((0, dim)), np.zeros(0)
    n = evaluations[0].row.coeffs.size
    if dim is not None and dim != n:
        raise ValueError(f"rows have dimension {n}, expected {dim}")
    G = np.empty((len(evaluations), n))
    b = np.empty(len(evaluations))
    for k, ev in enumerate(evaluations):
        if ev.row.coeffs.size != n:
            raise ValueError(f"row {k} has dimension {ev.row.coeffs.size}, expected {n}")
        G[k] = ev.row.coeffs
        b[k] = ev.row.rhs
    return G, b
