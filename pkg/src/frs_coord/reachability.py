"""Planar forward reachable sets and regions of potential collision.

Agents with a known feedback law get a disk over-approximation of their
reachable positions; obstacles known only through their current velocity get
an axis-aligned box. Two sets are compared along the line joining the two
objects, and the overlap (if any) is enclosed in a ball that the barrier
functions in :mod:`frs_coord.hocbf` keep agents out of.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np


class DomainError(ValueError):
    """Input outside an operation's domain (non-finite, negative, non-unit)."""


class ProximityError(RuntimeError):
    """Case-2 geometry requested for disks that do not overlap."""


def _vec2(v, name):
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (2,):
        raise DomainError(f"{name} must be a 2-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} must be finite")
    return a


def _scalar(x, name, minimum=None):
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite")
    if minimum is not None and x < minimum:
        raise DomainError(f"{name} must be >= {minimum}, got {x}")
    return x


@dataclass(frozen=True, eq=False)
class AgentState:
    """Planar double-integrator agent with a bounded acceleration."""

    position: np.ndarray
    velocity: np.ndarray
    accel_limit: float = 2.0
    body_radius: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "position", _vec2(self.position, "position"))
        object.__setattr__(self, "velocity", _vec2(self.velocity, "velocity"))
        object.__setattr__(self, "accel_limit", _scalar(self.accel_limit, "accel_limit", 0.0))
        object.__setattr__(self, "body_radius", _scalar(self.body_radius, "body_radius", 0.0))


@dataclass(frozen=True, eq=False)
class ObstacleState:
    """Moving object without a known control law.

    ``velocity`` is the current (signed) velocity; ``velocity_bound`` is the
    componentwise speed bound used to grow the reachable box and defaults
    to ``|velocity|``.
    """

    position: np.ndarray
    velocity_bound: np.ndarray = None
    body_radius: float = 0.3
    velocity: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "position", _vec2(self.position, "position"))
        vel = np.zeros(2) if self.velocity is None else _vec2(self.velocity, "velocity")
        object.__setattr__(self, "velocity", vel)
        bound = np.abs(vel) if self.velocity_bound is None else _vec2(self.velocity_bound, "velocity_bound")
        if np.any(bound < 0.0):
            raise DomainError("velocity_bound must be componentwise >= 0")
        object.__setattr__(self, "velocity_bound", bound)
        object.__setattr__(self, "body_radius", _scalar(self.body_radius, "body_radius", 0.0))


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec2(self.center, "center"))
        object.__setattr__(self, "radius", _scalar(self.radius, "radius", 0.0))

    def contains(self, points, tol=1e-12):
        pts = np.atleast_2d(points)
        return np.linalg.norm(pts - self.center, axis=1) <= self.radius + tol


@dataclass(frozen=True, eq=False)
class Box:
    center: np.ndarray
    half_widths: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _vec2(self.center, "center"))
        hw = _vec2(self.half_widths, "half_widths")
        if np.any(hw < 0.0):
            raise DomainError("half_widths must be >= 0")
        object.__setattr__(self, "half_widths", hw)

    def contains(self, points, tol=1e-12):
        pts = np.atleast_2d(points)
        return np.all(np.abs(pts - self.center) <= self.half_widths + tol, axis=1)


ReachSet = Union[Ball, Box]


@dataclass(frozen=True, eq=False)
class PcBall:
    """Ball enclosing the region of potential collision."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec2(self.center, "center"))
        object.__setattr__(self, "radius", _scalar(self.radius, "radius", 0.0))

    def contains(self, points, tol=1e-12):
        pts = np.atleast_2d(points)
        return np.linalg.norm(pts - self.center, axis=1) <= self.radius + tol


class ProximityCase(enum.IntEnum):
    CASE1 = 1
    CASE2 = 2


def obstacle_reach_box(obs: ObstacleState, horizon: float) -> Box:
    """Box swept by the obstacle under any velocity within its bound."""
    horizon = _scalar(horizon, "horizon", 0.0)
    return Box(obs.position, horizon * obs.velocity_bound)


def agent_reach_ball(agent: AgentState, horizon: float) -> Ball:
    """Disk containing every position reachable with ``|accel| <= accel_limit``."""
    horizon = _scalar(horizon, "horizon", 0.0)
    speed = float(np.hypot(*agent.velocity))
    return Ball(agent.position, speed * horizon + 0.5 * agent.accel_limit * horizon * horizon)


def projected_reach_max(rset: ReachSet, origin, direction) -> float:
    """Support function of ``rset`` along ``direction``, measured from ``origin``."""
    origin = _vec2(origin, "origin")
    u = _vec2(direction, "direction")
    if abs(math.hypot(u[0], u[1]) - 1.0) > 1e-9:
        raise DomainError("direction must be a unit vector")
    base = float((rset.center - origin) @ u)
    if isinstance(rset, Ball):
        return base + rset.radius
    if isinstance(rset, Box):
        return base + float(rset.half_widths @ np.abs(u))
    raise TypeError(f"unsupported reach set {type(rset).__name__}")


def classify_proximity(reach_i: float, reach_j: float, dist: float) -> ProximityCase:
    reach_i = _scalar(reach_i, "reach_i", 0.0)
    reach_j = _scalar(reach_j, "reach_j", 0.0)
    dist = _scalar(dist, "dist", 0.0)
    # equality is Case 1: the reach sets only touch
    return ProximityCase.CASE1 if reach_i + reach_j <= dist else ProximityCase.CASE2


def pc_ball_case1(obs_position, reach_j: float, margin: float) -> PcBall:
    reach_j = _scalar(reach_j, "reach_j", 0.0)
    margin = _scalar(margin, "margin", 0.0)
    return PcBall(obs_position, reach_j + margin)


def pc_ball_case2(disk_i: Ball, disk_j: Ball, margin: float) -> PcBall:
    """Enclosing ball of the lens ``disk_i & disk_j``, inflated by ``margin``.

    The center sits at the midpoint of the lens's extent along the line of
    centers; the radius is the farthest of the two axial endpoints and the
    two circle intersection points.
    """
    margin = _scalar(margin, "margin", 0.0)
    ci, cj = disk_i.center, disk_j.center
    r1, r2 = disk_i.radius, disk_j.radius
    delta = cj - ci
    d = float(math.hypot(delta[0], delta[1]))
    if d > r1 + r2:
        raise ProximityError(f"disks do not overlap: d={d:.6g} > {r1 + r2:.6g}")
    if d + r2 <= r1:
        return PcBall(cj, r2 + margin)
    if d + r1 <= r2:
        return PcBall(ci, r1 + margin)
    u = delta / d
    near = d - r2
    mid = 0.5 * (near + r1)
    x = (d * d + r1 * r1 - r2 * r2) / (2.0 * d)
    a = math.sqrt(max(r1 * r1 - x * x, 0.0))
    radius = max(r1 - mid, math.hypot(x - mid, a))
    return PcBall(ci + mid * u, radius + margin)
