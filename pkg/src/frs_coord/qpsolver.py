"""Dense strictly convex QP solver shared by the safety filter and the MPC.

Problems have the form::

    minimize    0.5 x'Hx + c'x
    subject to  A x >= b
                lower <= x <= upper

The iteration is a dual active-set method (Goldfarb-Idnani). The hot loop
lives in the compiled ``_qpcore`` extension when it is importable; set
``FRS_COORD_PURE_PYTHON=1`` to force the NumPy fallback.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import _qp_fallback

try:
    if os.environ.get("FRS_COORD_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure python forced")
    from . import _qpcore
except ImportError:  # pragma: no cover - depends on build
    _qpcore = None

KERNEL = "cython" if _qpcore is not None else "python"


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


_STATUS = {
    _qp_fallback.OPTIMAL: Status.OPTIMAL,
    _qp_fallback.INFEASIBLE: Status.INFEASIBLE,
    _qp_fallback.MAX_ITER: Status.MAX_ITER,
}


@dataclass
class QpProblem:
    hessian: np.ndarray
    linear: np.ndarray
    ineq_matrix: Optional[np.ndarray] = None
    ineq_rhs: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        self.linear = np.asarray(self.linear, dtype=float).reshape(-1)
        n = self.linear.size
        if self.hessian.shape != (n, n):
            raise ValueError(f"hessian shape {self.hessian.shape} does not match n={n}")
        scale = max(1.0, float(np.abs(self.hessian).max(initial=0.0)))
        if n and float(np.abs(self.hessian - self.hessian.T).max()) > 1e-12 * scale:
            raise ValueError("hessian is not symmetric")
        if self.ineq_matrix is None:
            self.ineq_matrix = np.zeros((0, n))
            self.ineq_rhs = np.zeros(0)
        self.ineq_matrix = np.asarray(self.ineq_matrix, dtype=float).reshape(-1, n)
        self.ineq_rhs = np.asarray(self.ineq_rhs, dtype=float).reshape(-1)
        if self.ineq_rhs.size != self.ineq_matrix.shape[0]:
            raise ValueError("ineq_rhs length does not match ineq_matrix rows")
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(n)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(n)

    @property
    def n(self) -> int:
        return self.linear.size

    @property
    def m(self) -> int:
        return self.ineq_rhs.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.linear @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    duals: np.ndarray
    status: Status
    kkt_residual: float
    box_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0

    @property
    def active_rows(self) -> np.ndarray:
        return np.flatnonzero(self.duals > 0.0)


def _stack_rows(problem: QpProblem):
    """Append finite box bounds as rows; return rows, rhs and the row map."""
    n = problem.n
    lo_idx = np.flatnonzero(np.isfinite(problem.lower))
    up_idx = np.flatnonzero(np.isfinite(problem.upper))
    A = np.zeros((problem.m + lo_idx.size + up_idx.size, n))
    A[: problem.m] = problem.ineq_matrix
    b = np.empty(A.shape[0])
    b[: problem.m] = problem.ineq_rhs
    row = problem.m
    A[row + np.arange(lo_idx.size), lo_idx] = 1.0
    b[row : row + lo_idx.size] = problem.lower[lo_idx]
    row += lo_idx.size
    A[row + np.arange(up_idx.size), up_idx] = -1.0
    b[row : row + up_idx.size] = -problem.upper[up_idx]
    return A, b, lo_idx, up_idx


def _warm_rows(warm_start, problem, lo_idx, up_idx):
    if warm_start is None:
        return []
    if isinstance(warm_start, QpSolution):
        rows = list(np.flatnonzero(warm_start.duals > 0.0))
        bd = warm_start.box_duals
        if bd.size == problem.n:
            pos_lo = {k: i for i, k in enumerate(lo_idx)}
            pos_up = {k: i for i, k in enumerate(up_idx)}
            for k in np.flatnonzero(bd > 0.0):
                if k in pos_lo:
                    rows.append(problem.m + pos_lo[k])
            for k in np.flatnonzero(bd < 0.0):
                if k in pos_up:
                    rows.append(problem.m + lo_idx.size + pos_up[k])
        return rows
    return [int(j) for j in warm_start]


def solve(
    problem: QpProblem,
    warm_start: Union[QpSolution, Sequence[int], None] = None,
    max_iter: int = 1000,
    tol: float = 1e-9,
    kernel: Optional[str] = None,
) -> QpSolution:
    """Solve ``problem``.

    ``warm_start`` is a previous solution or a list of row indices believed
    active; it seeds the working set. ``kernel`` selects ``"cython"`` or
    ``"python"`` explicitly (default: whichever was imported).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A, b, lo_idx, up_idx = _stack_rows(problem)
    warm = _warm_rows(warm_start, problem, lo_idx, up_idx)
    kernel = kernel or KERNEL
    if kernel == "cython":
        if _qpcore is None:
            raise RuntimeError("compiled kernel is not available")
        x, lam, code, iters = _qpcore.dual_active_set(
            np.ascontiguousarray(problem.hessian),
            np.ascontiguousarray(problem.linear),
            np.ascontiguousarray(A),
            np.ascontiguousarray(b),
            np.asarray(warm, dtype=np.intp),
            int(max_iter),
            float(tol),
        )
    else:
        x, lam, code, iters = _qp_fallback.dual_active_set(
            problem.hessian, problem.linear, A, b, warm, max_iter, tol
        )
    if code == _qp_fallback.NOT_PD:
        raise ValueError("hessian is not positive definite")
    x = np.asarray(x)
    lam = np.asarray(lam)
    m = problem.m
    box = np.zeros(problem.n)
    box[lo_idx] += lam[m : m + lo_idx.size]
    box[up_idx] -= lam[m + lo_idx.size :]
    sol = QpSolution(
        x=x,
        duals=lam[:m].copy(),
        status=_STATUS[code],
        kkt_residual=0.0,
        box_duals=box,
        iterations=int(iters),
    )
    sol.kkt_residual = kkt_residual(problem, sol)
    return sol


def kkt_residual(problem: QpProblem, solution: QpSolution) -> float:
    """Largest of the stationarity, primal, dual and complementarity residuals."""
    x = np.asarray(solution.x, dtype=float)
    lam = np.asarray(solution.duals, dtype=float)
    mu = solution.box_duals if solution.box_duals.size == problem.n else np.zeros(problem.n)
    A = problem.ineq_matrix
    slack = A @ x - problem.ineq_rhs
    stat = problem.hessian @ x + problem.linear - A.T @ lam - mu
    res = [
        np.abs(stat).max(initial=0.0),
        (-slack).max(initial=0.0),
        (problem.lower - x).max(initial=0.0),
        (x - problem.upper).max(initial=0.0),
        (-lam).max(initial=0.0),
        np.abs(lam * slack).max(initial=0.0),
    ]
    lo_act = mu > 0.0
    up_act = mu < 0.0
    if lo_act.any():
        res.append(float(np.abs(mu[lo_act] * (x[lo_act] - problem.lower[lo_act])).max()))
    if up_act.any():
        res.append(float(np.abs(mu[up_act] * (problem.upper[up_act] - x[up_act])).max()))
    out = float(max(res))
    return out if np.isfinite(out) else float("inf")
