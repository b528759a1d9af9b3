"""Pure-Python dual active-set kernel (Goldfarb-Idnani).

Solves ``min 0.5 x'Hx + c'x  s.t.  A x >= b`` for strictly convex ``H``.
The compiled ``_qpcore`` extension implements the same iteration; this
module is used when the extension is unavailable.
"""

import numpy as np
from scipy.linalg import solve_triangular

OPTIMAL = 0
INFEASIBLE = 1
MAX_ITER = 2
NOT_PD = 3

_DEP_TOL = 1e-12
_STEP_EPS = 1e-14


def _append_column(Q, R, d):
    """Extend the thin QR factorization ``Q R`` by column ``d``.

    Returns ``(Q, R, w)`` where ``w`` is the residual of ``d`` against the
    old ``Q`` (before normalization) or ``None`` if ``d`` is dependent.
    """
    q = Q.shape[1]
    w = d.copy()
    proj = np.zeros(q)
    # two passes of Gram-Schmidt keep Q orthonormal to working precision
    for _ in range(2):
        if q:
            corr = Q.T @ w
            w -= Q @ corr
            proj += corr
    nrm = np.sqrt(w @ w)
    if nrm <= _DEP_TOL * max(1.0, np.sqrt(d @ d)):
        return Q, R, None
    Qn = np.empty((Q.shape[0], q + 1))
    Qn[:, :q] = Q
    Qn[:, q] = w / nrm
    Rn = np.zeros((q + 1, q + 1))
    Rn[:q, :q] = R
    Rn[:q, q] = proj
    Rn[q, q] = nrm
    return Qn, Rn, w


def _rebuild(D, active):
    n = D.shape[0]
    Q = np.zeros((n, 0))
    R = np.zeros((0, 0))
    for j in active:
        Q, R, _ = _append_column(Q, R, D[:, j])
    return Q, R


def dual_active_set(H, c, A, b, warm, max_iter, tol):
    """Run the dual active-set iteration.

    Returns ``(x, lam, status, iterations)``; ``lam`` holds one
    nonnegative multiplier per row of ``A``.
    """
    n = H.shape[0]
    m = A.shape[0]
    lam = np.zeros(m)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return np.zeros(n), lam, NOT_PD, 0

    y0 = -solve_triangular(L, c, lower=True)
    D = solve_triangular(L, A.T, lower=True) if m else np.zeros((n, 0))
    y = y0.copy()

    active = []
    u = np.zeros(0)
    Q = np.zeros((n, 0))
    R = np.zeros((0, 0))

    # warm start: seed the working set with the previous active rows,
    # discarding dependent rows and rows whose multiplier turns negative
    W = []
    for j in warm:
        j = int(j)
        if 0 <= j < m and j not in W:
            W.append(j)
    while W:
        Q = np.zeros((n, 0))
        R = np.zeros((0, 0))
        kept = []
        for j in W:
            Qn, Rn, w = _append_column(Q, R, D[:, j])
            if w is not None:
                Q, R = Qn, Rn
                kept.append(j)
        W = kept
        if not W:
            break
        rhs = b[W] - D[:, W].T @ y0
        v = solve_triangular(R, rhs, trans="T", lower=False)
        uw = solve_triangular(R, v, lower=False)
        if np.all(uw >= 0.0):
            y = y0 + Q @ v
            active = W
            u = uw
            break
        W.pop(int(np.argmin(uw)))
    if not active:
        Q = np.zeros((n, 0))
        R = np.zeros((0, 0))

    def primal(yv):
        return solve_triangular(L, yv, trans="T", lower=True)

    iters = 0
    while True:
        if m == 0:
            return primal(y), lam, OPTIMAL, iters
        s = D.T @ y - b
        p = int(np.argmin(s))
        if s[p] >= -tol:
            x = primal(y)
            lam[active] = u
            return x, lam, OPTIMAL, iters
        u_plus = np.append(u, 0.0)
        while True:
            iters += 1
            if iters > max_iter:
                lam[active] = u_plus[: len(active)]
                return primal(y), lam, MAX_ITER, iters
            d = D[:, p]
            q = len(active)
            if q:
                proj = Q.T @ d
                zt = d - Q @ proj
                r = solve_triangular(R, proj, lower=False)
            else:
                zt = d.copy()
                r = np.zeros(0)
            t1 = np.inf
            k = -1
            for j in range(q):
                if r[j] > _STEP_EPS:
                    ratio = u_plus[j] / r[j]
                    if ratio < t1:
                        t1 = ratio
                        k = j
            nz = zt @ zt
            sp = d @ y - b[p]
            if nz <= _DEP_TOL * _DEP_TOL * max(1.0, d @ d):
                t2 = np.inf
            else:
                t2 = -sp / nz
            if t1 == np.inf and t2 == np.inf:
                lam[active] = u_plus[:q]
                return primal(y), lam, INFEASIBLE, iters
            if t2 == np.inf:
                u_plus[:q] -= t1 * r
                u_plus[q] += t1
                del active[k]
                u_plus = np.delete(u_plus, k)
                Q, R = _rebuild(D, active)
                continue
            t = min(t1, t2)
            y = y + t * zt
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t2 <= t1:
                Qn, Rn, w = _append_column(Q, R, d)
                if w is not None:
                    Q, R = Qn, Rn
                    active.append(p)
                    u = u_plus
                else:
                    u = u_plus[:q]
                break
            del active[k]
            u_plus = np.delete(u_plus, k)
            Q, R = _rebuild(D, active)
