# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dual active-set (Goldfarb-Idnani) kernel.

Same iteration as ``_qp_fallback.dual_active_set``; works in the
Cholesky-scaled variable ``y = L' x`` with an explicitly maintained thin QR
factorization of the scaled active normals.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

cdef enum:
    OPTIMAL = 0
    INFEASIBLE = 1
    MAX_ITER = 2
    NOT_PD = 3

cdef double DEP_TOL = 1e-12
cdef double STEP_EPS = 1e-14


cdef int _cholesky(const double[:, ::1] H, double[:, ::1] L, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(n):
        s = H[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            return 1
        L[j, j] = sqrt(s)
        for i in range(j + 1, n):
            s = H[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
        for i in range(j):
            L[i, j] = 0.0
    return 0


cdef void _forward(double[:, ::1] L, double* v, Py_ssize_t n) noexcept nogil:
    # in place: v <- L^{-1} v
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(n):
        s = v[i]
        for k in range(i):
            s -= L[i, k] * v[k]
        v[i] = s / L[i, i]


cdef void _backward_t(double[:, ::1] L, double* v, Py_ssize_t n) noexcept nogil:
    # in place: v <- L^{-T} v
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(n - 1, -1, -1):
        s = v[i]
        for k in range(i + 1, n):
            s -= L[k, i] * v[k]
        v[i] = s / L[i, i]


cdef void _solve_r(double[:, ::1] R, double* v, Py_ssize_t q) noexcept nogil:
    # in place: v <- R^{-1} v, R upper triangular
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(q - 1, -1, -1):
        s = v[i]
        for k in range(i + 1, q):
            s -= R[i, k] * v[k]
        v[i] = s / R[i, i]


cdef void _solve_rt(double[:, ::1] R, double* v, Py_ssize_t q) noexcept nogil:
    # in place: v <- R^{-T} v
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(q):
        s = v[i]
        for k in range(i):
            s -= R[k, i] * v[k]
        v[i] = s / R[i, i]


cdef int _append(double[:, ::1] Qt, double[:, ::1] R, Py_ssize_t q,
                 const double* d, double* w, double* proj, Py_ssize_t n) noexcept nogil:
    """Extend QR by column d. Writes residual to w; returns 1 if dependent."""
    cdef Py_ssize_t i, j, rep
    cdef double corr, nrm, dn
    dn = 0.0
    for i in range(n):
        w[i] = d[i]
        dn += d[i] * d[i]
    for j in range(q):
        proj[j] = 0.0
    for rep in range(2):
        for j in range(q):
            corr = 0.0
            for i in range(n):
                corr += Qt[j, i] * w[i]
            for i in range(n):
                w[i] -= corr * Qt[j, i]
            proj[j] += corr
    nrm = 0.0
    for i in range(n):
        nrm += w[i] * w[i]
    nrm = sqrt(nrm)
    if nrm <= DEP_TOL * (sqrt(dn) if dn > 1.0 else 1.0):
        return 1
    for i in range(n):
        Qt[q, i] = w[i] / nrm
    for j in range(q):
        R[j, q] = proj[j]
    for j in range(q + 1):
        R[q, j] = 0.0
    R[q, q] = nrm
    return 0


cdef Py_ssize_t _rebuild(double[:, ::1] Dt, Py_ssize_t* active, Py_ssize_t na,
                         double[:, ::1] Qt, double[:, ::1] R,
                         double* w, double* proj, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j, q = 0
    for j in range(na):
        if _append(Qt, R, q, &Dt[active[j], 0], w, proj, n) == 0:
            q += 1
    return q


def dual_active_set(const double[:, ::1] H, const double[::1] c,
                    const double[:, ::1] A, const double[::1] b,
                    const Py_ssize_t[::1] warm, int max_iter, double tol):
    """Return ``(x, lam, status, iterations)``; see the Python fallback."""
    cdef Py_ssize_t n = H.shape[0]
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t i, j, k, p, q, kk, nw, iters = 0
    cdef double s, smin, t1, t2, t, nz, sp, dd, ratio

    x_arr = np.zeros(n)
    lam_arr = np.zeros(m)
    cdef double[::1] lam = lam_arr
    L_arr = np.zeros((n, n))
    cdef double[:, ::1] L = L_arr
    if _cholesky(H, L, n):
        return x_arr, lam_arr, NOT_PD, 0

    Dt_arr = np.zeros((m, n))
    cdef double[:, ::1] Dt = Dt_arr
    y0_arr = np.zeros(n)
    cdef double[::1] y0 = y0_arr
    y_arr = np.zeros(n)
    cdef double[::1] y = y_arr
    Qt_arr = np.zeros((n + 1, n))
    cdef double[:, ::1] Qt = Qt_arr
    R_arr = np.zeros((n + 1, n + 1))
    cdef double[:, ::1] R = R_arr
    w_arr = np.zeros(n)
    cdef double[::1] w = w_arr
    proj_arr = np.zeros(n + 1)
    cdef double[::1] proj = proj_arr
    r_arr = np.zeros(n + 1)
    cdef double[::1] r = r_arr
    u_arr = np.zeros(n + 1)
    cdef double[::1] u = u_arr
    act_arr = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] active = act_arr
    W_arr = np.zeros(max(warm.shape[0], 1), dtype=np.intp)
    cdef Py_ssize_t[::1] W = W_arr
    cdef Py_ssize_t na = 0
    cdef bint ok, dup

    with nogil:
        for i in range(n):
            y0[i] = -c[i]
        _forward(L, &y0[0], n)
        for i in range(n):
            y[i] = y0[i]
        for j in range(m):
            for i in range(n):
                Dt[j, i] = A[j, i]
            _forward(L, &Dt[j, 0], n)

        # warm start
        nw = 0
        for kk in range(warm.shape[0]):
            j = warm[kk]
            if j < 0 or j >= m:
                continue
            dup = False
            for i in range(nw):
                if W[i] == j:
                    dup = True
            if not dup:
                W[nw] = j
                nw += 1
        while nw > 0:
            q = 0
            k = 0
            for kk in range(nw):
                if q < n and _append(Qt, R, q, &Dt[W[kk], 0], &w[0], &proj[0], n) == 0:
                    q += 1
                    W[k] = W[kk]
                    k += 1
            nw = k
            if nw == 0:
                break
            for kk in range(nw):
                dd = 0.0
                for i in range(n):
                    dd += Dt[W[kk], i] * y0[i]
                r[kk] = b[W[kk]] - dd
            _solve_rt(R, &r[0], nw)
            for kk in range(nw):
                proj[kk] = r[kk]
            _solve_r(R, &proj[0], nw)
            ok = True
            k = 0
            for kk in range(nw):
                if proj[kk] < 0.0:
                    ok = False
                    if proj[kk] < proj[k]:
                        k = kk
            if ok:
                for i in range(n):
                    s = y0[i]
                    for kk in range(nw):
                        s += Qt[kk, i] * r[kk]
                    y[i] = s
                for kk in range(nw):
                    active[kk] = W[kk]
                    u[kk] = proj[kk]
                na = nw
                break
            for kk in range(k, nw - 1):
                W[kk] = W[kk + 1]
            nw -= 1
        q = _rebuild(Dt, &active[0], na, Qt, R, &w[0], &proj[0], n)

        while True:
            if m == 0:
                break
            p = 0
            smin = INFINITY
            for j in range(m):
                s = -b[j]
                for i in range(n):
                    s += Dt[j, i] * y[i]
                if s < smin:
                    smin = s
                    p = j
            if smin >= -tol:
                break
            u[na] = 0.0
            while True:
                iters += 1
                if iters > max_iter:
                    break
                for j in range(na):
                    s = 0.0
                    for i in range(n):
                        s += Qt[j, i] * Dt[p, i]
                    proj[j] = s
                    r[j] = s
                for i in range(n):
                    w[i] = Dt[p, i]
                for j in range(na):
                    for i in range(n):
                        w[i] -= proj[j] * Qt[j, i]
                _solve_r(R, &r[0], na)
                t1 = INFINITY
                k = -1
                for j in range(na):
                    if r[j] > STEP_EPS:
                        ratio = u[j] / r[j]
                        if ratio < t1:
                            t1 = ratio
                            k = j
                nz = 0.0
                sp = -b[p]
                dd = 0.0
                for i in range(n):
                    nz += w[i] * w[i]
                    sp += Dt[p, i] * y[i]
                    dd += Dt[p, i] * Dt[p, i]
                if nz <= DEP_TOL * DEP_TOL * (dd if dd > 1.0 else 1.0):
                    t2 = INFINITY
                else:
                    t2 = -sp / nz
                if t1 == INFINITY and t2 == INFINITY:
                    iters = -iters - 1
                    break
                if t2 == INFINITY:
                    for j in range(na):
                        u[j] -= t1 * r[j]
                    u[na] += t1
                    for j in range(k, na):
                        active[j] = active[j + 1]
                        u[j] = u[j + 1]
                    na -= 1
                    q = _rebuild(Dt, &active[0], na, Qt, R, &w[0], &proj[0], n)
                    continue
                t = t1 if t1 < t2 else t2
                for i in range(n):
                    y[i] += t * w[i]
                for j in range(na):
                    u[j] -= t * r[j]
                u[na] += t
                if t2 <= t1:
                    if _append(Qt, R, na, &Dt[p, 0], &w[0], &proj[0], n) == 0:
                        active[na] = p
                        na += 1
                    break
                for j in range(k, na):
                    active[j] = active[j + 1]
                    u[j] = u[j + 1]
                na -= 1
                q = _rebuild(Dt, &active[0], na, Qt, R, &w[0], &proj[0], n)
            if iters > max_iter or iters < 0:
                break

    x_arr[:] = y_arr
    cdef double[::1] xv = x_arr
    if n > 0:
        _backward_t(L, &xv[0], n)
    for j in range(na):
        lam[active[j]] = u[j]
    if iters < 0:
        return x_arr, lam_arr, INFEASIBLE, -iters - 1
    if iters > max_iter:
        return x_arr, lam_arr, MAX_ITER, iters
    return x_arr, lam_arr, OPTIMAL, iters
