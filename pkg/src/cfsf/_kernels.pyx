# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: quantile-regression path solver and indicator counters.

Every function here has a line-for-line counterpart in ``_fallback.py``.
"""

import numpy as np

from libc.math cimport fabs, ceil
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_lapack cimport dgetrf, dgetri


cdef int _invert(double* a, int k, int* ipiv, double* work, int lwork) noexcept nogil:
    # In-place inverse of a row-major k x k matrix (LAPACK sees the
    # transpose, whose inverse read back row-major is the inverse we want).
    cdef int info = 0
    dgetrf(&k, &k, a, &k, ipiv, &info)
    if info != 0:
        return info
    dgetri(&k, a, &k, ipiv, work, &lwork, &info)
    return info


cdef inline void _swap(double* t, double* c, Py_ssize_t* idx, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef double tmp
    cdef Py_ssize_t itmp
    tmp = t[i]; t[i] = t[j]; t[j] = tmp
    tmp = c[i]; c[i] = c[j]; c[j] = tmp
    itmp = idx[i]; idx[i] = idx[j]; idx[j] = itmp


cdef Py_ssize_t _weighted_select(double* t, double* c, Py_ssize_t* idx,
                                 Py_ssize_t m, double need) noexcept nogil:
    """Position of the smallest t whose cumulative c (ascending t) reaches need."""
    cdef Py_ssize_t lo = 0, hi = m, lt, gt, i, mid, q
    cdef double p, a, b, cc, sl, se
    while lo < hi:
        mid = lo + (hi - lo) // 2
        a = t[lo]; b = t[mid]; cc = t[hi - 1]
        if a < b:
            if b < cc:
                p = b
            elif a < cc:
                p = cc
            else:
                p = a
        else:
            if a < cc:
                p = a
            elif b < cc:
                p = cc
            else:
                p = b
        lt = lo; i = lo; gt = hi
        while i < gt:
            if t[i] < p:
                _swap(t, c, idx, lt, i)
                lt += 1
                i += 1
            elif t[i] > p:
                gt -= 1
                _swap(t, c, idx, i, gt)
            else:
                i += 1
        sl = 0.0
        for i in range(lo, lt):
            sl += c[i]
        if sl >= need:
            hi = lt
            continue
        need -= sl
        se = 0.0
        for i in range(lt, gt):
            se += c[i]
        if se >= need:
            for q in range(lt, gt):
                need -= c[q]
                if need <= 0.0:
                    return q
            return gt - 1
        need -= se
        lo = gt
    return -1


def qr_path(double[:, ::1] X, double[::1] y, double[::1] w, double[::1] taus,
            Py_ssize_t[::1] basis0, Py_ssize_t max_iter, double tol):
    """Weighted quantile regression at each level in ``taus`` (increasing).

    Barrodale-Roberts exterior-point simplex with a weighted-median line
    search, warm-started from the optimal basis of the previous level.

    Returns ``(coef, iterations, status, violation, objective, basis)`` where
    status is 0 (optimal), 1 (iteration cap), 2 (unbounded edge),
    3 (singular basis) or -1 (not attempted: the sweep stops at the first
    failure) and ``basis`` is the last basis reached.
    """
    cdef Py_ssize_t n = X.shape[0], k = X.shape[1], M = taus.shape[0]
    cdef Py_ssize_t i, j, l, m, it, jmax, pos, ncand, enter
    cdef double tau, s, viol, vmax, vup, vlo, need, ri, ai, acc, sumw, ymax, ztol
    cdef int ki = <int>k, info, lwork = <int>(64 * k)

    coef_arr = np.zeros((M, k))
    iters_arr = np.zeros(M, dtype=np.intp)
    status_arr = np.zeros(M, dtype=np.intc)
    viol_arr = np.zeros(M)
    obj_arr = np.zeros(M)
    basis_arr = np.empty(k, dtype=np.intp)
    cdef double[:, ::1] coef = coef_arr
    cdef Py_ssize_t[::1] iters = iters_arr
    cdef int[::1] status = status_arr
    cdef double[::1] violation = viol_arr
    cdef double[::1] objective = obj_arr
    cdef Py_ssize_t[::1] basis = basis_arr

    cdef double* H = <double*>malloc(k * k * sizeof(double))
    cdef double* work = <double*>malloc(lwork * sizeof(double))
    cdef int* ipiv = <int*>malloc(k * sizeof(int))
    cdef double* b = <double*>malloc(k * sizeof(double))
    cdef double* g = <double*>malloc(k * sizeof(double))
    cdef double* xi = <double*>malloc(k * sizeof(double))
    cdef double* d = <double*>malloc(k * sizeof(double))
    cdef double* r = <double*>malloc(n * sizeof(double))
    cdef double* ct = <double*>malloc(n * sizeof(double))
    cdef double* cw = <double*>malloc(n * sizeof(double))
    cdef Py_ssize_t* cidx = <Py_ssize_t*>malloc(n * sizeof(Py_ssize_t))
    cdef char* inb = <char*>malloc(n * sizeof(char))

    try:
        with nogil:
            sumw = 0.0
            ymax = 0.0
            for i in range(n):
                inb[i] = 0
                sumw += w[i]
                if fabs(y[i]) > ymax:
                    ymax = fabs(y[i])
            ztol = 1e-12 * (1.0 + ymax)
            for j in range(k):
                basis[j] = basis0[j]
                inb[basis0[j]] = 1

            # factor the starting basis
            for j in range(k):
                for l in range(k):
                    H[j * k + l] = X[basis[j], l]
            info = _invert(H, ki, ipiv, work, lwork)

            for m in range(M):
                status[m] = -1
            for m in range(M):
                tau = taus[m]
                if info != 0:
                    status[m] = 3
                    break
                it = 0
                while True:
                    # vertex through the basis rows
                    for l in range(k):
                        acc = 0.0
                        for j in range(k):
                            acc += H[l * k + j] * y[basis[j]]
                        b[l] = acc
                    for l in range(k):
                        g[l] = 0.0
                    for i in range(n):
                        if inb[i]:
                            r[i] = 0.0
                            continue
                        acc = y[i]
                        for l in range(k):
                            acc -= X[i, l] * b[l]
                        r[i] = acc
                        if acc < -ztol:
                            s = w[i] * (tau - 1.0)
                        else:
                            s = w[i] * tau
                        for l in range(k):
                            g[l] += s * X[i, l]
                    # xi = H^T g
                    vmax = 0.0
                    jmax = -1
                    s = 0.0
                    for j in range(k):
                        acc = 0.0
                        for l in range(k):
                            acc += H[l * k + j] * g[l]
                        xi[j] = acc
                        vup = acc - (1.0 - tau) * w[basis[j]]
                        vlo = -tau * w[basis[j]] - acc
                        if vup > vmax:
                            vmax = vup; jmax = j; s = 1.0
                        if vlo > vmax:
                            vmax = vlo; jmax = j; s = -1.0
                    if vmax <= tol * sumw:
                        status[m] = 0
                        break
                    if it >= max_iter:
                        status[m] = 1
                        break
                    # edge direction keeping the other basis residuals at zero
                    for l in range(k):
                        d[l] = s * H[l * k + jmax]
                    ncand = 0
                    for i in range(n):
                        if inb[i]:
                            continue
                        ai = 0.0
                        for l in range(k):
                            ai += X[i, l] * d[l]
                        ri = r[i]
                        if ri > ztol:
                            if ai <= 0.0:
                                continue
                            ct[ncand] = ri / ai
                        elif ri < -ztol:
                            if ai >= 0.0:
                                continue
                            ct[ncand] = ri / ai
                        else:
                            if ai <= 0.0:
                                continue
                            ct[ncand] = 0.0
                        cw[ncand] = w[i] * fabs(ai)
                        cidx[ncand] = i
                        ncand += 1
                    need = vmax
                    pos = _weighted_select(ct, cw, cidx, ncand, need)
                    if pos < 0:
                        status[m] = 2
                        break
                    enter = cidx[pos]
                    inb[basis[jmax]] = 0
                    basis[jmax] = enter
                    inb[enter] = 1
                    for j in range(k):
                        for l in range(k):
                            H[j * k + l] = X[basis[j], l]
                    info = _invert(H, ki, ipiv, work, lwork)
                    it += 1
                    if info != 0:
                        status[m] = 3
                        break
                iters[m] = it
                violation[m] = vmax / sumw
                for l in range(k):
                    coef[m, l] = b[l]
                acc = 0.0
                for i in range(n):
                    if r[i] < 0.0:
                        acc += w[i] * (tau - 1.0) * r[i]
                    else:
                        acc += w[i] * tau * r[i]
                objective[m] = acc
                if status[m] != 0:
                    break
    finally:
        free(H); free(work); free(ipiv); free(b); free(g); free(xi); free(d)
        free(r); free(ct); free(cw); free(cidx); free(inb)
    return coef_arr, iters_arr, status_arr, viol_arr, obj_arr, basis_arr


def weighted_count_below(double[:, ::1] W, double[:, ::1] B, double[::1] wt,
                         double[::1] grid, bint equidistant):
    """For each grid value g: sum_i wt[i] * #{m : W[i] . B[m] <= g}."""
    cdef Py_ssize_t n = W.shape[0], k = W.shape[1], M = B.shape[0], G = grid.shape[0]
    cdef Py_ssize_t i, m, l, pos, lo, hi, mid
    cdef double q, wi, g0 = grid[0], delta = 0.0
    hist_arr = np.zeros(G + 1)
    cdef double[::1] hist = hist_arr
    if equidistant and G > 1:
        delta = (grid[G - 1] - grid[0]) / (G - 1)
    with nogil:
        for i in range(n):
            wi = wt[i]
            for m in range(M):
                q = 0.0
                for l in range(k):
                    q += W[i, l] * B[m, l]
                # pos = first index with grid[pos] >= q
                if delta > 0.0:
                    if q <= g0:
                        pos = 0
                    else:
                        pos = <Py_ssize_t>ceil((q - g0) / delta)
                        if pos > G:
                            pos = G
                    while pos > 0 and grid[pos - 1] >= q:
                        pos -= 1
                    while pos < G and grid[pos] < q:
                        pos += 1
                else:
                    lo = 0
                    hi = G
                    while lo < hi:
                        mid = (lo + hi) >> 1
                        if grid[mid] < q:
                            lo = mid + 1
                        else:
                            hi = mid
                    pos = lo
                hist[pos] += wi
    out = np.cumsum(hist_arr[:G])
    return out


def count_rows_below(double[:, ::1] R, double[:, ::1] P, double[::1] x):
    """For each row i: #{m : R[i] . P[m] <= x[i]}."""
    cdef Py_ssize_t n = R.shape[0], k = R.shape[1], M = P.shape[0]
    cdef Py_ssize_t i, m, l, cnt
    cdef double q
    out_arr = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t[::1] out = out_arr
    with nogil:
        for i in range(n):
            cnt = 0
            for m in range(M):
                q = 0.0
                for l in range(k):
                    q += R[i, l] * P[m, l]
                if q <= x[i]:
                    cnt += 1
            out[i] = cnt
    return out_arr
