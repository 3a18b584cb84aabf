"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built, or when ``CFSF_BACKEND=python``.
Same algorithms and return conventions, so results agree with the compiled
path up to floating-point summation order.
"""

import numpy as np


def _weighted_select(t, c, need):
    order = np.argsort(t, kind="stable")
    cum = np.cumsum(c[order])
    pos = int(np.searchsorted(cum, need, side="left"))
    if pos >= len(order):
        return -1
    return int(order[pos])


def qr_path(X, y, w, taus, basis0, max_iter, tol):
    n, k = X.shape
    M = len(taus)
    coef = np.zeros((M, k))
    iters = np.zeros(M, dtype=np.intp)
    status = np.full(M, -1, dtype=np.intc)
    violation = np.zeros(M)
    objective = np.zeros(M)

    sumw = w.sum()
    ztol = 1e-12 * (1.0 + np.abs(y).max())
    basis = np.array(basis0, dtype=np.intp)
    inb = np.zeros(n, dtype=bool)
    inb[basis] = True
    try:
        H = np.linalg.inv(X[basis])
        singular = False
    except np.linalg.LinAlgError:
        singular = True

    for m, tau in enumerate(taus):
        if singular:
            status[m] = 3
            break
        it = 0
        while True:
            b = H @ y[basis]
            r = y - X @ b
            r[inb] = 0.0
            psi = np.where(r < -ztol, tau - 1.0, tau) * w
            psi[inb] = 0.0
            g = X.T @ psi
            xi = H.T @ g
            wb = w[basis]
            vup = xi - (1.0 - tau) * wb
            vlo = -tau * wb - xi
            j_up = int(np.argmax(vup))
            j_lo = int(np.argmax(vlo))
            vmax = max(vup[j_up], vlo[j_lo], 0.0)
            if vmax <= tol * sumw:
                status[m] = 0
                break
            if it >= max_iter:
                status[m] = 1
                break
            if vup[j_up] >= vlo[j_lo]:
                jmax, s = j_up, 1.0
            else:
                jmax, s = j_lo, -1.0
            d = s * H[:, jmax]
            a = X @ d
            out = ~inb
            pos_side = out & (r > ztol) & (a > 0.0)
            neg_side = out & (r < -ztol) & (a < 0.0)
            zero_side = out & (np.abs(r) <= ztol) & (a > 0.0)
            cand = np.flatnonzero(pos_side | neg_side | zero_side)
            t = np.where(zero_side[cand], 0.0, r[cand] / np.where(a[cand] == 0.0, 1.0, a[cand]))
            c = w[cand] * np.abs(a[cand])
            pick = _weighted_select(t, c, vmax)
            if pick < 0:
                status[m] = 2
                break
            enter = cand[pick]
            inb[basis[jmax]] = False
            basis[jmax] = enter
            inb[enter] = True
            it += 1
            try:
                H = np.linalg.inv(X[basis])
            except np.linalg.LinAlgError:
                singular = True
                status[m] = 3
                break
        iters[m] = it
        violation[m] = vmax / sumw
        coef[m] = b
        objective[m] = np.sum(w * np.where(r < 0.0, (tau - 1.0) * r, tau * r))
        if status[m] != 0:
            break
    return coef, iters, status, violation, objective, basis


def weighted_count_below(W, B, wt, grid, equidistant):
    G = len(grid)
    q = W @ B.T
    pos = np.searchsorted(grid, q.ravel(), side="left")
    hist = np.bincount(pos, weights=np.repeat(wt, B.shape[0]), minlength=G + 1)
    return np.cumsum(hist[:G])


def count_rows_below(R, P, x):
    q = R @ P.T
    return np.count_nonzero(q <= x[:, None], axis=1).astype(np.intp)
