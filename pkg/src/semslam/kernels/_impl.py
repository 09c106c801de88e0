"""Reference implementations of the hot numeric kernels.

Written in nopython-compatible style so the same source can be compiled
with numba or run as plain numpy/python (see package __init__).
"""

import numpy as np

BIG = 1e18
_INF = 1e30


def lap_solve(cost):
    """Rectangular linear assignment (rows <= cols) by shortest augmenting paths.

    Returns (row_to_col, u, v, total). Cells >= BIG/2 are treated as
    forbidden; if the optimum is forced through one, total reflects it and
    the caller should treat the problem as infeasible.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, _INF)
        used = np.zeros(m + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = _INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] > 0:
            row_to_col[p[j] - 1] = j - 1
    total = 0.0
    for i in range(n):
        total += cost[i, row_to_col[i]]
    return row_to_col, u[1:], v[1:], total


def systematic_resample(weights, n, u0):
    """Systematic resampling: n probes at (u0 + i) / n over the weight CDF.

    weights must be normalized; u0 in [0, 1). Returns selected indices.
    """
    k = weights.shape[0]
    out = np.empty(n, dtype=np.int64)
    cum = 0.0
    j = -1
    for i in range(n):
        target = (u0 + i) / n
        while cum < target and j < k - 1:
            j += 1
            cum += weights[j]
        if j < 0:
            j = 0
        out[i] = j
    return out


def ransac_best_mask(src, dst, picks, tol):
    """RANSAC consensus for a rigid fit dst ~ R @ src + t.

    picks holds precomputed minimal-sample index triplets (one row per
    iteration); sampling lives with the caller so both backends follow the
    same random stream. Returns the best inlier mask and its count.
    Terminates early at 99.9% confidence for the best ratio seen so far.
    """
    n = src.shape[0]
    iters = picks.shape[0]
    best_count = -1
    best_mask = np.zeros(n, dtype=np.bool_)
    needed = iters
    for it in range(iters):
        if it >= needed:
            break
        i0, i1, i2 = picks[it, 0], picks[it, 1], picks[it, 2]
        ax = src[i1, 0] - src[i0, 0]
        ay = src[i1, 1] - src[i0, 1]
        az = src[i1, 2] - src[i0, 2]
        bx = src[i2, 0] - src[i0, 0]
        by = src[i2, 1] - src[i0, 1]
        bz = src[i2, 2] - src[i0, 2]
        cx = ay * bz - az * by
        cy = az * bx - ax * bz
        cz = ax * by - ay * bx
        if cx * cx + cy * cy + cz * cz < 1e-18:
            continue  # collinear minimal sample
        cs = (src[i0] + src[i1] + src[i2]) / 3.0
        cd = (dst[i0] + dst[i1] + dst[i2]) / 3.0
        H = np.zeros((3, 3))
        for idx in (i0, i1, i2):
            H += np.outer(src[idx] - cs, dst[idx] - cd)
        U, S, Vt = np.linalg.svd(H)
        d = np.linalg.det(Vt.T @ U.T)
        D = np.eye(3)
        D[2, 2] = 1.0 if d >= 0.0 else -1.0
        R = Vt.T @ D @ U.T
        t = cd - R @ cs
        count = 0
        mask = np.zeros(n, dtype=np.bool_)
        tol2 = tol * tol
        for i in range(n):
            e = R @ src[i] + t - dst[i]
            if e[0] * e[0] + e[1] * e[1] + e[2] * e[2] <= tol2:
                mask[i] = True
                count += 1
        if count > best_count:
            best_count = count
            best_mask = mask
            if count == n:
                break
            w = count / n
            fail = 1.0 - w * w * w
            if fail < 1e-12:
                fail = 1e-12
            log_fail = np.log(fail)
            if log_fail < 0.0:
                cand = int(np.ceil(np.log(1e-3) / log_fail))
                if cand < needed:
                    needed = cand
                if needed <= it:
                    needed = it + 1
    return best_mask, best_count


def mahalanobis_sq(diffs, prec):
    """Squared Mahalanobis norms of row vectors under precision matrix prec."""
    n = diffs.shape[0]
    out = np.empty(n)
    for i in range(n):
        d = diffs[i]
        s = 0.0
        for a in range(3):
            for b in range(3):
                s += d[a] * prec[a, b] * d[b]
        out[i] = s
    return out
