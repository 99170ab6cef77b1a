# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; same signatures and semantics as ``_pykernels``.

Every reduction runs sequentially in a fixed order, so results are bitwise
reproducible regardless of how callers parallelise around them.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"

cdef double DEGENERATE_STD = 1e-10

cdef enum:
    F_REGRESSION = 0
    F_STARVED = 1
    F_DEGENERATE = 2
    F_EMPTY = 3

WLR_REGRESSION = F_REGRESSION
WLR_STARVED = F_STARVED
WLR_DEGENERATE = F_DEGENERATE
WLR_EMPTY = F_EMPTY


cdef inline void _lap(const long long[:, ::1] nbr, const double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = x.shape[0]
    cdef long long q
    cdef double s
    for i in range(n):
        s = 4.0 * x[i]
        for j in range(4):
            q = nbr[i, j]
            if q >= 0:
                s -= x[q]
        out[i] = s


cdef inline double _dot(const double[::1] a, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


def laplacian_apply(nbr, x):
    cdef const long long[:, ::1] nb = np.ascontiguousarray(nbr, dtype=np.int64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(xv.shape[0])
    _lap(nb, xv, out)
    return out


def cg_solve(nbr, rhs, x0, double tol, long long max_iters):
    cdef const long long[:, ::1] nb = np.ascontiguousarray(nbr, dtype=np.int64)
    cdef const double[::1] b = np.ascontiguousarray(rhs, dtype=np.float64)
    x_arr = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] x = x_arr
    cdef Py_ssize_t n = b.shape[0], i
    r_arr = np.empty(n)
    p_arr = np.empty(n)
    ap_arr = np.empty(n)
    cdef double[::1] r = r_arr
    cdef double[::1] p = p_arr
    cdef double[::1] ap = ap_arr
    cdef double bb, bnorm, rr, rr_new, alpha, beta
    cdef long long iters = 0

    bb = _dot(b, b)
    if bb == 0.0:
        return np.zeros(n), 0, 0.0
    bnorm = sqrt(bb)
    with nogil:
        while True:
            _lap(nb, x, r)
            for i in range(n):
                r[i] = b[i] - r[i]
            rr = _dot(r, r)
            if sqrt(rr) <= tol * bnorm or iters >= max_iters:
                break
            for i in range(n):
                p[i] = r[i]
            while iters < max_iters:
                _lap(nb, p, ap)
                alpha = rr / _dot(p, ap)
                for i in range(n):
                    x[i] += alpha * p[i]
                    r[i] -= alpha * ap[i]
                iters += 1
                rr_new = _dot(r, r)
                if sqrt(rr_new) <= tol * bnorm:
                    break
                beta = rr_new / rr
                for i in range(n):
                    p[i] = r[i] + beta * p[i]
                rr = rr_new
    return x_arr, int(iters), float(sqrt(rr) / bnorm)


def starfm_band(L_in, M1_in, M0_in, double threshold, int half, double window,
                double eps, int r0, int r1, int c0, int c1):
    cdef const double[:, ::1] L = np.ascontiguousarray(L_in, dtype=np.float64)
    cdef const double[:, ::1] M1 = np.ascontiguousarray(M1_in, dtype=np.float64)
    cdef const double[:, ::1] M0 = np.ascontiguousarray(M0_in, dtype=np.float64)
    cdef Py_ssize_t H = L.shape[0], W = L.shape[1]
    out_arr = np.empty((r1 - r0, c1 - c0))
    cdef double[:, ::1] out = out_arr
    cdef int y, x, dy, dx, ky, kx, npass
    cdef double lx, wsum, acc, c, inv, dist, hw = window / 2.0
    with nogil:
        for y in range(r0, r1):
            for x in range(c0, c1):
                lx = L[y, x]
                # pass 0 sums the raw weights, pass 1 applies the normalised ones
                wsum = 0.0
                acc = 0.0
                for npass in range(2):
                    for dy in range(-half, half + 1):
                        ky = y + dy
                        if ky < 0 or ky >= H:
                            continue
                        for dx in range(-half, half + 1):
                            kx = x + dx
                            if kx < 0 or kx >= W:
                                continue
                            if (dy != 0 or dx != 0) and fabs(L[ky, kx] - lx) > threshold:
                                continue
                            dist = sqrt(<double>(dy * dy + dx * dx))
                            c = (fabs(L[ky, kx] - M1[ky, kx]) + eps) \
                                * (fabs(M0[ky, kx] - M1[ky, kx]) + eps) * (1.0 + dist / hw)
                            inv = 1.0 / c
                            if npass == 0:
                                wsum += inv
                            else:
                                acc += (inv / wsum) * (L[ky, kx] + (M0[ky, kx] - M1[ky, kx]))
                out[y - r0, x - c0] = acc
    return out_arr


cdef inline double _idw(double* dist, double* vals, int n) noexcept nogil:
    cdef int j
    cdef double num = 0.0, den = 0.0, w
    for j in range(n):
        w = 1.0 / dist[j]
        num += w * vals[j]
        den += w
    return num / den


def wlr_fill(target_in, ref_in, valid_sat_in, valid_in, qs_in, sigma_in, band_mean_in,
             int init_half, int max_half, int min_samples, int n_similar):
    cdef const double[:, :, ::1] target = np.ascontiguousarray(target_in, dtype=np.float64)
    cdef const double[:, :, ::1] ref = np.ascontiguousarray(ref_in, dtype=np.float64)
    cdef const long long[:, ::1] sat = np.ascontiguousarray(valid_sat_in, dtype=np.int64)
    cdef const unsigned char[:, ::1] valid = np.ascontiguousarray(valid_in, dtype=np.uint8)
    cdef const long long[:, ::1] qs = np.ascontiguousarray(qs_in, dtype=np.int64)
    cdef const double[::1] sigma = np.ascontiguousarray(sigma_in, dtype=np.float64)
    cdef const double[::1] band_mean = np.ascontiguousarray(band_mean_in, dtype=np.float64)
    cdef Py_ssize_t B = target.shape[0], H = target.shape[1], W = target.shape[2]
    cdef Py_ssize_t n = qs.shape[0]
    out_arr = np.empty((n, B))
    flags_arr = np.empty((n, B), dtype=np.int8)
    cdef double[:, ::1] out = out_arr
    cdef signed char[:, ::1] flags = flags_arr

    cdef int cap = (2 * max(max_half, init_half) + 1) ** 2
    cdef double* sdist = <double*> malloc(cap * sizeof(double))
    cdef double* sref = <double*> malloc(cap * sizeof(double))
    cdef double* stgt = <double*> malloc(cap * sizeof(double))
    cdef double* kkey = <double*> malloc(n_similar * sizeof(double))
    cdef int* kidx = <int*> malloc(n_similar * sizeof(int))
    cdef double* selr = <double*> malloc(n_similar * sizeof(double))
    cdef double* selt = <double*> malloc(n_similar * sizeof(double))
    cdef double* seld = <double*> malloc(n_similar * sizeof(double))
    cdef Py_ssize_t i, b
    cdef int qr, qc, half, r0, r1, c0, c1, y, x, ns, nk, j, pos
    cdef long long found
    cdef double rq, key, w, wt, rbar, tbar, dr, srr, srt, a
    try:
        with nogil:
            for i in range(n):
                qr = <int> qs[i, 0]
                qc = <int> qs[i, 1]
                half = init_half
                while True:
                    r0 = qr - half if qr - half > 0 else 0
                    r1 = qr + half + 1 if qr + half + 1 < H else <int> H
                    c0 = qc - half if qc - half > 0 else 0
                    c1 = qc + half + 1 if qc + half + 1 < W else <int> W
                    found = sat[r1, c1] - sat[r0, c1] - sat[r1, c0] + sat[r0, c0]
                    if found >= min_samples or half >= max_half:
                        break
                    half += 1
                for b in range(B):
                    rq = ref[b, qr, qc]
                    ns = 0
                    nk = 0
                    for y in range(r0, r1):
                        for x in range(c0, c1):
                            if not valid[y, x]:
                                continue
                            sdist[ns] = sqrt(<double>((y - qr) * (y - qr) + (x - qc) * (x - qc)))
                            sref[ns] = ref[b, y, x]
                            stgt[ns] = target[b, y, x]
                            key = fabs(ref[b, y, x] - rq)
                            # stable top-n insertion: equal keys keep scan order
                            if nk < n_similar or key < kkey[nk - 1]:
                                pos = nk if nk < n_similar else n_similar - 1
                                while pos > 0 and kkey[pos - 1] > key:
                                    if pos < n_similar:
                                        kkey[pos] = kkey[pos - 1]
                                        kidx[pos] = kidx[pos - 1]
                                    pos -= 1
                                kkey[pos] = key
                                kidx[pos] = ns
                                if nk < n_similar:
                                    nk += 1
                            ns += 1
                    if ns == 0:
                        out[i, b] = band_mean[b]
                        flags[i, b] = F_EMPTY
                        continue
                    if found < min_samples:
                        out[i, b] = _idw(sdist, stgt, ns)
                        flags[i, b] = F_STARVED
                        continue
                    wt = 0.0
                    for j in range(nk):
                        selr[j] = sref[kidx[j]]
                        selt[j] = stgt[kidx[j]]
                        seld[j] = sdist[kidx[j]]
                    for j in range(nk):
                        wt += 1.0 / (seld[j] * (1.0 + kkey[j] / sigma[b]))
                    rbar = 0.0
                    tbar = 0.0
                    for j in range(nk):
                        w = 1.0 / (seld[j] * (1.0 + kkey[j] / sigma[b]))
                        rbar += w * selr[j]
                    for j in range(nk):
                        w = 1.0 / (seld[j] * (1.0 + kkey[j] / sigma[b]))
                        tbar += w * selt[j]
                    rbar /= wt
                    tbar /= wt
                    srr = 0.0
                    for j in range(nk):
                        w = 1.0 / (seld[j] * (1.0 + kkey[j] / sigma[b]))
                        dr = selr[j] - rbar
                        srr += w * (dr * dr)
                    if srr / wt <= DEGENERATE_STD * DEGENERATE_STD:
                        out[i, b] = _idw(seld, selt, nk)
                        flags[i, b] = F_DEGENERATE
                        continue
                    srt = 0.0
                    for j in range(nk):
                        w = 1.0 / (seld[j] * (1.0 + kkey[j] / sigma[b]))
                        srt += w * ((selr[j] - rbar) * (selt[j] - tbar))
                    a = srt / srr
                    out[i, b] = a * rq + (tbar - a * rbar)
                    flags[i, b] = F_REGRESSION
    finally:
        free(sdist); free(sref); free(stgt); free(kkey); free(kidx)
        free(selr); free(selt); free(seld)
    return out_arr, flags_arr


def stmrf_candidates(ref_in, omega_in, qs_in, donors_in, int radius, int k):
    cdef const double[:, :, ::1] ref = np.ascontiguousarray(ref_in, dtype=np.float64)
    cdef const unsigned char[:, ::1] omega = np.ascontiguousarray(omega_in, dtype=np.uint8)
    cdef const long long[:, ::1] qs = np.ascontiguousarray(qs_in, dtype=np.int64)
    cdef const long long[:, ::1] donors = np.ascontiguousarray(donors_in, dtype=np.int64)
    cdef Py_ssize_t B = ref.shape[0], H = ref.shape[1], W = ref.shape[2]
    cdef Py_ssize_t n = qs.shape[0], m = donors.shape[0]
    if k > m:
        k = <int> m
    cand_arr = np.empty((n, k), dtype=np.int64)
    cost_arr = np.empty((n, k))
    cdef long long[:, ::1] cand = cand_arr
    cdef double[:, ::1] cost = cost_arr
    cdef Py_ssize_t i, d, b
    cdef int qr, qc, dr, dc, oy, ox, pr, pc, er, ec, nk, pos, centre
    cdef double total, diff, c
    cdef long long used
    with nogil:
        for i in range(n):
            qr = <int> qs[i, 0]
            qc = <int> qs[i, 1]
            nk = 0
            for d in range(m):
                dr = <int> donors[d, 0]
                dc = <int> donors[d, 1]
                total = 0.0
                used = 0
                for oy in range(-radius, radius + 1):
                    pr = qr + oy
                    er = dr + oy
                    if pr < 0 or pr >= H or er < 0 or er >= H:
                        continue
                    for ox in range(-radius, radius + 1):
                        pc = qc + ox
                        ec = dc + ox
                        if pc < 0 or pc >= W or ec < 0 or ec >= W:
                            continue
                        centre = oy == 0 and ox == 0
                        if not centre and (omega[pr, pc] or omega[er, ec]):
                            continue
                        diff = 0.0
                        for b in range(B):
                            c = ref[b, er, ec] - ref[b, pr, pc]
                            diff += c * c
                        total += diff
                        used += B
                c = total / used
                if nk < k or c < cost[i, nk - 1]:
                    pos = nk if nk < k else k - 1
                    while pos > 0 and cost[i, pos - 1] > c:
                        if pos < k:
                            cost[i, pos] = cost[i, pos - 1]
                            cand[i, pos] = cand[i, pos - 1]
                        pos -= 1
                    cost[i, pos] = c
                    cand[i, pos] = d
                    if nk < k:
                        nk += 1
    return cand_arr, cost_arr


cdef inline long long _pair_cost(long long a, long long b, long long c, long long d) noexcept nogil:
    cdef long long v = (a - c if a >= c else c - a) + (b - d if b >= d else d - b)
    return v if v < 4 else 4


def icm(cand_in, cost_in, donors_in, qs_in, nbr_in, labels_in, double lam, int iters):
    cdef const long long[:, ::1] cand = np.ascontiguousarray(cand_in, dtype=np.int64)
    cdef const double[:, ::1] cost = np.ascontiguousarray(cost_in, dtype=np.float64)
    cdef const long long[:, ::1] nbr = np.ascontiguousarray(nbr_in, dtype=np.int64)
    donors = np.asarray(donors_in, dtype=np.int64)
    qs = np.asarray(qs_in, dtype=np.int64)
    labels_arr = np.array(labels_in, dtype=np.int64, copy=True)
    cdef long long[::1] labels = labels_arr
    cdef const long long[:, ::1] off_r = np.ascontiguousarray(donors[cand_in, 0] - qs[:, 0:1])
    cdef const long long[:, ::1] off_c = np.ascontiguousarray(donors[cand_in, 1] - qs[:, 1:2])
    cdef Py_ssize_t n = cand.shape[0], k = cand.shape[1], i, c, t, jj
    cdef long long j, lj, li, pair, best, best_d, d, changed
    cdef double e, best_e
    trace = [_energy(cost, labels, nbr, off_r, off_c, lam)]
    for t in range(iters):
        changed = 0
        with nogil:
            for i in range(n):
                best = -1
                best_e = 0.0
                best_d = 0
                for c in range(k):
                    e = cost[i, c]
                    if lam != 0.0:
                        pair = 0
                        for jj in range(4):
                            j = nbr[i, jj]
                            if j >= 0:
                                lj = labels[j]
                                pair += _pair_cost(off_r[i, c], off_c[i, c], off_r[j, lj], off_c[j, lj])
                        e += lam * pair
                    d = cand[i, c]
                    if best < 0 or e < best_e or (e == best_e and d < best_d):
                        best = c
                        best_e = e
                        best_d = d
                if best != labels[i]:
                    labels[i] = best
                    changed += 1
        trace.append(_energy(cost, labels, nbr, off_r, off_c, lam))
        if changed == 0:
            break
    return labels_arr, trace


cdef double _energy(const double[:, ::1] cost, long long[::1] labels, const long long[:, ::1] nbr,
                    const long long[:, ::1] off_r, const long long[:, ::1] off_c, double lam):
    cdef Py_ssize_t i, n = labels.shape[0], jj
    cdef long long j, li, lj
    cdef double e = 0.0, pair = 0.0
    for i in range(n):
        e += cost[i, labels[i]]
    for i in range(n):
        li = labels[i]
        for jj in range(4):
            j = nbr[i, jj]
            if j > i:
                lj = labels[j]
                pair += _pair_cost(off_r[i, li], off_c[i, li], off_r[j, lj], off_c[j, lj])
    return e + lam * pair
