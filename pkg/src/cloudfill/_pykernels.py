"""Pure numpy implementations of the hot loops.

These mirror ``_ckernels.pyx`` argument for argument and are used when the
compiled extension is unavailable (or ``CLOUDFILL_PURE_PYTHON=1``). Sums that
feed iterative decisions use ``np.add.reduce`` (pairwise, single threaded) so
the output never depends on the BLAS thread count.
"""

import numpy as np

BACKEND = "python"

# weighted std of sampled reference values below this means a flat regression
DEGENERATE_STD = 1e-10

WLR_REGRESSION = 0
WLR_STARVED = 1
WLR_DEGENERATE = 2
WLR_EMPTY = 3


def _dot(a, b):
    return float(np.add.reduce(a * b))


def laplacian_apply(nbr, x):
    """``4 x_p - sum of x over in-region neighbours``; ``nbr`` holds -1 for none."""
    ext = np.append(x, 0.0)
    return 4.0 * x - ext[nbr].sum(axis=1)


def cg_solve(nbr, rhs, x0, tol, max_iters):
    """Conjugate gradients on the masked Dirichlet Laplacian.

    Returns ``(x, iterations, relative_residual)`` where the residual is the
    true ``|b - A x| / |b|`` at exit.
    """
    nbr = np.asarray(nbr, dtype=np.int64)
    b = np.asarray(rhs, dtype=np.float64)
    x = np.array(x0, dtype=np.float64, copy=True)
    bb = _dot(b, b)
    if bb == 0.0:
        return np.zeros_like(b), 0, 0.0
    bnorm = np.sqrt(bb)
    iters = 0
    while True:
        r = b - laplacian_apply(nbr, x)
        rr = _dot(r, r)
        if np.sqrt(rr) <= tol * bnorm or iters >= max_iters:
            return x, iters, float(np.sqrt(rr) / bnorm)
        p = r.copy()
        while iters < max_iters:
            ap = laplacian_apply(nbr, p)
            alpha = rr / _dot(p, ap)
            x += alpha * p
            r -= alpha * ap
            iters += 1
            rr_new = _dot(r, r)
            if np.sqrt(rr_new) <= tol * bnorm:
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
        # loop back to confirm with the true residual


def starfm_band(L, M1, M0, threshold, half, window, eps, r0, r1, c0, c1):
    """Single-pair STARFM prediction of one band over rows r0:r1, cols c0:c1.

    Weights are normalised before they multiply the candidate values, so a
    lone candidate contributes its value exactly.
    """
    H, W = L.shape
    rows = np.arange(r0, r1)[:, None]
    cols = np.arange(c0, c1)[None, :]
    centre = L[r0:r1, c0:c1]
    pad = half
    Lp = np.pad(L, pad, mode="edge")
    Sp = np.pad(np.abs(L - M1) + eps, pad, mode="edge")
    Tp = np.pad(np.abs(M0 - M1) + eps, pad, mode="edge")
    Vp = np.pad(L + (M0 - M1), pad, mode="edge")

    def offsets():
        for dy in range(-half, half + 1):
            rr = rows + dy
            row_ok = (rr >= 0) & (rr < H)
            for dx in range(-half, half + 1):
                cc = cols + dx
                inside = row_ok & (cc >= 0) & (cc < W)
                sl = (slice(r0 + dy + pad, r1 + dy + pad), slice(c0 + dx + pad, c1 + dx + pad))
                if dy == 0 and dx == 0:
                    sel = inside
                else:
                    sel = inside & (np.abs(Lp[sl] - centre) <= threshold)
                c = Sp[sl] * Tp[sl] * (1.0 + np.sqrt(dy * dy + dx * dx) / (window / 2.0))
                yield sl, np.where(sel, 1.0 / c, 0.0)

    wsum = np.zeros((r1 - r0, c1 - c0))
    for _, inv in offsets():
        wsum += inv
    acc = np.zeros_like(wsum)
    for sl, inv in offsets():
        acc += (inv / wsum) * Vp[sl]
    return acc


def _idw(dist, vals):
    w = 1.0 / dist
    return _dot(w, vals) / float(np.add.reduce(w))


def wlr_fill(target, ref, valid_sat, valid, qs, sigma, band_mean,
             init_half, max_half, min_samples, n_similar):
    """Per-pixel weighted affine regression ``target ~ a * ref + c``.

    Returns ``(values, flags)`` of shape ``(n, bands)``.
    """
    B, H, W = target.shape
    n = qs.shape[0]
    out = np.empty((n, B))
    flags = np.empty((n, B), dtype=np.int8)

    def count(r0, r1, c0, c1):
        return (valid_sat[r1, c1] - valid_sat[r0, c1]
                - valid_sat[r1, c0] + valid_sat[r0, c0])

    for i in range(n):
        qr, qc = int(qs[i, 0]), int(qs[i, 1])
        half = init_half
        while True:
            r0, r1 = max(qr - half, 0), min(qr + half + 1, H)
            c0, c1 = max(qc - half, 0), min(qc + half + 1, W)
            found = count(r0, r1, c0, c1)
            if found >= min_samples or half >= max_half:
                break
            half += 1
        win_valid = valid[r0:r1, c0:c1]
        sr, sc = np.nonzero(win_valid)
        sr = sr + r0
        sc = sc + c0
        dist_all = np.sqrt((sr - qr) ** 2.0 + (sc - qc) ** 2.0)
        for b in range(B):
            if sr.size == 0:
                out[i, b] = band_mean[b]
                flags[i, b] = WLR_EMPTY
                continue
            rs_all = ref[b, sr, sc]
            ts_all = target[b, sr, sc]
            if found < min_samples:
                out[i, b] = _idw(dist_all, ts_all)
                flags[i, b] = WLR_STARVED
                continue
            rq = ref[b, qr, qc]
            key = np.abs(rs_all - rq)
            keep = np.argsort(key, kind="stable")[:n_similar]
            rs, ts, dist = rs_all[keep], ts_all[keep], dist_all[keep]
            w = 1.0 / (dist * (1.0 + key[keep] / sigma[b]))
            wt = float(np.add.reduce(w))
            rbar = _dot(w, rs) / wt
            tbar = _dot(w, ts) / wt
            dr = rs - rbar
            srr = _dot(w, dr * dr)
            if srr / wt <= DEGENERATE_STD * DEGENERATE_STD:
                out[i, b] = _idw(dist, ts)
                flags[i, b] = WLR_DEGENERATE
                continue
            a = _dot(w, dr * (ts - tbar)) / srr
            out[i, b] = a * rq + (tbar - a * rbar)
            flags[i, b] = WLR_REGRESSION
    return out, flags


def stmrf_candidates(ref, omega, qs, donors, radius, k):
    """Top-``k`` donors per missing pixel by reference patch distance.

    Cost is the mean squared reference difference over the patch offsets
    where both cells are on the image; off-centre offsets landing in the
    missing region are skipped. Ties go to the smaller donor index.
    """
    B, H, W = ref.shape
    n, m = qs.shape[0], donors.shape[0]
    k = min(k, m)
    cand = np.empty((n, k), dtype=np.int64)
    cost = np.empty((n, k))
    dr, dc = donors[:, 0], donors[:, 1]
    offsets = [(oy, ox) for oy in range(-radius, radius + 1) for ox in range(-radius, radius + 1)]
    for i in range(n):
        qr, qc = int(qs[i, 0]), int(qs[i, 1])
        total = np.zeros(m)
        used = np.zeros(m)
        for oy, ox in offsets:
            pr, pc = qr + oy, qc + ox
            if not (0 <= pr < H and 0 <= pc < W):
                continue
            centre = oy == 0 and ox == 0
            if not centre and omega[pr, pc]:
                continue
            er, ec = dr + oy, dc + ox
            ok = (er >= 0) & (er < H) & (ec >= 0) & (ec < W)
            er_c = np.clip(er, 0, H - 1)
            ec_c = np.clip(ec, 0, W - 1)
            if not centre:
                ok &= ~omega[er_c, ec_c].astype(bool)
            sq = np.zeros(m)
            for b in range(B):
                d = ref[b, er_c, ec_c] - ref[b, pr, pc]
                sq += d * d
            total += np.where(ok, sq, 0.0)
            used += np.where(ok, B, 0)
        c = total / used
        order = np.argsort(c, kind="stable")[:k]
        cand[i] = order
        cost[i] = c[order]
    return cand, cost


def _pair_cost(orow, ocol, nrow, ncol):
    return min(abs(orow - nrow) + abs(ocol - ncol), 4)


def icm(cand, cost, donors, qs, nbr, labels, lam, iters):
    """Iterated conditional modes over candidate donor lists.

    Returns ``(labels, energy_trace)``; the trace starts with the energy of
    the initial labelling and gains one entry per completed sweep.
    """
    n, k = cand.shape
    labels = np.array(labels, dtype=np.int64, copy=True)
    off_r = donors[cand, 0] - qs[:, 0:1]
    off_c = donors[cand, 1] - qs[:, 1:2]

    def energy():
        e = 0.0
        for i in range(n):
            e += cost[i, labels[i]]
        pair = 0.0
        for i in range(n):
            li = labels[i]
            for j in nbr[i]:
                if j > i:
                    lj = labels[j]
                    pair += _pair_cost(off_r[i, li], off_c[i, li], off_r[j, lj], off_c[j, lj])
        return e + lam * pair

    trace = [energy()]
    for _ in range(iters):
        changed = 0
        for i in range(n):
            best, best_e, best_d = -1, 0.0, 0
            for c in range(k):
                e = cost[i, c]
                if lam != 0.0:
                    pair = 0
                    for j in nbr[i]:
                        if j >= 0:
                            lj = labels[j]
                            pair += _pair_cost(off_r[i, c], off_c[i, c], off_r[j, lj], off_c[j, lj])
                    e += lam * pair
                d = cand[i, c]
                if best < 0 or e < best_e or (e == best_e and d < best_d):
                    best, best_e, best_d = c, e, d
            if best != labels[i]:
                labels[i] = best
                changed += 1
        trace.append(energy())
        if changed == 0:
            break
    return labels, trace
