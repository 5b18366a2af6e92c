"""Compiled per-pixel kernels for affinity maps and pair weights.

Offsets follow ``affinity.OFFSET_UNITS``: rank ``k`` is ``(ux, uy)``, the
forward ranks are 4..7 and the opposite of rank ``k`` is ``7 - k``.
"""

import numpy as np
from numba import njit

_UX = np.array([-1, 0, 1, -1, 1, -1, 0, 1], dtype=np.int64)
_UY = np.array([-1, -1, -1, 0, 0, 1, 1, 1], dtype=np.int64)


@njit(cache=True)
def _sigma(x, alpha):
    return 2.0 * (1.0 / (1.0 + np.exp(-alpha * x)) - 0.5)


@njit(cache=True)
def gt_affinity(inst, dists, out):
    h, w = inst.shape
    ux, uy = _UX, _UY
    for y in range(h):
        for x in range(w):
            a = inst[y, x]
            for r in range(dists.shape[0]):
                d = dists[r]
                for k in range(8):
                    qy = y + uy[k] * d
                    qx = x + ux[k] * d
                    v = 0.0
                    if a != 0 and 0 <= qy < h and 0 <= qx < w and inst[qy, qx] == a:
                        v = 1.0
                    out[y, x, r * 8 + k] = v


@njit(cache=True)
def superclass_index(sem, lut, nsc):
    """0-based super-class of largest summed probability; first one on ties."""
    h, w, m1 = sem.shape
    out = np.empty((h, w), dtype=np.int64)
    sums = np.empty(nsc, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            sums[:] = 0.0
            for c in range(1, m1):
                sums[lut[c]] += sem[y, x, c]
            best = 0
            for s in range(1, nsc):
                if sums[s] > sums[best]:
                    best = s
            out[y, x] = best
    return out


@njit(cache=True)
def superclass_winner(sem, lut, nsc):
    """0-based super-class beating the background and every other one, else -1."""
    h, w, m1 = sem.shape
    out = np.empty((h, w), dtype=np.int64)
    sums = np.empty(nsc, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            sums[:] = 0.0
            for c in range(1, m1):
                sums[lut[c]] += sem[y, x, c]
            best = 0
            for s in range(1, nsc):
                if sums[s] > sums[best]:
                    best = s
            win = sums[best] > np.float64(sem[y, x, 0])
            for s in range(nsc):
                if s != best and not sums[best] > sums[s]:
                    win = False
            out[y, x] = best if win else -1
    return out


@njit(cache=True)
def refine(aff, sem, sc, alpha, dists, out):
    """``out = sigma(<p, q>) * aff`` per channel, 0 across super-classes or off-grid."""
    h, w, m1 = sem.shape
    ux, uy = _UX, _UY
    out[:] = 0
    for y in range(h):
        for x in range(w):
            for r in range(dists.shape[0]):
                d = dists[r]
                for k in range(4, 8):
                    qy = y + uy[k] * d
                    qx = x + ux[k] * d
                    if not (0 <= qy < h and 0 <= qx < w):
                        continue
                    ip = 0.0
                    if sc[y, x] == sc[qy, qx]:
                        for c in range(1, m1):
                            ip += np.float64(sem[y, x, c]) * np.float64(sem[qy, qx, c])
                    f = _sigma(ip, alpha)
                    ch = r * 8 + k
                    opp = r * 8 + 7 - k
                    out[y, x, ch] = f * aff[y, x, ch]
                    out[qy, qx, opp] = f * aff[qy, qx, opp]


@njit(cache=True)
def remap_last(refined, cls, ca, cb, alpha, d, r, out):
    """``sigma`` on distance-rank ``r`` channels whose endpoints are both in ``{ca, cb}``."""
    h, w = cls.shape
    ux, uy = _UX, _UY
    for y in range(h):
        for x in range(w):
            c0 = cls[y, x]
            if c0 != ca and c0 != cb:
                continue
            for k in range(8):
                qy = y + uy[k] * d
                qx = x + ux[k] * d
                if not (0 <= qy < h and 0 <= qx < w):
                    continue
                c1 = cls[qy, qx]
                if c1 == ca or c1 == cb:
                    ch = r * 8 + k
                    out[y, x, ch] = _sigma(np.float64(refined[y, x, ch]), alpha)


@njit(cache=True)
def symmetrize(aff, dists, out):
    """Mean of the two directions per forward pair; one side if the other is NaN."""
    h, w = aff.shape[:2]
    ux, uy = _UX, _UY
    out[:] = np.nan
    for y in range(h):
        for x in range(w):
            for r in range(dists.shape[0]):
                d = dists[r]
                for j in range(4):
                    k = 4 + j
                    qy = y + uy[k] * d
                    qx = x + ux[k] * d
                    if not (0 <= qy < h and 0 <= qx < w):
                        continue
                    fwd = np.float64(aff[y, x, r * 8 + k])
                    bwd = np.float64(aff[qy, qx, r * 8 + 7 - k])
                    if np.isnan(fwd):
                        out[y, x, r, j] = bwd
                    elif np.isnan(bwd):
                        out[y, x, r, j] = fwd
                    else:
                        out[y, x, r, j] = (fwd + bwd) / 2.0


@njit(cache=True)
def pixel_pairs(weights, index, ranks, dists):
    """Pairs of graph vertices (``index >= 0``) with a defined weight."""
    h, w = index.shape
    ux, uy = _UX, _UY
    total = 0
    for y in range(h):
        for x in range(w):
            if index[y, x] < 0:
                continue
            for t in range(ranks.shape[0]):
                r = ranks[t]
                d = dists[t]
                for j in range(4):
                    qy = y + uy[4 + j] * d
                    qx = x + ux[4 + j] * d
                    if 0 <= qy < h and 0 <= qx < w and index[qy, qx] >= 0 \
                            and not np.isnan(weights[y, x, r, j]):
                        total += 1
    src = np.empty(total, dtype=np.int64)
    dst = np.empty(total, dtype=np.int64)
    wt = np.empty(total, dtype=np.float64)
    i = 0
    # distance-major, then offset, then scanline: matches one slice per channel
    for t in range(ranks.shape[0]):
        r = ranks[t]
        d = dists[t]
        for j in range(4):
            for y in range(h):
                for x in range(w):
                    a = index[y, x]
                    if a < 0:
                        continue
                    qy = y + uy[4 + j] * d
                    qx = x + ux[4 + j] * d
                    if not (0 <= qy < h and 0 <= qx < w):
                        continue
                    b = index[qy, qx]
                    v = weights[y, x, r, j]
                    if b >= 0 and not np.isnan(v):
                        src[i] = a
                        dst[i] = b
                        wt[i] = v
                        i += 1
    return src, dst, wt


@njit(cache=True)
def label_confidence(labels, weights, dists, top):
    """Sum and count of defined pair weights with both ends in one label."""
    h, w = labels.shape
    ux, uy = _UX, _UY
    sums = np.zeros(top)
    counts = np.zeros(top, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            a = labels[y, x]
            if a < 0:
                continue
            for r in range(dists.shape[0]):
                d = dists[r]
                for j in range(4):
                    qy = y + uy[4 + j] * d
                    qx = x + ux[4 + j] * d
                    if not (qy < h and 0 <= qx < w) or labels[qy, qx] != a:
                        continue
                    v = weights[y, x, r, j]
                    if not np.isnan(v):
                        sums[a] += v
                        counts[a] += 1
    return sums, counts


@njit(cache=True)
def pair_weights(aff, sem, sc, cls, same, alpha, dists, remap_rank, ca, cb, cast, out):
    """``symmetrize(remap_last(refine(aff)))`` in one pass, without the
    intermediate maps. ``same[y, x]`` tells that pixel ``(x, y)`` has the
    semantic vector of its left neighbor, so a run of such pairs reuses one
    inner product. ``cast`` is a one-element array of the refined dtype;
    values pass through it to round exactly as the stored maps would."""
    h, w, m1 = sem.shape
    ux, uy = _UX, _UY
    out[:] = np.nan
    # inner products repeat a lot; sigma(0) is exactly 0
    last_ip = 0.0
    last_f = 0.0
    for y in range(h):
        for r in range(dists.shape[0]):
            d = dists[r]
            for j in range(4):
                k = 4 + j
                qy = y + uy[k] * d
                if not 0 <= qy < h:
                    continue
                ch = r * 8 + k
                opp = r * 8 + 7 - k
                ip = 0.0
                for x in range(max(0, -ux[k] * d), min(w, w - ux[k] * d)):
                    qx = x + ux[k] * d
                    if x == 0 or qx == 0 or not (same[y, x] and same[qy, qx]):
                        ip = 0.0
                        if sc[y, x] == sc[qy, qx]:
                            for c in range(1, m1):
                                ip += np.float64(sem[y, x, c]) * np.float64(sem[qy, qx, c])
                    if ip != last_ip:
                        last_ip = ip
                        last_f = _sigma(ip, alpha)
                    f = last_f
                    cast[0] = f * aff[y, x, ch]
                    fwd = np.float64(cast[0])
                    cast[0] = f * aff[qy, qx, opp]
                    bwd = np.float64(cast[0])
                    if r == remap_rank:
                        c0 = cls[y, x]
                        c1 = cls[qy, qx]
                        if (c0 == ca or c0 == cb) and (c1 == ca or c1 == cb):
                            cast[0] = _sigma(fwd, alpha)
                            fwd = np.float64(cast[0])
                            cast[0] = _sigma(bwd, alpha)
                            bwd = np.float64(cast[0])
                    if np.isnan(fwd):
                        out[y, x, r, j] = bwd
                    elif np.isnan(bwd):
                        out[y, x, r, j] = fwd
                    else:
                        out[y, x, r, j] = (fwd + bwd) / 2.0
