"""Compiled kernels behind :class:`agmerge.graph_merge.MergeGraph`.

Graph state is a tuple of numpy arrays (see ``new_state``). Vertices live in
slots ``0..n-1``; a contraction keeps the slot whose neighbor list is longer
and forwards the other one to it. The merged vertex takes the smaller of the
two logical ids, so ids only shrink and a retired id never returns.

Edges sit in an open-addressing table of ``(slot-pair key, weight)`` rows in
float64 (keys stay far below 2**53). The home row of a pair grows with the
sum of its slots, so on pixel graphs, where slots follow scanline order,
nearby pairs share a compact stretch of the table.

Kernels that may append to the neighbor pool return ``NEED_POOL`` instead of
overflowing; the caller grows the pool and calls again.
"""

import numpy as np
from numba import njit

# state tuple layout
PM = 0          # (n, 2): union-find parent, visit mark
ALIVE = 1       # (n,)
SID = 2         # (n,): logical id of the vertex in each slot
ID2SLOT = 3     # (n,): slot of each live id, -1 once retired
NB = 4          # (n, 3): neighbor list head, tail, length
POOL = 5        # (cap, 2): neighbor slot, next node
MEM = 6         # (n, 3): member list head, tail, count
MEM_NEXT = 7    # (n,)
TAB = 8         # (cap, 2): key, weight
CTR = 9         # counters below

N_ALIVE, N_EDGES, TOKEN, POOL_USED, T_USED = range(5)

EMPTY = -1.0
TOMB = -2.0
NEED_POOL = -1


def _empty_table(cap):
    tab = np.zeros((cap, 2), dtype=np.float64)
    tab[:, 0] = EMPTY
    return tab


def new_state(n):
    n = int(n)
    ids = np.arange(n, dtype=np.int64)
    pm = np.zeros((n, 2), dtype=np.int64)
    pm[:, 0] = ids
    nb = np.zeros((n, 3), dtype=np.int64)
    nb[:, :2] = -1
    mem = np.ones((n, 3), dtype=np.int64)
    mem[:, 0] = ids
    mem[:, 1] = ids
    return (
        pm,
        np.ones(n, dtype=np.bool_),
        ids.copy(),
        ids.copy(),
        nb,
        np.zeros((16, 2), dtype=np.int64),
        mem,
        np.full(n, -1, dtype=np.int64),
        _empty_table(8),
        np.array([n, 0, 0, 0, 0], dtype=np.int64),
    )


def _replace(st, index, value):
    return st[:index] + (value,) + st[index + 1:]


def with_pool(st, capacity):
    """``st`` with a neighbor pool of at least ``capacity`` entries."""
    old = st[POOL].shape[0]
    if capacity <= old:
        return st
    pool = np.zeros((max(capacity, 2 * old), 2), dtype=np.int64)
    pool[:old] = st[POOL]
    return _replace(st, POOL, pool)


def with_table(st, live_capacity):
    """``st`` with an edge table that holds ``live_capacity`` live edges."""
    cap = max(8, 2 * int(live_capacity))
    if cap <= st[TAB].shape[0]:
        return st
    tab = _empty_table(cap)
    _rehash_into(st[TAB], tab, st[PM].shape[0])
    st = _replace(st, TAB, tab)
    st[CTR][T_USED] = st[CTR][N_EDGES]
    return st


# -- union-find and hashing --------------------------------------------------

@njit(cache=True)
def _find(pm, s):
    while pm[s, 0] != s:
        pm[s, 0] = pm[pm[s, 0], 0]
        s = pm[s, 0]
    return s


@njit(cache=True)
def _key(a, b, n):
    if a < b:
        return a * n + b
    return b * n + a


@njit(cache=True)
def _home(key, n, cap):
    a = key // n
    b = key - a * n
    return ((a + b) * cap) // (2 * n)


@njit(cache=True)
def _lookup(tab, key, n):
    cap = tab.shape[0]
    i = _home(key, n, cap)
    fkey = np.float64(key)
    while True:
        k = tab[i, 0]
        if k == fkey:
            return i
        if k == EMPTY:
            return -1
        i += 1
        if i == cap:
            i = 0


@njit(cache=True)
def _place(tab, key, n):
    """Free row for a key known to be absent."""
    cap = tab.shape[0]
    i = _home(key, n, cap)
    while tab[i, 0] >= 0:
        i += 1
        if i == cap:
            i = 0
    return i


@njit(cache=True)
def _rehash_into(old, tab, n):
    for i in range(old.shape[0]):
        if old[i, 0] >= 0:
            j = _place(tab, np.int64(old[i, 0]), n)
            tab[j, 0] = old[i, 0]
            tab[j, 1] = old[i, 1]


@njit(cache=True)
def _compact_table(tab, ctr, n):
    old = tab.copy()
    tab[:, 0] = EMPTY
    _rehash_into(old, tab, n)
    ctr[T_USED] = ctr[N_EDGES]


@njit(cache=True)
def _insert(tab, ctr, key, w, n):
    """Insert an absent key; returns its row."""
    if 10 * (ctr[T_USED] + 1) > 7 * tab.shape[0]:
        _compact_table(tab, ctr, n)
    pos = _place(tab, key, n)
    if tab[pos, 0] == EMPTY:
        ctr[T_USED] += 1
    tab[pos, 0] = key
    tab[pos, 1] = w
    return pos


@njit(cache=True)
def _push_nb(nb, pool, ctr, s, t):
    node = ctr[POOL_USED]
    ctr[POOL_USED] += 1
    pool[node, 0] = t
    pool[node, 1] = -1
    if nb[s, 1] == -1:
        nb[s, 0] = node
    else:
        pool[nb[s, 1], 1] = node
    nb[s, 1] = node
    nb[s, 2] += 1


@njit(cache=True)
def _id_key(sid, a, b, n):
    ia = sid[a]
    ib = sid[b]
    if ia < ib:
        return ia * n + ib
    return ib * n + ia


@njit(cache=True)
def _pool_fits(nb, pool, ctr, su, sv):
    need = min(nb[su, 2], nb[sv, 2])
    return ctr[POOL_USED] + need <= pool.shape[0]


# -- contraction -------------------------------------------------------------

@njit(cache=True)
def merge_slots(st, su, sv, changed):
    """Contract the vertices in slots ``su`` and ``sv``.

    Returns ``(kept slot, c)``. ``changed[:c]`` receives the neighbors ``k``
    whose edge to the kept slot has a new weight or a new id key; all other
    edges keep both. The caller guarantees pool room via ``_pool_fits``.
    """
    pm, alive, sid, id2slot = st[PM], st[ALIVE], st[SID], st[ID2SLOT]
    nb, pool, mem, mem_next = st[NB], st[POOL], st[MEM], st[MEM_NEXT]
    tab, ctr = st[TAB], st[CTR]
    n = pm.shape[0]

    if nb[su, 2] <= nb[sv, 2]:
        small, large = su, sv
    else:
        small, large = sv, su
    # the side giving up its id sees every edge key change
    small_renamed = sid[small] > sid[large]

    pos = _lookup(tab, _key(small, large, n), n)
    if pos >= 0:
        tab[pos, 0] = TOMB
        ctr[N_EDGES] -= 1

    # two fresh tokens: ``token`` marks small's neighbors, ``token - 1``
    # marks neighbors already kept in large's rewritten list
    ctr[TOKEN] += 2
    token = ctr[TOKEN]
    pm[small, 1] = token
    pm[large, 1] = token

    c = 0
    node = nb[small, 0]
    while node != -1:
        k = _find(pm, pool[node, 0])
        node = pool[node, 1]
        if pm[k, 1] == token:
            continue
        pm[k, 1] = token
        ps = _lookup(tab, _key(small, k, n), n)
        if ps < 0:
            continue
        w_small = tab[ps, 1]
        tab[ps, 0] = TOMB
        kl = _key(large, k, n)
        pl = _lookup(tab, kl, n)
        if pl >= 0:
            ctr[N_EDGES] -= 1
            mean = (tab[pl, 1] + w_small) / 2.0
            if mean == tab[pl, 1] and small_renamed:
                continue
            tab[pl, 1] = mean
        else:
            _insert(tab, ctr, kl, w_small, n)
            _push_nb(nb, pool, ctr, large, k)
            if not small_renamed:
                continue    # small's id carries over: same key, same weight
        changed[c] = k
        c += 1

    if not small_renamed:
        # large's untouched edges change key; rewrite its list without
        # dead or repeated entries on the way
        prev = -1
        length = 0
        node = nb[large, 0]
        while node != -1:
            k = _find(pm, pool[node, 0])
            after = pool[node, 1]
            keep = (k != large and pm[k, 1] != token - 1
                    and _lookup(tab, _key(large, k, n), n) >= 0)
            if keep:
                if pm[k, 1] != token:
                    changed[c] = k
                    c += 1
                pm[k, 1] = token - 1
                pool[node, 0] = k
                if prev == -1:
                    nb[large, 0] = node
                else:
                    pool[prev, 1] = node
                prev = node
                length += 1
            node = after
        if prev == -1:
            nb[large, 0] = -1
        else:
            pool[prev, 1] = -1
        nb[large, 1] = prev
        nb[large, 2] = length

    mem_next[mem[large, 1]] = mem[small, 0]
    mem[large, 1] = mem[small, 1]
    mem[large, 2] += mem[small, 2]

    new_id = min(sid[small], sid[large])
    id2slot[max(sid[small], sid[large])] = -1
    sid[large] = new_id
    id2slot[new_id] = large

    pm[small, 0] = large
    alive[small] = False
    ctr[N_ALIVE] -= 1
    return large, c


@njit(cache=True)
def merge_pair(st, su, sv):
    if not _pool_fits(st[NB], st[POOL], st[CTR], su, sv):
        return NEED_POOL
    kept, _ = merge_slots(st, su, sv, np.empty(st[PM].shape[0], dtype=np.int64))
    return kept


@njit(cache=True)
def merge_groups(st, order, starts, resume):
    """Contract each group ``order[starts[g]:starts[g+1]]`` sequentially.

    Returns -1 when done, or the group to resume from after running out of
    pool room (members already merged resolve to the same slot on resume).
    """
    pm, nb, pool, ctr = st[PM], st[NB], st[POOL], st[CTR]
    changed = np.empty(pm.shape[0], dtype=np.int64)
    for g in range(resume, starts.shape[0] - 1):
        lo, hi = starts[g], starts[g + 1]
        cur = _find(pm, order[lo])
        for i in range(lo + 1, hi):
            s = _find(pm, order[i])
            if s == cur:
                continue
            if not _pool_fits(nb, pool, ctr, cur, s):
                return g
            cur, _ = merge_slots(st, cur, s, changed)
    return -1


# -- 4-ary max-heap over (weight desc, id key asc) ----------------------------
# Rows hold (weight, id key); id keys fit exactly in float64.

@njit(cache=True)
def _before(h, i, g, j):
    if h[i, 0] != g[j, 0]:
        return h[i, 0] > g[j, 0]
    return h[i, 1] < g[j, 1]


@njit(cache=True)
def _swap(h, i, j):
    for c in range(h.shape[1]):
        t = h[i, c]
        h[i, c] = h[j, c]
        h[j, c] = t


@njit(cache=True)
def _sift_down(h, size, i):
    while True:
        first = 4 * i + 1
        if first >= size:
            return
        best = first
        for c in range(first + 1, min(first + 4, size)):
            if _before(h, c, h, best):
                best = c
        if not _before(h, best, h, i):
            return
        _swap(h, i, best)
        i = best


@njit(cache=True)
def _sift_up(h, i):
    while i > 0:
        p = (i - 1) // 4
        if not _before(h, i, h, p):
            return
        _swap(h, i, p)
        i = p


@njit(cache=True)
def _pop_root(h, size):
    size -= 1
    _swap(h, 0, size)
    _sift_down(h, size, 0)
    return size


# -- sorted run of the initial entries ----------------------------------------

DIGIT_BITS = 11
_DIGITS = 6     # 66 bits cover a 64-bit key


@njit(cache=True)
def _stable_sort_by(keys, rows):
    """``rows`` stably reordered by ascending uint64 ``keys`` (LSD radix;
    digits shared by all keys are skipped)."""
    m = keys.shape[0]
    nb = 1 << DIGIT_BITS
    dmask = np.uint64(nb - 1)
    hist = np.zeros((_DIGITS, nb), dtype=np.int64)
    for i in range(m):
        x = keys[i]
        for d in range(_DIGITS):
            hist[d, np.int64((x >> np.uint64(d * DIGIT_BITS)) & dmask)] += 1
    k2 = np.empty_like(keys)
    r2 = np.empty_like(rows)
    pos = np.empty(nb, dtype=np.int64)
    for d in range(_DIGITS):
        if hist[d].max() == m:
            continue
        acc = 0
        for j in range(nb):
            pos[j] = acc
            acc += hist[d, j]
        shift = np.uint64(d * DIGIT_BITS)
        for i in range(m):
            j = np.int64((keys[i] >> shift) & dmask)
            t = pos[j]
            pos[j] = t + 1
            k2[t] = keys[i]
            r2[t, 0] = rows[i, 0]
            r2[t, 1] = rows[i, 1]
        keys, k2 = k2, keys
        rows, r2 = r2, rows
    return rows


@njit(cache=True)
def _initial_run(st, threshold):
    """Rows ``(weight, id key)`` for every edge >= threshold, best first.

    Vertices are visited in id order and emit their edges to higher ids
    sorted by the other id, which gives id-key order; a stable sort on
    weight finishes the job.
    """
    pm, sid, id2slot = st[PM], st[SID], st[ID2SLOT]
    nb, pool, tab, ctr = st[NB], st[POOL], st[TAB], st[CTR]
    n = sid.shape[0]
    run = np.empty((ctr[N_EDGES], 2), dtype=np.float64)
    buf = np.empty((16, 2), dtype=np.float64)
    m = 0
    for i in range(n):
        s = id2slot[i]
        if s < 0:
            continue
        ctr[TOKEN] += 1
        token = ctr[TOKEN]
        pm[s, 1] = token
        if buf.shape[0] < nb[s, 2]:
            buf = np.empty((2 * nb[s, 2], 2), dtype=np.float64)
        cnt = 0
        node = nb[s, 0]
        while node != -1:
            k = _find(pm, pool[node, 0])
            node = pool[node, 1]
            if sid[k] < i or pm[k, 1] == token:
                continue
            pm[k, 1] = token
            pos = _lookup(tab, _key(s, k, n), n)
            if pos < 0 or not tab[pos, 1] >= threshold:
                continue
            buf[cnt, 0] = tab[pos, 1] + 0.0    # no negative zero
            buf[cnt, 1] = sid[k]
            cnt += 1
        if cnt > 32:
            buf[:cnt] = buf[:cnt][np.argsort(buf[:cnt, 1])]
        else:
            for t in range(1, cnt):
                j = t
                while j > 0 and buf[j - 1, 1] > buf[j, 1]:
                    _swap(buf, j - 1, j)
                    j -= 1
        for t in range(cnt):
            run[m, 0] = buf[t, 0]
            run[m, 1] = i * n + np.int64(buf[t, 1])
            m += 1
    run = run[:m]
    # non-negative doubles order like their bit patterns; invert for desc
    bits = run[:, 0].copy().view(np.uint64)
    keys = np.empty(m, dtype=np.uint64)
    top = np.uint64(0xFFFFFFFFFFFFFFFF)
    for t in range(m):
        keys[t] = top - bits[t]
    return _stable_sort_by(keys, run)


@njit(cache=True)
def merge_stage(st, threshold):
    """Contract the heaviest edge while its weight is >= ``threshold``.

    Ties go to the smaller ``(min id, max id)`` pair. Whenever an edge gets a
    new weight or id key a fresh entry is pushed. An entry whose ids are both
    live and whose weight equals the current edge weight is then
    interchangeable with a current one (ids never return, and an edge between
    live ids only vanishes by contracting them), so all others are dropped.
    Entries present at the start come from a sorted run, later ones from a
    heap. Returns the number of contractions, or ``NEED_POOL``.
    """
    id2slot, sid = st[ID2SLOT], st[SID]
    nb, pool, tab, ctr = st[NB], st[POOL], st[TAB], st[CTR]
    n = id2slot.shape[0]

    run = _initial_run(st, threshold)
    r = 0
    cap = 1024
    h = np.empty((cap, 2), dtype=np.float64)
    size = 0

    changed = np.empty(n, dtype=np.int64)
    merges = 0
    while r < run.shape[0] or size > 0:
        from_run = r < run.shape[0] and (size == 0 or _before(run, r, h, 0))
        if from_run:
            w, ik = run[r, 0], np.int64(run[r, 1])
        else:
            w, ik = h[0, 0], np.int64(h[0, 1])
        a = id2slot[ik // n]
        b = id2slot[ik % n]
        pos = -1
        if a >= 0 and b >= 0:
            pos = _lookup(tab, _key(a, b, n), n)
        valid = pos >= 0 and tab[pos, 1] == w
        if valid and not _pool_fits(nb, pool, ctr, a, b):
            return NEED_POOL
        if from_run:
            r += 1
        else:
            size = _pop_root(h, size)
        if not valid:
            continue

        kept, c = merge_slots(st, a, b, changed)
        merges += 1
        if size + c > cap:
            cap = 2 * (size + c)
            grown = np.empty((cap, 2), dtype=np.float64)
            grown[:size] = h[:size]
            h = grown
        for j in range(c):
            k = changed[j]
            pos = _lookup(tab, _key(kept, k, n), n)
            if tab[pos, 1] >= threshold:
                h[size, 0] = tab[pos, 1]
                h[size, 1] = _id_key(sid, kept, k, n)
                size += 1
                _sift_up(h, size - 1)
    return merges


# -- edge insertion ------------------------------------------------------------

@njit(cache=True)
def add_edges(st, src, dst, w):
    """Map raw vertex pairs onto current vertices and merge them in as edges.

    Raw weights landing on one vertex pair are averaged; the aggregate is
    averaged with any existing edge between the pair. New edges are inserted
    in order of first appearance. The caller reserves table room for
    ``len(src)`` new edges and pool room for twice that.
    """
    pm, nb, pool, tab, ctr = st[PM], st[NB], st[POOL], st[TAB], st[CTR]
    n = pm.shape[0]
    m = src.shape[0]
    if m == 0:
        return 0

    # per-pair aggregation rows: key, weight sum, count (-1 once flushed)
    cap = 2 * m
    agg = np.zeros((cap, 3), dtype=np.float64)
    agg[:, 0] = EMPTY
    slot_of = np.full(m, -1, dtype=np.int64)
    for i in range(m):
        a = _find(pm, src[i])
        b = _find(pm, dst[i])
        if a == b:
            continue
        key = _key(a, b, n)
        fkey = np.float64(key)
        j = _home(key, n, cap)
        while agg[j, 0] != EMPTY and agg[j, 0] != fkey:
            j += 1
            if j == cap:
                j = 0
        agg[j, 0] = fkey
        agg[j, 1] += w[i]
        agg[j, 2] += 1.0
        slot_of[i] = j

    groups = 0
    for i in range(m):
        j = slot_of[i]
        if j < 0 or agg[j, 2] < 0:
            continue
        mean = agg[j, 1] / agg[j, 2]
        agg[j, 2] = -1.0
        key = np.int64(agg[j, 0])
        pos = _lookup(tab, key, n)
        if pos >= 0:
            tab[pos, 1] = (tab[pos, 1] + mean) / 2.0
        else:
            _insert(tab, ctr, key, mean, n)
            _push_nb(nb, pool, ctr, key // n, key % n)
            _push_nb(nb, pool, ctr, key % n, key // n)
            ctr[N_EDGES] += 1
        groups += 1
    return groups


@njit(cache=True)
def add_fresh_edges(st, src, dst, w):
    """Fast path of ``add_edges`` for a graph without edges or contractions.

    Pairs must not repeat; neighbor lists are laid out contiguously per
    vertex. Returns False, leaving the state unusable, when a pair repeats.
    The caller reserves table room for ``len(src)`` edges and pool room for
    twice that.
    """
    nb, pool, tab, ctr = st[NB], st[POOL], st[TAB], st[CTR]
    n = nb.shape[0]
    m = src.shape[0]
    deg = np.zeros(n + 1, dtype=np.int64)
    for i in range(m):
        if src[i] != dst[i]:
            deg[src[i] + 1] += 1
            deg[dst[i] + 1] += 1
    for v in range(n):
        deg[v + 1] += deg[v]
    cursor = deg[:n].copy()
    cap = tab.shape[0]
    for i in range(m):
        a, b = src[i], dst[i]
        if a == b:
            continue
        key = _key(a, b, n)
        fkey = np.float64(key)
        j = _home(key, n, cap)
        while tab[j, 0] != EMPTY:
            if tab[j, 0] == fkey:
                return False
            j += 1
            if j == cap:
                j = 0
        tab[j, 0] = fkey
        tab[j, 1] = w[i]
        pool[cursor[a], 0] = b
        pool[cursor[a], 1] = cursor[a] + 1
        cursor[a] += 1
        pool[cursor[b], 0] = a
        pool[cursor[b], 1] = cursor[b] + 1
        cursor[b] += 1
        ctr[N_EDGES] += 1
    ctr[T_USED] = ctr[N_EDGES]
    for v in range(n):
        if deg[v + 1] > deg[v]:
            nb[v, 0] = deg[v]
            nb[v, 1] = deg[v + 1] - 1
            nb[v, 2] = deg[v + 1] - deg[v]
            pool[deg[v + 1] - 1, 1] = -1
    ctr[POOL_USED] = deg[n]
    return True


# -- pixel-grid edges ---------------------------------------------------------
#
# ``weights[y, x, r, j]`` joins pixel (x, y) to (x + gx[j] * d, y + gy[j] * d)
# with d = dists[t] and r = ranks[t]; ``index`` maps pixels to vertices (-1
# off the graph). NaN weights are skipped. BAD_WEIGHT flags a weight outside
# [0, 1].

BAD_WEIGHT = -2
_GX = np.array([1, -1, 0, 1], dtype=np.int64)
_GY = np.array([0, 1, 1, 1], dtype=np.int64)


@njit(cache=True)
def grid_degrees(weights, index, ranks, dists, n):
    """Neighbor-list offsets ``(n + 1,)`` of the grid pairs, or None on a bad weight."""
    h, w = index.shape
    deg = np.zeros(n + 1, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            a = index[y, x]
            if a < 0:
                continue
            for t in range(ranks.shape[0]):
                d = dists[t]
                for j in range(4):
                    qy = y + _GY[j] * d
                    qx = x + _GX[j] * d
                    if not (qy < h and 0 <= qx < w):
                        continue
                    b = index[qy, qx]
                    v = weights[y, x, ranks[t], j]
                    if b < 0 or np.isnan(v):
                        continue
                    if not (0.0 <= v <= 1.0):
                        return None
                    deg[a + 1] += 1
                    deg[b + 1] += 1
    for v in range(n):
        deg[v + 1] += deg[v]
    return deg


@njit(cache=True)
def fill_grid_edges(st, weights, index, ranks, dists, offs):
    """Edges of a graph without edges or contractions, straight from the grid.

    ``offs`` comes from ``grid_degrees``. The caller reserves table room for
    ``offs[-1] // 2`` edges and pool room for ``offs[-1]`` entries.
    """
    nb, pool, tab, ctr = st[NB], st[POOL], st[TAB], st[CTR]
    n = nb.shape[0]
    h, w = index.shape
    cap = tab.shape[0]
    cursor = offs[:n].copy()
    for y in range(h):
        for x in range(w):
            a = index[y, x]
            if a < 0:
                continue
            for t in range(ranks.shape[0]):
                d = dists[t]
                for j in range(4):
                    qy = y + _GY[j] * d
                    qx = x + _GX[j] * d
                    if not (qy < h and 0 <= qx < w):
                        continue
                    b = index[qy, qx]
                    v = weights[y, x, ranks[t], j]
                    if b < 0 or np.isnan(v):
                        continue
                    # forward offsets land later in scanline order: a < b
                    key = a * n + b
                    i = _home(key, n, cap)
                    while tab[i, 0] != EMPTY:
                        i += 1
                        if i == cap:
                            i = 0
                    tab[i, 0] = key
                    tab[i, 1] = v
                    pool[cursor[a], 0] = b
                    pool[cursor[a], 1] = cursor[a] + 1
                    cursor[a] += 1
                    pool[cursor[b], 0] = a
                    pool[cursor[b], 1] = cursor[b] + 1
                    cursor[b] += 1
    ctr[N_EDGES] = offs[n] // 2
    ctr[T_USED] = ctr[N_EDGES]
    for v in range(n):
        if offs[v + 1] > offs[v]:
            nb[v, 0] = offs[v]
            nb[v, 1] = offs[v + 1] - 1
            nb[v, 2] = offs[v + 1] - offs[v]
            pool[offs[v + 1] - 1, 1] = -1
    ctr[POOL_USED] = offs[n]


@njit(cache=True)
def _mix(key, shift):
    """Fibonacci hash of ``key`` into ``2 ** (64 - shift)`` rows."""
    return np.int64((np.uint64(key) * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(shift))


@njit(cache=True)
def _grid_cross_pairs(st, weights, index, ranks, dists):
    """Pairs joining two current vertices, bucketed stably by (rank, offset).

    Returns ``(a, b, v)`` slot and weight arrays in the order distance rank,
    offset, scanline, or None on a bad weight.
    """
    pm = st[PM]
    h, w = index.shape
    nt = ranks.shape[0]
    roots = np.full((h, w), -1, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            if index[y, x] >= 0:
                roots[y, x] = _find(pm, index[y, x])
    cap = 1024
    tj = np.empty(cap, dtype=np.int64)
    ends = np.empty((cap, 2), dtype=np.int64)
    vals = np.empty(cap, dtype=np.float64)
    m = 0
    for y in range(h):
        for x in range(w):
            a = roots[y, x]
            if a < 0:
                continue
            for t in range(nt):
                d = dists[t]
                for j in range(4):
                    qy = y + _GY[j] * d
                    qx = x + _GX[j] * d
                    if not (qy < h and 0 <= qx < w):
                        continue
                    b = roots[qy, qx]
                    v = weights[y, x, ranks[t], j]
                    if b < 0 or np.isnan(v):
                        continue
                    if not (0.0 <= v <= 1.0):
                        return None
                    if a == b:
                        continue
                    if m == cap:
                        cap *= 2
                        tj = np.concatenate((tj, np.empty(m, dtype=np.int64)))
                        ends = np.concatenate((ends, np.empty((m, 2), dtype=np.int64)))
                        vals = np.concatenate((vals, np.empty(m)))
                    tj[m] = t * 4 + j
                    ends[m, 0] = a
                    ends[m, 1] = b
                    vals[m] = v
                    m += 1
    start = np.zeros(4 * nt + 1, dtype=np.int64)
    for i in range(m):
        start[tj[i] + 1] += 1
    for g in range(4 * nt):
        start[g + 1] += start[g]
    sa = np.empty(m, dtype=np.int64)
    sb = np.empty(m, dtype=np.int64)
    sv = np.empty(m, dtype=np.float64)
    for i in range(m):
        k = start[tj[i]]
        start[tj[i]] += 1
        sa[k] = ends[i, 0]
        sb[k] = ends[i, 1]
        sv[k] = vals[i]
    return sa, sb, sv


@njit(cache=True)
def grid_pair_means(st, weights, index, ranks, dists):
    """Grid pairs grouped by current vertex pair, in order of first appearance.

    Pairs are visited distance rank first, then offset, then scanline; the
    weights of a group are summed in that order and divided by the count.
    Returns ``(src, dst, mean)`` slot arrays, or None on a bad weight.
    """
    n = st[PM].shape[0]
    cross = _grid_cross_pairs(st, weights, index, ranks, dists)
    if cross is None:
        return None
    pa, pb, pv = cross
    m = pa.shape[0]
    bits = 1
    while (1 << bits) < 2 * m + 2:
        bits += 1
    cap = 1 << bits
    shift = 64 - bits
    slot = np.full(cap, -1, dtype=np.int64)
    keys = np.empty(m, dtype=np.int64)
    sums = np.empty(m, dtype=np.float64)
    counts = np.empty(m, dtype=np.int64)
    used = 0
    last_key = -1
    last_g = -1
    for p in range(m):
        key = _key(pa[p], pb[p], n)
        v = pv[p]
        # runs of pixels tend to join the same two vertices
        if key != last_key:
            i = _mix(key, shift)
            while slot[i] >= 0 and keys[slot[i]] != key:
                i += 1
                if i == cap:
                    i = 0
            if slot[i] < 0:
                slot[i] = used
                keys[used] = key
                sums[used] = 0.0
                counts[used] = 0
                used += 1
            last_key = key
            last_g = slot[i]
        sums[last_g] += v
        counts[last_g] += 1
    src = keys[:used] // n
    dst = keys[:used] % n
    return src, dst, sums[:used] / counts[:used]


# -- read-out -----------------------------------------------------------------

@njit(cache=True)
def vertex_labels(st):
    """Logical id of the vertex holding each initial vertex."""
    alive, sid, mem, mem_next = st[ALIVE], st[SID], st[MEM], st[MEM_NEXT]
    n = alive.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for s in range(n):
        if not alive[s]:
            continue
        m = mem[s, 0]
        while m != -1:
            out[m] = sid[s]
            m = mem_next[m]
    return out


@njit(cache=True)
def edge_arrays(st):
    sid, tab = st[SID], st[TAB]
    n = sid.shape[0]
    live = 0
    for i in range(tab.shape[0]):
        if tab[i, 0] >= 0:
            live += 1
    a = np.empty(live, dtype=np.int64)
    b = np.empty(live, dtype=np.int64)
    w = np.empty(live, dtype=np.float64)
    j = 0
    for i in range(tab.shape[0]):
        if tab[i, 0] >= 0:
            k = np.int64(tab[i, 0])
            ia = sid[k // n]
            ib = sid[k % n]
            a[j] = min(ia, ib)
            b[j] = max(ia, ib)
            w[j] = tab[i, 1]
            j += 1
    return a, b, w


@njit(cache=True)
def edge_weight(st, sa, sb):
    n = st[PM].shape[0]
    pos = _lookup(st[TAB], _key(sa, sb, n), n)
    if pos < 0:
        return -1.0
    return st[TAB][pos, 1]
