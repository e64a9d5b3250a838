"""Compiled inner loops of the erasure decoders.

Each CN keeps the number of still-erased neighbours and the XOR of their
indices, so the single unknown neighbour of a degree-one CN is read off in
O(1). All kernels mutate only the arrays they allocate.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _cn_state(cn_ptr, cn_adj, erased):
    n_cn = len(cn_ptr) - 1
    deg = np.zeros(n_cn, np.int64)
    acc = np.zeros(n_cn, np.int64)
    for c in range(n_cn):
        for e in range(cn_ptr[c], cn_ptr[c + 1]):
            v = cn_adj[e]
            if erased[v]:
                deg[c] += 1
                acc[c] ^= v
    return deg, acc


@njit(cache=True)
def peel(vn_ptr, vn_adj, cn_ptr, cn_adj, erased_in, uniforms, N, track_pos):
    """Sequential peeling with a uniformly chosen degree-one CN per step.

    Returns ``(erased, r1_counts, tracked)`` where ``r1_counts[k]`` is the number of
    degree-one CNs after ``k`` steps and ``tracked[k]`` the erased count at VN
    position ``track_pos`` (or -1 if ``track_pos < 0``).
    """
    erased = erased_in.copy()
    deg, acc = _cn_state(cn_ptr, cn_adj, erased)
    n_cn = len(deg)
    pool = np.empty(n_cn, np.int64)
    where = np.full(n_cn, -1, np.int64)
    size = 0
    for c in range(n_cn):
        if deg[c] == 1:
            pool[size] = c
            where[c] = size
            size += 1
    n_erased = 0
    tracked_now = 0
    for v in range(len(erased)):
        if erased[v]:
            n_erased += 1
            if track_pos >= 0 and v // N == track_pos:
                tracked_now += 1

    counts = np.empty(n_erased + 1, np.int64)
    tracked = np.empty(n_erased + 1, np.int64)
    counts[0] = size
    tracked[0] = tracked_now if track_pos >= 0 else -1
    steps = 0
    while size > 0 and steps < n_erased:
        k = int(uniforms[steps] * size)
        if k >= size:
            k = size - 1
        c = pool[k]
        v = acc[c]
        erased[v] = False
        if track_pos >= 0 and v // N == track_pos:
            tracked_now -= 1
        for e in range(vn_ptr[v], vn_ptr[v + 1]):
            c2 = vn_adj[e]
            deg[c2] -= 1
            acc[c2] ^= v
            if deg[c2] == 1:
                where[c2] = size
                pool[size] = c2
                size += 1
            elif deg[c2] == 0:
                i = where[c2]
                last = pool[size - 1]
                pool[i] = last
                where[last] = i
                where[c2] = -1
                size -= 1
        steps += 1
        counts[steps] = size
        tracked[steps] = tracked_now if track_pos >= 0 else -1
    return erased, counts[: steps + 1], tracked[: steps + 1]


@njit(cache=True)
def _leftmost(pos_count, start):
    p = start
    while p < len(pos_count) and pos_count[p] == 0:
        p += 1
    return p


@njit(cache=True)
def bp_flood(vn_ptr, vn_adj, cn_ptr, cn_adj, erased_in, N, max_iters):
    """Flooding BP over the BEC at node level.

    In iteration ``l`` every CN with exactly one erased neighbour at the end of
    iteration ``l-1`` recovers that neighbour. Only CNs whose erased-neighbour
    count changed can become degree-one, so the work per frame is O(edges).

    Returns ``(erased, recovered_per_iter, p_left_per_iter)``.
    """
    erased = erased_in.copy()
    deg, acc = _cn_state(cn_ptr, cn_adj, erased)
    n_cn = len(deg)
    n_vn = len(erased)
    L = n_vn // N
    pos_count = np.zeros(L, np.int64)
    for v in range(n_vn):
        if erased[v]:
            pos_count[v // N] += 1

    frontier = np.empty(n_cn, np.int64)
    nf = 0
    for c in range(n_cn):
        if deg[c] == 1:
            frontier[nf] = c
            nf += 1
    nxt = np.empty(n_cn, np.int64)
    stamp = np.zeros(n_cn, np.int64)
    targets = np.empty(n_vn, np.int64)
    picked = np.zeros(n_vn, np.bool_)

    cap = 64
    rec = np.empty(cap, np.int64)
    pl = np.empty(cap, np.int64)
    p_left = _leftmost(pos_count, 0)
    it = 0
    while nf > 0 and it < max_iters:
        it += 1
        nt = 0
        for k in range(nf):
            c = frontier[k]
            if deg[c] == 1:
                v = acc[c]
                if not picked[v]:
                    picked[v] = True
                    targets[nt] = v
                    nt += 1
        nn = 0
        for k in range(nt):
            v = targets[k]
            picked[v] = False
            erased[v] = False
            pos_count[v // N] -= 1
            for e in range(vn_ptr[v], vn_ptr[v + 1]):
                c2 = vn_adj[e]
                deg[c2] -= 1
                acc[c2] ^= v
                if deg[c2] == 1 and stamp[c2] != it:
                    stamp[c2] = it
                    nxt[nn] = c2
                    nn += 1
        tmp = frontier
        frontier = nxt
        nxt = tmp
        nf = nn
        p_left = _leftmost(pos_count, p_left)
        if it > cap:
            cap *= 2
            rec2 = np.empty(cap, np.int64)
            pl2 = np.empty(cap, np.int64)
            rec2[: it - 1] = rec[: it - 1]
            pl2[: it - 1] = pl[: it - 1]
            rec = rec2
            pl = pl2
        rec[it - 1] = nt
        pl[it - 1] = p_left
    return erased, rec[:it], pl[:it]


@njit(cache=True)
def bp_window(vn_ptr, vn_adj, cn_ptr, cn_adj, erased_in, N, M, W, I_in, I_s):
    """Sliding-window flooding BP.

    The window starts at position 0 for ``I_in`` iterations, then its left edge
    ``W_L`` advances by one position every ``I_s`` iterations up to ``L-1``.
    Only CNs at positions ``[W_L, W_L+W)`` are updated; erased VNs left of
    ``W_L`` are frozen and never recovered.

    Returns ``(erased, recovered_per_iter, p_left_per_iter, w_left_per_iter,
    overtaken)``; the per-iteration arrays are truncated at the iteration that
    cleared the last erasure.
    """
    erased = erased_in.copy()
    deg, acc = _cn_state(cn_ptr, cn_adj, erased)
    n_vn = len(erased)
    L = n_vn // N
    n_cpos = (len(cn_ptr) - 1) // M
    total = I_in + (L - 1) * I_s
    pos_count = np.zeros(L, np.int64)
    remaining = 0
    for v in range(n_vn):
        if erased[v]:
            pos_count[v // N] += 1
            remaining += 1

    rec = np.zeros(total, np.int64)
    pl = np.zeros(total, np.int64)
    wl_hist = np.zeros(total, np.int64)
    targets = np.empty(n_vn, np.int64)
    picked = np.zeros(n_vn, np.bool_)
    p_left = _leftmost(pos_count, 0)
    overtaken = False
    it = 0
    for wl in range(L):
        n_it = I_in if wl == 0 else I_s
        c_lo = wl * M
        hi = wl + W
        if hi > n_cpos:
            hi = n_cpos
        c_hi = hi * M
        stalled = False
        for _ in range(n_it):
            nt = 0
            if not stalled and remaining > 0:
                for c in range(c_lo, c_hi):
                    if deg[c] == 1:
                        v = acc[c]
                        if v // N >= wl and not picked[v]:
                            picked[v] = True
                            targets[nt] = v
                            nt += 1
                for k in range(nt):
                    v = targets[k]
                    picked[v] = False
                    erased[v] = False
                    pos_count[v // N] -= 1
                    remaining -= 1
                    for e in range(vn_ptr[v], vn_ptr[v + 1]):
                        c2 = vn_adj[e]
                        deg[c2] -= 1
                        acc[c2] ^= v
                if nt == 0:
                    stalled = True
                p_left = _leftmost(pos_count, p_left)
            rec[it] = nt
            pl[it] = p_left
            wl_hist[it] = wl
            if p_left < wl:
                overtaken = True
            it += 1
            if remaining == 0:
                return erased, rec[:it], pl[:it], wl_hist[:it], overtaken
    return erased, rec[:it], pl[:it], wl_hist[:it], overtaken


@njit(cache=True)
def csr(rows, cols, n_rows):
    """Stable counting sort of ``(rows, cols)`` into row pointers and column lists.

    Rows keep the input order of their columns.
    """
    ptr = np.zeros(n_rows + 1, np.int64)
    for r in rows:
        ptr[r + 1] += 1
    for r in range(n_rows):
        ptr[r + 1] += ptr[r]
    fill = ptr[:-1].copy()
    adj = np.empty(len(rows), np.int64)
    for k in range(len(rows)):
        r = rows[k]
        adj[fill[r]] = cols[k]
        fill[r] += 1
    return ptr, adj
