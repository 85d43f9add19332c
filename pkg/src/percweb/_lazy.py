"""Lazy exact backbone membership and walk kernels.

Membership of (x, n) in the horizon-T backbone is decided by an iterative
depth-first search for an open path to level T, memoised per site.  The
answer is exact over the whole of Z (no window truncation); the memo only has
to cover the sites actually touched, and any access outside it raises the
overflow flag so the caller can retry with a wider memo.

Memo words hold ``stamp << 2 | state`` with state 1 = in backbone, 2 = not.
Bumping the stamp invalidates the memo in O(1) between replicates.
"""
import numpy as np
from numba import njit

from .rng import OMEGA, PERM, derive, perm_index, uniform

PERMS = np.array(
    [[-1, 0, 1], [-1, 1, 0], [0, -1, 1], [0, 1, -1], [1, -1, 0], [1, 0, -1]],
    dtype=np.int64,
)
SENTINEL = np.iinfo(np.int64).min
STAMP_LIMIT = (1 << 30) - 1

F_OVERFLOW = 0
F_BUDGET = 1


@njit(cache=True)
def _child(cx, k, toward):
    # straight first, then toward the memo centre, then away
    if k == 0:
        return cx
    d = 1 if cx < toward else -1
    return cx + d if k == 1 else cx - d


@njit(cache=True)
def member(memo, stamp, x0, key, p, T, x, n, stk, flags, toward):
    W = memo.shape[0]
    i = x - x0
    if i < 0 or i >= W:
        flags[F_OVERFLOW] = 1
        return False
    tag = np.uint32(stamp << 2)
    v = memo[i, n]
    if (v >> 2) == stamp:
        return (v & 3) == 1
    if uniform(key, x, n) >= p:
        memo[i, n] = tag | 2
        return False
    if n == T:
        memo[i, n] = tag | 1
        return True
    sp = 0
    stk[0, 0] = x
    stk[0, 1] = n
    stk[0, 2] = 0
    found = False
    while sp >= 0:
        cx = stk[sp, 0]
        cn = stk[sp, 1]
        k = stk[sp, 2]
        if k == 0:
            # cheap pass: any child already known to be in the backbone
            for j in range(3):
                y = _child(cx, j, toward)
                iy = y - x0
                if iy < 0 or iy >= W:
                    continue
                vv = memo[iy, cn + 1]
                if (vv >> 2) == stamp and (vv & 3) == 1:
                    found = True
                    break
            if found:
                break
        pushed = False
        while k < 3:
            y = _child(cx, k, toward)
            k += 1
            iy = y - x0
            if iy < 0 or iy >= W:
                flags[F_OVERFLOW] = 1
                continue
            vv = memo[iy, cn + 1]
            if (vv >> 2) == stamp:
                if (vv & 3) == 1:
                    found = True
                    break
                continue
            if uniform(key, y, cn + 1) >= p:
                memo[iy, cn + 1] = tag | 2
                continue
            if cn + 1 == T:
                memo[iy, cn + 1] = tag | 1
                found = True
                break
            stk[sp, 2] = k
            sp += 1
            stk[sp, 0] = y
            stk[sp, 1] = cn + 1
            stk[sp, 2] = 0
            pushed = True
            break
        if found:
            break
        if not pushed:
            memo[cx - x0, cn] = tag | 2
            sp -= 1
    if found:
        for s in range(sp + 1):
            memo[stk[s, 0] - x0, stk[s, 1]] = tag | 1
        return True
    return False


@njit(cache=True)
def next_left(memo, stamp, x0, key, p, T, x, n, stk, flags, toward):
    y = x
    while y >= x0:
        if member(memo, stamp, x0, key, p, T, y, n, stk, flags, toward):
            return y
        y -= 1
    flags[F_OVERFLOW] = 1
    return x


@njit(cache=True)
def step(memo, stamp, x0, okey, pkey, p, T, x, n, stk, flags, toward):
    pi = perm_index(pkey, x, n)
    for j in range(3):
        y = x + PERMS[pi, j]
        if member(memo, stamp, x0, okey, p, T, y, n + 1, stk, flags, toward):
            return y
    return x + PERMS[pi, 0]


@njit(nogil=True, cache=True)
def survival_kernel(master, tag, r0, r1, p, T, W):
    memo = np.zeros((W, T + 2), np.uint32)
    stk = np.empty((T + 2, 3), np.int64)
    flags = np.zeros(2, np.int64)
    x0 = -(W // 2)
    hits = np.zeros(r1 - r0, np.bool_)
    stamp = 0
    for r in range(r0, r1):
        stamp += 1
        if stamp > STAMP_LIMIT:
            memo[:, :] = 0
            stamp = 1
        rs = derive(master, tag, r, 0)
        okey = derive(rs, OMEGA, 0, 0)
        hits[r - r0] = member(memo, stamp, x0, okey, p, T, 0, 0, stk, flags, 0)
    return hits, flags


@njit(nogil=True, cache=True)
def walks_kernel(master, tag, r0, r1, p, T, W, xc, sx, st, n_end,
                 perm_mode, n_clusters, start_mode, rec_t, track_pairs,
                 stop_rule, far_thr, acc_sum, acc_sq, acc_cnt,
                 quenched, q_omega_seed, max_attempts):
    """Run replicates r0..r1-1 of an m-walk experiment.

    start_mode: 0 condition every start into the backbone by rejection,
    1 project starts through next_left, 2 keep only starts already in the
    backbone (no rejection).  perm_mode 0 shares permutation stream 0, 1
    gives walk i stream i+1.  n_clusters > 1 gives walk i its own omega
    stream i+1.  stop_rule 0 runs to n_end, 1 stops once every pair met,
    2 once every pair came near or reached distance far_thr.
    """
    m = sx.shape[0]
    R = r1 - r0
    nrec = rec_t.shape[0]
    npairs = m * (m - 1) // 2 if track_pairs else 0
    memo = np.zeros((n_clusters, W, T + 2), np.uint32)
    stk = np.empty((T + 2, 3), np.int64)
    flags = np.zeros(2, np.int64)
    x0 = xc - W // 2
    pos = np.full((R, m, nrec), SENTINEL, np.int64)
    tmeet = np.full((R, npairs), -1, np.int64)
    tnear = np.full((R, npairs), -1, np.int64)
    tfar = np.full((R, npairs), -1, np.int64)
    spread = np.full((R, npairs), -1, np.int64)
    attempts = np.zeros(R, np.int64)
    okeys = np.empty(n_clusters, np.uint64)
    pkeys = np.empty(m, np.uint64)
    x = np.empty(m, np.int64)
    xn = np.empty(m, np.int64)
    alive = np.empty(m, np.bool_)
    coalescing = perm_mode == 0 and n_clusters == 1
    do_acc = acc_cnt.shape[0] > 0 and m >= 2
    nacc = acc_cnt.shape[0]
    stamp = 0
    if quenched:
        okeys[0] = derive(q_omega_seed, OMEGA, 0, 0)
        stamp = 1
    for r in range(r0, r1):
        ri = r - r0
        att = 0
        while True:
            if att >= max_attempts:
                flags[F_BUDGET] = 1
                return pos, tmeet, tnear, tfar, spread, attempts, flags
            rs = derive(master, tag, r, att)
            att += 1
            if not quenched:
                stamp += 1
                if stamp > STAMP_LIMIT:
                    memo[:, :, :] = 0
                    stamp = 1
                for c in range(n_clusters):
                    okeys[c] = derive(rs, OMEGA, c if n_clusters == 1 else c + 1, 0)
            for i in range(m):
                pkeys[i] = derive(rs, PERM, 0 if perm_mode == 0 else i + 1, 0)
            ok = True
            for i in range(m):
                c = 0 if n_clusters == 1 else i
                if start_mode == 1:
                    x[i] = next_left(memo[c], stamp, x0, okeys[c], p, T,
                                     sx[i], st[i], stk, flags, xc)
                    alive[i] = True
                else:
                    x[i] = sx[i]
                    alive[i] = member(memo[c], stamp, x0, okeys[c], p, T,
                                      sx[i], st[i], stk, flags, xc)
                    if start_mode == 0 and not alive[i]:
                        ok = False
                        break
            if ok:
                break
        attempts[ri] = att
        n = n_end
        for i in range(m):
            if alive[i] and st[i] < n:
                n = st[i]
        ir = 0
        while ir < nrec and rec_t[ir] < n:
            ir += 1
        while True:
            while ir < nrec and rec_t[ir] == n:
                for i in range(m):
                    if alive[i] and st[i] <= n:
                        pos[ri, i, ir] = x[i]
                ir += 1
            done = True
            if npairs > 0:
                k = 0
                for i in range(m):
                    for j in range(i + 1, m):
                        if alive[i] and alive[j] and st[i] <= n and st[j] <= n:
                            ad = abs(x[j] - x[i])
                            if tnear[ri, k] < 0 and ad <= 1:
                                tnear[ri, k] = n
                            if tmeet[ri, k] < 0 and ad == 0:
                                tmeet[ri, k] = n
                            if tnear[ri, k] >= 0 and tmeet[ri, k] < 0:
                                if ad > spread[ri, k]:
                                    spread[ri, k] = ad
                            if far_thr > 0 and tfar[ri, k] < 0 and ad >= far_thr:
                                tfar[ri, k] = n
                            if stop_rule == 1 and tmeet[ri, k] < 0:
                                done = False
                            elif stop_rule == 2 and tnear[ri, k] < 0 and tfar[ri, k] < 0:
                                done = False
                        elif alive[i] and alive[j]:
                            done = False
                        k += 1
            if n >= n_end:
                break
            if stop_rule != 0 and npairs > 0 and done and ir >= nrec:
                break
            for i in range(m):
                if not alive[i] or st[i] > n:
                    continue
                dup = -1
                if coalescing:
                    for j in range(i):
                        if alive[j] and st[j] <= n and x[j] == x[i]:
                            dup = j
                            break
                if dup >= 0:
                    xn[i] = xn[dup]
                else:
                    c = 0 if n_clusters == 1 else i
                    xn[i] = step(memo[c], stamp, x0, okeys[c], pkeys[i], p, T,
                                 x[i], n, stk, flags, xc)
            if do_acc and alive[0] and alive[1] and st[0] <= n and st[1] <= n:
                d = x[1] - x[0]
                if d != 0:
                    a = abs(d)
                    if a < nacc:
                        inc = (xn[1] - xn[0]) - d
                        acc_sum[a] += inc if d > 0 else -inc
                        acc_sq[a] += inc * inc
                        acc_cnt[a] += 1
            for i in range(m):
                if alive[i] and st[i] <= n:
                    x[i] = xn[i]
            n += 1
    return pos, tmeet, tnear, tfar, spread, attempts, flags


@njit(nogil=True, cache=True)
def crossing_kernel(master, tag, r0, r1, p, T, W, u, tt, right, max_attempts):
    """Indicator per replicate that a path touches [-u, u] x [0, tt] and the
    line x = right within [0, 2 tt].  Lattice positions, speed-1 pruning."""
    R = r1 - r0
    memo = np.zeros((W, T + 2), np.uint32)
    stk = np.empty((T + 2, 3), np.int64)
    flags = np.zeros(2, np.int64)
    x0 = -(W // 2)
    hit = np.zeros(R, np.bool_)
    cur = np.empty(W, np.int64)
    nxt = np.empty(W, np.int64)
    mark = np.zeros(W, np.int64)
    stamp = 0
    gen = 0
    for r in range(r0, r1):
        stamp += 1
        if stamp > STAMP_LIMIT:
            memo[:, :] = 0
            stamp = 1
        rs = derive(master, tag, r, 0)
        okey = derive(rs, OMEGA, 0, 0)
        pkey = derive(rs, PERM, 0, 0)
        found = False
        # A: touch the rectangle first, reach x >= right by time 2 tt
        ncur = 0
        for n in range(2 * tt + 1):
            gen += 1
            nn = 0
            for k in range(ncur):
                y = cur[k]
                if y - x0 >= 0 and y - x0 < W and mark[y - x0] != gen:
                    mark[y - x0] = gen
                    nxt[nn] = y
                    nn += 1
            if n <= tt:
                for y in range(-u, u + 1):
                    if y + (2 * tt - n) < right:
                        continue
                    if mark[y - x0] != gen and member(memo, stamp, x0, okey, p, T, y, n, stk, flags, 0):
                        mark[y - x0] = gen
                        nxt[nn] = y
                        nn += 1
            ncur = 0
            for k in range(nn):
                y = nxt[k]
                if y >= right:
                    found = True
                    break
                if y + (2 * tt - n) >= right:
                    cur[ncur] = y
                    ncur += 1
            if found or (ncur == 0 and n >= tt):
                break
            for k in range(ncur):
                cur[k] = step(memo, stamp, x0, okey, pkey, p, T, cur[k], n, stk, flags, 0)
        # B: touch x >= right first, enter the rectangle by time tt
        if not found and tt >= right - u:
            ncur = 0
            for n in range(tt + 1):
                gen += 1
                nn = 0
                for k in range(ncur):
                    y = cur[k]
                    if mark[y - x0] != gen:
                        mark[y - x0] = gen
                        nxt[nn] = y
                        nn += 1
                for y in range(right, u + (tt - n) + 1):
                    if mark[y - x0] != gen and member(memo, stamp, x0, okey, p, T, y, n, stk, flags, 0):
                        mark[y - x0] = gen
                        nxt[nn] = y
                        nn += 1
                ncur = 0
                for k in range(nn):
                    y = nxt[k]
                    if -u <= y <= u:
                        found = True
                        break
                    if y - (tt - n) <= u:
                        cur[ncur] = y
                        ncur += 1
                if found:
                    break
                for k in range(ncur):
                    cur[k] = step(memo, stamp, x0, okey, pkey, p, T, cur[k], n, stk, flags, 0)
        hit[r - r0] = found
    return hit, flags
