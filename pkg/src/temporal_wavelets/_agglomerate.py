"""Compiled kernels for constrained agglomeration and dendrogram cutting."""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _find(uf, x):
    r = x
    while uf[r] != r:
        r = uf[r]
    while uf[x] != r:
        nx = uf[x]
        uf[x] = r
        x = nx
    return r


@njit(cache=True, nogil=True)
def _before(d1, lo1, hi1, d2, lo2, hi2):
    if d1 != d2:
        return d1 < d2
    if lo1 != lo2:
        return lo1 < lo2
    return hi1 < hi2


@njit(cache=True, nogil=True)
def _heap_less(bd, blo, bhi, a, b):
    return _before(bd[a], blo[a], bhi[a], bd[b], blo[b], bhi[b])


@njit(cache=True, nogil=True)
def _heap_fix(heap, pos, size, bd, blo, bhi, i):
    # sift up
    while i > 0:
        p = (i - 1) >> 1
        if _heap_less(bd, blo, bhi, heap[i], heap[p]):
            heap[i], heap[p] = heap[p], heap[i]
            pos[heap[i]] = i
            pos[heap[p]] = p
            i = p
        else:
            break
    _heap_sift_down(heap, pos, size, bd, blo, bhi, i)


@njit(cache=True, nogil=True)
def _heap_sift_down(heap, pos, size, bd, blo, bhi, i):
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        c = l
        if l + 1 < size and _heap_less(bd, blo, bhi, heap[l + 1], heap[l]):
            c = l + 1
        if _heap_less(bd, blo, bhi, heap[c], heap[i]):
            heap[i], heap[c] = heap[c], heap[i]
            pos[heap[i]] = i
            pos[heap[c]] = c
            i = c
        else:
            break


@njit(cache=True, nogil=True)
def _heap_remove(heap, pos, size, bd, blo, bhi, slot):
    i = pos[slot]
    size -= 1
    pos[slot] = -1
    if i != size:
        heap[i] = heap[size]
        pos[heap[i]] = i
        _heap_fix(heap, pos, size, bd, blo, bhi, i)
    return size


@njit(cache=True, nogil=True)
def _dist(sums, sizes, a, b):
    acc = 0.0
    for j in range(sums.shape[1]):
        acc += sums[a, j] * sums[b, j]
    return 1.0 - acc / (sizes[a] * sizes[b])


@njit(cache=True, nogil=True)
def _refresh(a, force, pool, pool_id, pool_d, start, length, uf, mark, stamp,
             sums, sizes, cid, bd, blo, bhi, bslot):
    """Compact the neighbour list of slot ``a`` and recompute its best pair.

    Stored distances are reused when the partner still carries the id they
    were computed against, unless ``force`` is set.
    """
    w = start[a]
    bd[a] = np.inf
    blo[a] = -1
    bhi[a] = -1
    bslot[a] = -1
    me = cid[a]
    for p in range(start[a], start[a] + length[a]):
        c = _find(uf, pool[p])
        if c == a or mark[c] == stamp:
            continue
        mark[c] = stamp
        other = cid[c]
        if force or pool_id[p] != other:
            d = _dist(sums, sizes, a, c)
        else:
            d = pool_d[p]
        pool[w] = c
        pool_id[w] = other
        pool_d[w] = d
        w += 1
        lo = min(me, other)
        hi = max(me, other)
        if _before(d, lo, hi, bd[a], blo[a], bhi[a]):
            bd[a] = d
            blo[a] = lo
            bhi[a] = hi
            bslot[a] = c
    length[a] = w - start[a]


@njit(cache=True, nogil=True)
def constrained_average_linkage_kernel(unit, indptr, indices):
    """Average-linkage agglomeration restricted to graph-adjacent clusters.

    ``unit`` holds centered, unit-norm feature rows so that the mean
    correlation distance between clusters A and B equals
    ``1 - sum(A) . sum(B) / (|A| |B|)``. At every step the adjacent pair with
    the smallest ``(distance, lower id, higher id)`` is merged. Each cluster
    tracks its best adjacent pair in an indexed heap; neighbour lists live in
    a shared pool and are compacted lazily through a union-find over slots.

    Returns ``(left, right, raw, size, roots)`` for the merges performed;
    cluster ids follow the usual convention (leaves ``0..n-1``, merge ``k``
    creates id ``n + k``).
    """
    n = unit.shape[0]
    sums = unit.copy()
    sizes = np.ones(n)
    cid = np.arange(n)
    uf = np.arange(n)
    alive = np.ones(n, dtype=np.bool_)

    cap = np.empty(n, dtype=np.int64)
    length = np.zeros(n, dtype=np.int64)
    start = np.empty(n, dtype=np.int64)
    total = 0
    for a in range(n):
        cap[a] = max(indptr[a + 1] - indptr[a], 4)
        total += cap[a]
    pool = np.empty(2 * total + 16, dtype=np.int64)
    pool_id = -np.ones(pool.size, dtype=np.int64)
    pool_d = np.empty(pool.size)
    used = 0
    for a in range(n):
        start[a] = used
        k = 0
        for p in range(indptr[a], indptr[a + 1]):
            b = indices[p]
            if b != a:
                pool[used + k] = b
                k += 1
        length[a] = k
        used += cap[a]

    mark = -np.ones(n, dtype=np.int64)
    stamp = 0
    bd = np.empty(n)
    blo = np.empty(n, dtype=np.int64)
    bhi = np.empty(n, dtype=np.int64)
    bslot = np.empty(n, dtype=np.int64)
    heap = np.empty(n, dtype=np.int64)
    pos = -np.ones(n, dtype=np.int64)
    hsize = 0
    for a in range(n):
        stamp += 1
        _refresh(a, True, pool, pool_id, pool_d, start, length, uf, mark, stamp, sums, sizes, cid, bd, blo, bhi, bslot)
        if bslot[a] >= 0:
            heap[hsize] = a
            pos[a] = hsize
            hsize += 1
    for i in range(hsize // 2 - 1, -1, -1):
        _heap_sift_down(heap, pos, hsize, bd, blo, bhi, i)

    left = np.empty(max(n - 1, 0), dtype=np.int64)
    right = np.empty(max(n - 1, 0), dtype=np.int64)
    raw = np.empty(max(n - 1, 0))
    size = np.empty(max(n - 1, 0), dtype=np.int64)
    count = 0
    while hsize > 0 and count < n - 1:
        sa = heap[0]
        sb = bslot[sa]
        left[count] = blo[sa]
        right[count] = bhi[sa]
        raw[count] = bd[sa]
        size[count] = int(sizes[sa] + sizes[sb])
        keep, drop = sa, sb
        if length[sa] < length[sb]:
            keep, drop = sb, sa
        old_keep = cid[keep]
        old_drop = cid[drop]
        need = length[keep] + length[drop]
        if need > cap[keep]:
            newcap = max(2 * cap[keep], need)
            if used + newcap > pool.size:
                grow = max(2 * pool.size, used + newcap)
                grown = np.empty(grow, dtype=np.int64)
                grown[:used] = pool[:used]
                pool = grown
                grown = np.empty(grow, dtype=np.int64)
                grown[:used] = pool_id[:used]
                pool_id = grown
                grown_d = np.empty(grow)
                grown_d[:used] = pool_d[:used]
                pool_d = grown_d
            s, e = start[keep], start[keep] + length[keep]
            pool[used:used + length[keep]] = pool[s:e]
            pool_id[used:used + length[keep]] = pool_id[s:e]
            pool_d[used:used + length[keep]] = pool_d[s:e]
            start[keep] = used
            cap[keep] = newcap
            used += newcap
        s0 = start[keep] + length[keep]
        s, e = start[drop], start[drop] + length[drop]
        pool[s0:s0 + length[drop]] = pool[s:e]
        pool_id[s0:s0 + length[drop]] = pool_id[s:e]
        pool_d[s0:s0 + length[drop]] = pool_d[s:e]
        length[keep] = need
        length[drop] = 0
        uf[drop] = keep
        for j in range(sums.shape[1]):
            sums[keep, j] += sums[drop, j]
        sizes[keep] += sizes[drop]
        alive[drop] = False
        hsize = _heap_remove(heap, pos, hsize, bd, blo, bhi, drop)
        new_id = n + count
        cid[keep] = new_id
        count += 1

        stamp += 1
        _refresh(keep, True, pool, pool_id, pool_d, start, length, uf, mark, stamp, sums, sizes, cid, bd, blo, bhi, bslot)
        if bslot[keep] < 0:
            hsize = _heap_remove(heap, pos, hsize, bd, blo, bhi, keep)
        else:
            _heap_fix(heap, pos, hsize, bd, blo, bhi, pos[keep])
        # neighbours: their link to the merged pair changed
        for p in range(start[keep], start[keep] + length[keep]):
            c = pool[p]
            if blo[c] == old_keep or blo[c] == old_drop or bhi[c] == old_keep or bhi[c] == old_drop:
                stamp += 1
                _refresh(c, False, pool, pool_id, pool_d, start, length, uf, mark, stamp, sums, sizes, cid, bd, blo, bhi, bslot)
            else:
                d = pool_d[p]
                other = cid[c]
                if _before(d, other, new_id, bd[c], blo[c], bhi[c]):
                    bd[c] = d
                    blo[c] = other
                    bhi[c] = new_id
                    bslot[c] = keep
            _heap_fix(heap, pos, hsize, bd, blo, bhi, pos[c])
    roots = np.empty(n - count, dtype=np.int64)
    r = 0
    for a in range(n):
        if alive[a]:
            roots[r] = cid[a]
            r += 1
    return left[:count], right[:count], raw[:count], size[:count], roots


@njit(cache=True, nogil=True)
def max_gap_midpoints(left, right, heights, synthetic, n):
    """Per leaf, the midpoint of the largest height gap on its root path.

    Gaps are taken between consecutive non-synthetic merges; leaves whose path
    has fewer than two such merges get NaN. Among equal gaps the one closest
    to the root wins.
    """
    m = left.shape[0]
    parent = -np.ones(n + m, dtype=np.int64)
    for k in range(m):
        parent[left[k]] = k
        parent[right[k]] = k
    best_gap = -np.ones(m)
    best_mid = np.zeros(m)
    for k in range(m - 1, -1, -1):
        if synthetic[k]:
            continue
        p = parent[n + k]
        if p < 0 or synthetic[p]:
            continue
        g = heights[p] - heights[k]
        if g > best_gap[p]:
            best_gap[k] = g
            best_mid[k] = heights[p] - 0.5 * g
        else:
            best_gap[k] = best_gap[p]
            best_mid[k] = best_mid[p]
    mids = np.full(n, np.nan)
    for leaf in range(n):
        p = parent[leaf]
        if p >= 0 and best_gap[p] >= 0:
            mids[leaf] = best_mid[p]
    return mids


@njit(cache=True, nogil=True)
def labels_below(left, right, heights, n, cut):
    """Flat labels from merges strictly below ``cut``, numbered by first leaf."""
    m = left.shape[0]
    uf = np.arange(n + m)
    for k in range(m):
        if heights[k] < cut:
            uf[left[k]] = n + k
            uf[right[k]] = n + k
    root = np.empty(n, dtype=np.int64)
    for leaf in range(n):
        x = leaf
        while uf[x] != x:
            x = uf[x]
        # path compression
        y = leaf
        while uf[y] != x:
            z = uf[y]
            uf[y] = x
            y = z
        root[leaf] = x
    labels = np.empty(n, dtype=np.int64)
    mapping = -np.ones(n + m, dtype=np.int64)
    next_label = 0
    for leaf in range(n):
        r = root[leaf]
        if mapping[r] < 0:
            mapping[r] = next_label
            next_label += 1
        labels[leaf] = mapping[r]
    return labels
