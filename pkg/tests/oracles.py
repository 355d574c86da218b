"""Independent reference implementations used by several test modules."""
import itertools
import math
from collections import Counter

import numpy as np


def pair_counting_ari(p, q):
    """ARI by explicit enumeration of all node pairs."""
    n = len(p)
    a = b = c = d = 0
    for i, j in itertools.combinations(range(n), 2):
        same_p = p[i] == p[j]
        same_q = q[i] == q[j]
        if same_p and same_q:
            a += 1
        elif same_p:
            b += 1
        elif same_q:
            c += 1
        else:
            d += 1
    total = a + b + c + d
    if total == 0:
        return 1.0
    expected = (a + b) * (a + c) / total
    maximum = ((a + b) + (a + c)) / 2
    if maximum == expected:
        return 1.0
    return (a - expected) / (maximum - expected)


def entropy_vi(p, q):
    """Variation of information from explicit entropy sums (nats)."""
    n = len(p)
    joint = Counter(zip(p, q))
    cp = Counter(p)
    cq = Counter(q)
    vi = 0.0
    for (x, y), nxy in joint.items():
        r = nxy / n
        vi -= r * (math.log(nxy / cp[x]) + math.log(nxy / cq[y]))
    return vi


def root_paths(merges, synthetic, n):
    """For each leaf, heights of the non-synthetic merges from leaf up to root."""
    parent = {}
    for k, row in enumerate(merges):
        parent[int(row[0])] = n + k
        parent[int(row[1])] = n + k
    paths = []
    for leaf in range(n):
        heights = []
        x = leaf
        while x in parent:
            k = parent[x] - n
            if not synthetic[k]:
                heights.append(float(merges[k][2]))
            x = parent[x]
        paths.append(heights)
    return paths


def max_gap_cut(merges, synthetic, n):
    """Cut height by enumerating every root-leaf path, plus the induced labels."""
    mids = []
    for heights in root_paths(merges, synthetic, n):
        top_down = heights[::-1]
        best_gap, best_mid = None, None
        for upper, lower in zip(top_down[:-1], top_down[1:]):
            gap = upper - lower
            if best_gap is None or gap > best_gap:
                best_gap, best_mid = gap, upper - gap / 2
        if best_gap is not None:
            mids.append(best_mid)
    cut = math.fsum(mids) / len(mids) if mids else math.inf
    comp = list(range(n))

    def find(x):
        while comp[x] != x:
            x = comp[x]
        return x

    owner = {i: i for i in range(n)}
    for k, row in enumerate(merges):
        a, b = owner[int(row[0])], owner[int(row[1])]
        owner[n + k] = a
        if row[2] < cut:
            comp[find(b)] = find(a)
    labels, seen = [], {}
    for leaf in range(n):
        r = find(leaf)
        seen.setdefault(r, len(seen))
        labels.append(seen[r])
    return cut, np.array(labels)
