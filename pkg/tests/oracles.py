"""Independent reference computations used by the tests.

Everything here is deliberately naive (loops, sampling, enumeration) and
shares no code with the package beyond plain data.
"""

import math

import numpy as np


def _euclid(p, q):
    acc = 0.0
    for pk, qk in zip(p, q):
        acc += (pk - qk) * (pk - qk)
    return math.sqrt(acc)


def brute_hausdorff(a, b):
    """O(n*m) scan using the textbook sqrt(sum of squares) distance."""
    def directed(x, y):
        worst = 0.0
        for p in x:
            nearest = min(_euclid(p, q) for q in y)
            worst = max(worst, nearest)
        return worst

    a = [tuple(map(float, p)) for p in a]
    b = [tuple(map(float, p)) for p in b]
    return max(directed(a, b), directed(b, a))


def mc_voronoi_measures(sites, weights, lo, hi, n_samples, seed=0, chunk=500_000):
    """Monte-Carlo area/volume of each weighted Voronoi region (pointwise argmin d/w)."""
    rng = np.random.default_rng(seed)
    sites = np.asarray(sites, float)
    w = np.ones(len(sites)) if weights is None else np.asarray(weights, float)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    counts = np.zeros(len(sites))
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        x = rng.uniform(lo, hi, size=(m, len(lo)))
        # running argmin of squared distance / w^2 (same order as d / w), lowest index on ties
        best = np.full(m, np.inf)
        owner = np.zeros(m, dtype=np.int64)
        for i in range(len(sites)):
            d2 = ((x - sites[i]) ** 2).sum(axis=1) / w[i] ** 2
            closer = d2 < best
            best[closer] = d2[closer]
            owner[closer] = i
        counts += np.bincount(owner, minlength=len(sites))
        done += m
    return counts / n_samples * np.prod(hi - lo)


def min_feasible_clusters(diagram, max_volume):
    """Fewest connected clusters with volume <= max_volume, by enumerating set partitions."""
    n = len(diagram.positions)
    adj = diagram.adjacency()
    vol = diagram.measures

    def connected(block):
        seen, stack = {block[0]}, [block[0]]
        while stack:
            u = stack.pop()
            for v in block:
                if v not in seen and (min(u, v), max(u, v)) in adj:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(block)

    best = n

    def rec(i, assign, k):
        nonlocal best
        if k >= best:
            return
        if i == n:
            blocks = [[s for s in range(n) if assign[s] == b] for b in range(k)]
            if all(len(b) == 1 or (vol[b].sum() <= max_volume and connected(b)) for b in blocks):
                best = k
            return
        for b in range(k + 1):
            assign[i] = b
            rec(i + 1, assign, max(k, b + 1))

    rec(0, [0] * n, 0)
    return best


def alphas_by_hand(sigmas, deltas):
    out, acc = [], 0.0
    for s, d in zip(sigmas, deltas):
        out.append(math.exp(-acc) * (1 - math.exp(-s * d)))
        acc += s * d
    return out


def beta_bar_by_hand(alphas):
    total = sum(alphas)
    var = 0.0
    for a in alphas:
        p = a / total
        if p > 0:
            var += a * a * (-p * math.log(p))
    return var


def eq7_direct(means, variances, targets, floor=1e-4):
    total = 0.0
    for m, v, t in zip(means, variances, targets):
        v = max(float(v), floor)
        resid = sum((float(ti) - float(mi)) ** 2 for mi, ti in zip(m, t))
        total += resid / (2 * v) + math.log(v) / 2
    return total


def fp_direct(points, weights, areas):
    total = 0.0
    for i, p in enumerate(points):
        s = sum(math.dist(p, q) ** weights[i] for q in points)
        total += s / areas[i]
    return total


def fnp_direct(weights, volumes):
    n = len(volumes)
    wa = [weights[i] * volumes[i] for i in range(n)]
    inv = [1.0 / v for v in volumes]
    total = 0.0
    for i in range(n):
        g = wa[i] / sum(wa)
        r = inv[i] / sum(inv)
        total += -math.log(max(g, 1e-12)) * r + weights[i] * (g - r) ** 2
    return total


def minmax_direct(values):
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.5] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def ranks_brute(x):
    """Average ranks (1-based) by counting, O(n^2)."""
    out = []
    for v in x:
        less = sum(1 for u in x if u < v)
        equal = sum(1 for u in x if u == v)
        out.append(less + (equal + 1) / 2)
    return out


def spearman_brute(x, y):
    rx, ry = ranks_brute(list(x)), ranks_brute(list(y))
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den
