"""Independent reference implementations used to derive expected values.

Plain Python loops over lists of floats; nothing here imports the package
under test, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import math


def dist(a, b, metric):
    diffs = [abs(x - y) for x, y in zip(a, b)]
    if metric == "l1":
        return sum(diffs)
    if metric == "linf":
        return max(diffs)
    return math.sqrt(sum(d * d for d in diffs))


def knn(points, query, k, metric, exclude=()):
    pairs = [(dist(query, p, metric), i) for i, p in enumerate(points) if i not in set(exclude)]
    pairs.sort()
    return [(i, d) for d, i in pairs[:k]]


def range_query(points, query, radius, metric, exclude=()):
    return sorted(i for i, p in enumerate(points) if i not in set(exclude) and dist(query, p, metric) <= radius)


def density_order(points, k):
    radii = []
    for i, p in enumerate(points):
        ds = sorted(dist(p, q, "l1") for j, q in enumerate(points) if j != i)
        radii.append(ds[k - 1])
    return sorted(range(len(points)), key=lambda i: (radii[i], i))


def in_box(x, lo, hi):
    return all(a <= v <= b for v, a, b in zip(x, lo, hi))


def box_complement_counts(points, boxes, eps):
    """(risk count, advrisk-bound count) for boxes given as (lo, hi) corner lists."""
    risk = adv = 0
    for x in points:
        if not any(in_box(x, [a - eps for a in lo], [b + eps for b in hi]) for lo, hi in boxes):
            risk += 1
        if not any(in_box(x, lo, hi) for lo, hi in boxes):
            adv += 1
    return risk, adv


def ball_union_counts(points, balls, eps):
    """(risk count, advrisk count) for balls given as (center, radius) pairs."""
    risk = sum(any(dist(x, c, "l2") <= r for c, r in balls) for x in points)
    adv = sum(any(dist(x, c, "l2") <= r + eps for c, r in balls) for x in points)
    return risk, adv


def best_l1_partition(points, T):
    """Exhaustive minimum of summed l1 distance to per-cluster medians."""

    def cost(cluster):
        total = 0.0
        for j in range(len(points[0])):
            col = sorted(p[j] for p in cluster)
            med = col[(len(col) - 1) // 2]
            total += sum(abs(v - med) for v in col)
        return total

    best = None
    for labels in itertools.product(range(T), repeat=len(points)):
        if len(set(labels)) != T:
            continue
        c = sum(cost([p for p, l in zip(points, labels) if l == t]) for t in range(T))
        if best is None or c < best[0]:
            best = (c, labels)
    return best


def greedy_balls(points, alpha_count, eps, T):
    """Sequential ball placement with the (overhead, |S_exp|, center, k) rule.

    Returns the list of (center index, k, radius) and the final covered sets,
    or ``None`` when some step has no candidate left.
    """
    m = len(points)
    init, exp = set(), set()
    chosen = []
    for t in range(1, T + 1):
        need = alpha_count - len(init)
        k_lo, k_hi = (1, 1) if need <= 0 else (-(-need // (T - t + 1)), need)
        open_pts = [i for i in range(m) if i not in init]
        k_hi = min(k_hi, len(open_pts))
        best = None
        for u in range(m):
            ds = sorted(dist(points[u], points[i], "l2") for i in open_pts)
            for k in range(k_lo, k_hi + 1):
                r = ds[k - 1]
                s_init = {i for i in open_pts if dist(points[u], points[i], "l2") <= r}
                s_exp = {i for i in range(m) if i not in exp and dist(points[u], points[i], "l2") <= r + eps}
                key = (len(s_exp) - len(s_init), len(s_exp), u, k)
                if best is None or key < best[0]:
                    best = (key, r, s_init, s_exp)
        if best is None:
            return None
        (_, _, u, k), r, s_init, s_exp = best
        init |= s_init
        exp |= s_exp
        chosen.append((u, k, r))
    return chosen, init, exp


def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_ppf(p, lo=-40.0, hi=40.0):
    for _ in range(200):
        mid = (lo + hi) / 2
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def exhaustive_balls(points, need, eps, T):
    """Minimum advrisk count over all T-tuples of (data center, data radius),
    subject to covering at least ``need`` points; ``None`` if infeasible."""
    m = len(points)
    cands = [(u, dist(points[u], points[v], "l2")) for u in range(m) for v in range(m)]
    cands = sorted(set(cands))
    best = None
    for combo in itertools.product(cands, repeat=T):
        balls = [(points[u], r) for u, r in combo]
        risk, adv = ball_union_counts(points, balls, eps)
        if risk >= need and (best is None or adv < best):
            best = adv
    return best


def exhaustive_intervals(xs, need, eps):
    """1-D box-complement optimum: minimum count outside the base interval
    subject to at least ``need`` points outside the grown interval.
    Includes the empty box (everything outside)."""
    m = len(xs)
    faces = sorted({v + s for v in xs for s in (-eps, 0.0, eps)})
    best = m
    for i, a in enumerate(faces):
        for b in faces[i:]:
            risk, adv = box_complement_counts([[x] for x in xs], [([a], [b])], eps)
            if risk >= need:
                best = min(best, adv)
    return best
