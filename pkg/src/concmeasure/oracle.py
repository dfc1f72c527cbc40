"""Ground truth for small problems.

* exhaustive optimisers for the ball-union and box-complement families on
  tiny datasets,
* expansion measures computed by lattice refinement (n <= 2) and by exact
  interval arithmetic (n = 1),
* closed-form concentration for the uniform distribution on [0, 1] and the
  standard normal on R.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any

import numpy as np

from .data import Dataset, ceil_count
from .errors import ParameterError
from .metric_index import Metric, pairwise
from .regions import Ball, BallUnionRegion, Hyperrectangle, RectComplementRegion

MAX_POINTS = 200
MAX_RECT_CANDIDATES = 20_000_000


@dataclass
class OracleResult:
    optimal_advrisk: float
    optimal_risk: float
    optimal_region: Any
    candidates_examined: int
    feasible: bool = True
    details: dict = field(default_factory=dict)


def _guard_points(ds: Dataset):
    if ds.m > MAX_POINTS:
        raise ParameterError(f"exhaustive oracle limited to m <= {MAX_POINTS}, got {ds.m}")


# --------------------------------------------------------------------------- balls


def brute_force_balls(ds: Dataset, alpha: float, eps2: float, T: int) -> OracleResult:
    """Exact optimum of ``min mu_S(E_eps)`` s.t. ``mu_S(E) >= alpha`` over unions of
    T data-centred balls whose radii are center-to-point distances.

    For T = 2 the second radius is not enumerated freely: for a fixed first ball
    and second center, the smallest radius that reaches the risk target is
    optimal because larger radii only grow the expansion. This makes the scan
    exhaustive in effect while visiting O(m^3) triples instead of O(m^4).
    Ties resolve to the first candidate in (center1, radius1, center2) order.
    """
    if T not in (1, 2):
        raise ParameterError("brute_force_balls supports T in {1, 2}")
    if eps2 < 0:
        raise ParameterError("eps2 must be non-negative")
    _guard_points(ds)
    m = ds.m
    need = ceil_count(alpha, m)
    d = pairwise(ds.points, ds.points, Metric.L2)
    order = np.argsort(d, axis=1, kind="stable")
    sorted_d = np.take_along_axis(d, order, axis=1)
    if T == 1:
        return _one_ball(ds, d, sorted_d, need, eps2)
    return _two_balls(ds, d, order, sorted_d, need, eps2)


def _one_ball(ds, d, sorted_d, need, eps):
    m = ds.m
    best = None
    examined = 0
    for c in range(m):
        radii = np.unique(sorted_d[c])
        n_in = np.searchsorted(sorted_d[c], radii, side="right")
        n_exp = np.searchsorted(sorted_d[c], radii + eps, side="right")
        examined += radii.size
        ok = np.flatnonzero(n_in >= need)
        if ok.size == 0:
            continue
        j = ok[np.argmin(n_exp[ok])]
        if best is None or n_exp[j] < best[0]:
            best = (int(n_exp[j]), int(n_in[j]), c, float(radii[j]))
    n_exp, n_in, c, r = best
    region = BallUnionRegion((Ball(ds.points[c], r),), eps)
    return OracleResult(n_exp / m, n_in / m, region, examined, details={"centers": [c], "radii": [r]})


def _two_balls(ds, d, order, sorted_d, need, eps):
    m = ds.m
    best = None
    examined = 0
    rows = np.arange(m)
    for c1 in range(m):
        r1 = np.unique(sorted_d[c1])
        in1 = d[c1][None, :] <= r1[:, None]  # (R, m)
        exp1 = d[c1][None, :] <= r1[:, None] + eps
        req = need - in1.sum(axis=1)
        fresh = ~in1[:, order]  # (R, m, m): is the j-th nearest point of c2 new?
        cum = np.cumsum(fresh, axis=2)
        reach = cum >= req[:, None, None]
        has = reach.any(axis=2)
        jstar = reach.argmax(axis=2)
        r2 = sorted_d[rows[None, :], jstar]  # (R, m)
        in2 = d[None, :, :] <= r2[:, :, None]
        exp2 = d[None, :, :] <= (r2 + eps)[:, :, None]
        n_in = (in1[:, None, :] | in2).sum(axis=2)
        n_exp = (exp1[:, None, :] | exp2).sum(axis=2)
        examined += r1.size * m
        score = np.where(has, n_exp, m + 1)
        flat = int(np.argmin(score))
        i, c2 = divmod(flat, m)
        if score[i, c2] > m:
            continue
        if best is None or score[i, c2] < best[0]:
            best = (int(score[i, c2]), int(n_in[i, c2]), c1, float(r1[i]), c2, float(r2[i, c2]))
    n_exp, n_in, c1, ra, c2, rb = best
    region = BallUnionRegion((Ball(ds.points[c1], ra), Ball(ds.points[c2], rb)), eps)
    return OracleResult(
        n_exp / m, n_in / m, region, examined, details={"centers": [c1, c2], "radii": [ra, rb]}
    )


# --------------------------------------------------------------------------- rectangles


def _axis_pairs(x: np.ndarray, eps: float):
    """Distinct (lower, upper) face choices on one axis.

    Inclusion changes only at data values (base box) and at data values
    shifted by eps (grown box), so faces drawn from ``x``, ``x + eps`` and
    ``x - eps`` realise every achievable pair of memberships.
    """
    faces = np.unique(np.concatenate([x, x + eps, x - eps]))
    lo, hi = np.meshgrid(faces, faces, indexing="ij")
    keep = lo <= hi
    lo, hi = lo[keep], hi[keep]
    base = (x[None, :] >= lo[:, None]) & (x[None, :] <= hi[:, None])
    grown = (x[None, :] >= (lo - eps)[:, None]) & (x[None, :] <= (hi + eps)[:, None])
    key = np.concatenate([base, grown], axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    return lo[first], hi[first], base[first], grown[first]


def brute_force_rects(ds: Dataset, alpha: float, eps_inf: float, T: int = 1, include_empty: bool = True) -> OracleResult:
    """Exact optimum over CR(1) with the box-complement semantics used by the
    l-inf search: risk counts points outside the grown box, adversarial risk
    counts points outside the base box.

    ``include_empty`` adds the degenerate box that covers no data point, whose
    complement is everything (risk = advrisk = 1).
    """
    if T != 1:
        raise ParameterError("brute_force_rects supports T = 1 only")
    if ds.n > 3:
        raise ParameterError("brute_force_rects supports n <= 3")
    if eps_inf < 0:
        raise ParameterError("eps_inf must be non-negative")
    _guard_points(ds)
    m = ds.m
    need = ceil_count(alpha, m)
    axes = [_axis_pairs(ds.points[:, j], eps_inf) for j in range(ds.n)]
    total = math.prod(a[0].size for a in axes)
    if total > MAX_RECT_CANDIDATES:
        raise ParameterError(f"{total} candidate boxes exceed the oracle limit {MAX_RECT_CANDIDATES}")

    best = None  # (advrisk count, risk count, per-axis pair indices)
    if include_empty:
        best = (m, m, None)
    first, rest = axes[0], axes[1:]
    for combo in itertools.product(*(range(a[0].size) for a in rest)):
        base = first[2].copy()
        grown = first[3].copy()
        for (lo, hi, b, g), i in zip(rest, combo):
            base &= b[i]
            grown &= g[i]
        n_risk = m - grown.sum(axis=1)
        n_adv = m - base.sum(axis=1)
        ok = np.flatnonzero(n_risk >= need)
        if ok.size == 0:
            continue
        j = ok[np.argmin(n_adv[ok])]
        if best is None or n_adv[j] < best[0]:
            best = (int(n_adv[j]), int(n_risk[j]), (int(j),) + combo)
    if best is None:
        return OracleResult(float("nan"), float("nan"), None, total, feasible=False)
    n_adv, n_risk, pick = best
    if pick is None:
        region = RectComplementRegion((), eps_inf)
        faces = None
    else:
        lows = np.array([axes[a][0][i] for a, i in enumerate(pick)])
        highs = np.array([axes[a][1][i] for a, i in enumerate(pick)])
        region = RectComplementRegion((Hyperrectangle((lows + highs) / 2, highs - lows),), eps_inf)
        faces = {"lower": lows.tolist(), "upper": highs.tolist()}
    return OracleResult(n_adv / m, n_risk / m, region, total + int(include_empty), details={"faces": faces})


# --------------------------------------------------------------------------- expansion measures


def grid_expansion_measure(ds: Dataset, region, eps: float, metric, grid_step: float) -> float:
    """Fraction of data points within ``eps`` of the region, found by probing a
    lattice of spacing ``grid_step`` (plus the point itself). The lattice only
    finds region points it lands on, so the estimate approaches the exact
    value from below as the step shrinks."""
    metric = Metric.parse(metric)
    if ds.n > 2:
        raise ParameterError("grid expansion is limited to n <= 2")
    if grid_step <= 0 or eps < 0:
        raise ParameterError("need grid_step > 0 and eps >= 0")
    hit = region.in_region(ds.points).copy()
    for i in np.flatnonzero(~hit):
        x = ds.points[i]
        lo = np.ceil((x - eps) / grid_step).astype(np.int64)
        hi = np.floor((x + eps) / grid_step).astype(np.int64)
        axes = [np.arange(a, b + 1) * grid_step for a, b in zip(lo, hi)]
        if any(a.size == 0 for a in axes):
            continue
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ds.n)
        grid = grid[pairwise(x[None, :], grid, metric)[0] <= eps]
        if grid.size and region.in_region(grid).any():
            hit[i] = True
    return int(hit.sum()) / ds.m


def interval_expansion_measure(ds: Dataset, region: RectComplementRegion, eps: float) -> float:
    """Exact measure of the eps-expansion of a 1-D box-complement region.

    The region is the complement of a union of closed intervals; a point stays
    outside the expansion iff its whole ``[x - eps, x + eps]`` window lies in one
    merged interval.
    """
    if ds.n != 1:
        raise ParameterError("interval arithmetic oracle needs n = 1")
    spans = sorted(
        (float(r.u[0] - r.r[0] / 2), float(r.u[0] + r.r[0] / 2)) for r in region.expanded_rects()
    )
    merged = []
    for a, b in spans:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    x = ds.points[:, 0]
    safe = np.zeros(ds.m, dtype=bool)
    for a, b in merged:
        safe |= (x - eps >= a) & (x + eps <= b)
    return int((~safe).sum()) / ds.m


# --------------------------------------------------------------------------- closed forms

_STD_NORMAL = NormalDist()


def analytic_h_uniform(alpha: float, eps: float) -> float:
    """Uniform on [0, 1]: an end interval of length alpha is optimal."""
    _check_alpha_eps(alpha, eps)
    return min(1.0, alpha + eps)


def analytic_h_gaussian(alpha: float, eps: float) -> float:
    """Standard normal on R: a half-line is optimal, giving Phi(Phi^-1(alpha) + eps)."""
    _check_alpha_eps(alpha, eps)
    return _STD_NORMAL.cdf(_STD_NORMAL.inv_cdf(alpha) + eps)


def _check_alpha_eps(alpha, eps):
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if eps < 0:
        raise ParameterError("eps must be non-negative")
