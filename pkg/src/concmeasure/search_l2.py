"""Greedy search for a robust error region in B(T) under l2 perturbations.

Balls are placed one at a time. Each ball is centred at a training point and
its radius is the distance to the k-th nearest still-uncovered point; the
(center, k) pair with the smallest expansion overhead
``|newly expansion-covered| - |newly covered|`` wins. Ties go to the smaller
expansion count, then the smaller center index, then the smaller k.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, ceil_count
from .errors import InsufficientPointsError, ParameterError
from .metric_index import Metric, MetricTree, knn, pairwise, range_count
from .regions import Ball, BallUnionRegion, bu_advrisk, bu_risk
from .theory import ConcentrationEstimate


@dataclass(frozen=True)
class L2Config:
    alpha: float
    epsilon_2: float
    T: int
    seed: int = 0
    center_sample: Optional[int] = None  # smoke runs only; None scans every center
    block: int = 256

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.epsilon_2 < 0:
            raise ParameterError("epsilon_2 must be non-negative")
        if self.T < 1:
            raise ParameterError("T must be >= 1")
        if self.center_sample is not None and self.center_sample < 1:
            raise ParameterError("center_sample must be positive")


@dataclass
class GreedyState:
    m: int
    chosen_balls: list = field(default_factory=list)
    covered_init: np.ndarray = None
    covered_exp: np.ndarray = None
    t: int = 1
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.covered_init is None:
            self.covered_init = np.zeros(self.m, dtype=bool)
        if self.covered_exp is None:
            self.covered_exp = np.zeros(self.m, dtype=bool)

    @property
    def n_init(self) -> int:
        return int(self.covered_init.sum())

    @property
    def n_exp(self) -> int:
        return int(self.covered_exp.sum())


def k_bounds(state: GreedyState, cfg: L2Config, m: int) -> tuple[int, int]:
    """Range of neighbour counts for step ``state.t``.

    The lower end spreads the remaining deficit evenly over the remaining
    steps; once the target ``ceil(alpha*m)`` is met both ends are 1.
    """
    if not 1 <= state.t <= cfg.T:
        raise ParameterError(f"step {state.t} outside [1, {cfg.T}]")
    need = ceil_count(cfg.alpha, m) - state.n_init
    if need <= 0:
        return 1, 1
    remaining = cfg.T - state.t + 1
    return -(-need // remaining), need


def candidate_score(u_index: int, k: int, state: GreedyState, ds: Dataset, index: MetricTree, cfg: L2Config):
    """Score one (center, k) pair through the metric tree.

    Returns ``(overhead, r_k, S_init, S_exp)`` or ``None`` when fewer than
    ``k`` uncovered points remain.
    """
    uncovered = ds.m - state.n_init
    if k > uncovered:
        return None
    u = ds.points[u_index]
    r_k = knn(index, u, k, exclude=state.covered_init)[-1][1]
    _, s_init = range_count(index, u, r_k, exclude=state.covered_init)
    _, s_exp = range_count(index, u, r_k + cfg.epsilon_2, exclude=state.covered_exp)
    return len(s_exp) - len(s_init), r_k, set(s_init), set(s_exp)


def _score_block(points, centers, k_lo, k_hi, open_init, open_exp, eps):
    """Vectorised scores for every (center in block, k in [k_lo, k_hi])."""
    d = pairwise(points[centers], points, Metric.L2)
    du = d if open_init.all() else d[:, open_init]
    dv = d if open_exp.all() else d[:, open_exp]
    b = centers.size
    prefix = np.partition(du, k_hi - 1, axis=1)[:, :k_hi]
    prefix.sort(axis=1)
    radii = prefix[:, k_lo - 1:k_hi].copy()  # (b, nk); a copy so the block can be freed
    r_max = prefix[:, -1]
    # uncovered points within r_k: those in the sorted prefix, plus ties with
    # r_max that fell outside the prefix
    n_init = (prefix[:, None, :] <= radii[:, :, None]).sum(axis=2)
    beyond = (du <= r_max[:, None]).sum(axis=1) - k_hi
    n_init = n_init + beyond[:, None] * (radii == r_max[:, None])
    reach = radii + eps
    if radii.shape[1] <= 4:
        n_exp = np.stack([(dv <= reach[:, j:j + 1]).sum(axis=1) for j in range(radii.shape[1])], axis=1)
    else:
        dv = np.sort(dv, axis=1)
        n_exp = np.stack([np.searchsorted(dv[i], reach[i], side="right") for i in range(b)])
    return n_exp - n_init, n_exp, radii


def greedy_step(state: GreedyState, ds: Dataset, cfg: L2Config, centers=None, threads: int = 1) -> GreedyState:
    """Place one ball and fold its coverage into ``state`` (mutated and returned)."""
    m = ds.m
    k_lo, k_hi = k_bounds(state, cfg, m)
    open_init = ~state.covered_init
    open_exp = ~state.covered_exp
    uncovered = int(open_init.sum())
    k_hi = min(k_hi, uncovered)
    if k_hi < k_lo:
        raise InsufficientPointsError(
            f"insufficient uncovered points: step {state.t} needs k >= {k_lo}, only {uncovered} left"
        )
    centers = np.arange(m) if centers is None else np.asarray(centers, dtype=np.intp)
    blocks = [centers[i:i + cfg.block] for i in range(0, centers.size, cfg.block)]

    def score(block):
        return _score_block(ds.points, block, k_lo, k_hi, open_init, open_exp, cfg.epsilon_2)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(score, blocks))
    else:
        scored = [score(b) for b in blocks]
    overhead = np.concatenate([s[0] for s in scored])
    n_exp = np.concatenate([s[1] for s in scored])
    radii = np.concatenate([s[2] for s in scored])
    nk = k_hi - k_lo + 1
    center_ids = np.repeat(centers, nk)
    ks = np.tile(np.arange(k_lo, k_hi + 1), centers.size)
    best = np.lexsort((ks, center_ids, n_exp.ravel(), overhead.ravel()))[0]
    row, col = divmod(int(best), nk)
    u_index, k, radius = int(centers[row]), int(ks[best]), float(radii[row, col])

    d = pairwise(ds.points[u_index][None, :], ds.points, Metric.L2)[0]
    s_init = open_init & (d <= radius)
    s_exp = open_exp & (d <= radius + cfg.epsilon_2)
    state.covered_init |= s_init
    state.covered_exp |= s_exp
    state.chosen_balls.append(Ball(ds.points[u_index], radius))
    state.trace.append({
        "t": state.t,
        "k_lower": k_lo,
        "k_upper": k_hi,
        "center": u_index,
        "k": k,
        "radius": radius,
        "overhead": int(s_exp.sum() - s_init.sum()),
        "risk": state.n_init / m,
        "advrisk": state.n_exp / m,
    })
    state.t += 1
    return state


def greedy(ds: Dataset, cfg: L2Config, threads: int = 1) -> GreedyState:
    if ceil_count(cfg.alpha, ds.m) < 1:
        raise ParameterError("alpha * m must be positive")
    centers = None
    if cfg.center_sample is not None and cfg.center_sample < ds.m:
        rng = np.random.default_rng(cfg.seed)
        centers = np.sort(rng.choice(ds.m, size=cfg.center_sample, replace=False))
    state = GreedyState(ds.m)
    for _ in range(cfg.T):
        greedy_step(state, ds, cfg, centers, threads)
    return state


def run(ds_train: Dataset, ds_test: Dataset, cfg: L2Config, threads: int = 1) -> ConcentrationEstimate:
    if ds_train.n != ds_test.n:
        raise ParameterError(f"train/test dimension mismatch: {ds_train.n} vs {ds_test.n}")
    state = greedy(ds_train, cfg, threads)
    region = BallUnionRegion(tuple(state.chosen_balls), cfg.epsilon_2)
    return ConcentrationEstimate(
        alpha=cfg.alpha,
        epsilon=cfg.epsilon_2,
        metric=Metric.L2.value,
        T=cfg.T,
        risk_train=state.n_init / ds_train.m,
        advrisk_train=state.n_exp / ds_train.m,
        risk_test=bu_risk(region, ds_test),
        advrisk_test=bu_advrisk(region, ds_test),
        region=region,
        details={"trace": state.trace},
    )


TRACE_COLUMNS = ["t", "k_lower", "k_upper", "center", "k", "radius", "overhead", "risk", "advrisk"]


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in trace:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
