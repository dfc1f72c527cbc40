"""Heuristic search for a robust error region in CR(T) under l-inf perturbations.

Points are ranked by the l1 distance to their k-th nearest neighbour (small =
dense). For a covered fraction ``q`` the densest ``floor(q*m)`` points are
clustered into ``T`` groups, each group is covered by its minimal centred
box, and the error region is the complement of those boxes grown by
``epsilon_inf``. A bisection over ``q`` keeps the feasible region (risk >=
alpha) with the lowest adversarial-risk bound.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import kmeans_l1
from .data import Dataset, derive_seed, floor_count
from .errors import ParameterError
from .metric_index import Metric, cached_knn_table
from .regions import (
    RectComplementRegion,
    bounding_rect,
    cr_advrisk_bound,
    cr_risk,
)


@dataclass(frozen=True)
class LinfConfig:
    alpha: float
    epsilon_inf: float
    T: int
    k_density: int = 50
    delta_bin: float = 0.005
    kmeans_iters: int = 30
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.epsilon_inf < 0:
            raise ParameterError("epsilon_inf must be non-negative")
        if self.T < 1:
            raise ParameterError("T must be >= 1")
        if not 0.0 < self.delta_bin < 1.0:
            raise ParameterError("delta_bin must lie in (0, 1)")
        if self.k_density < 1 or self.kmeans_iters < 1 or self.restarts < 1:
            raise ParameterError("k_density, kmeans_iters and restarts must be >= 1")


@dataclass
class ProbeRecord:
    q: float
    feasible: bool
    risk: float
    advrisk: float
    region: RectComplementRegion


@dataclass
class LinfResult:
    best_q: float
    region: RectComplementRegion
    risk_train: float
    advrisk_train: float
    risk_test: float = float("nan")
    advrisk_test: float = float("nan")
    probes: list = field(default_factory=list)
    restart_stats: dict = field(default_factory=dict)
    feasible: bool = True


def restart_seed(seed: int, i: int) -> int:
    """Seed of restart ``i``: the first 63-bit word of SeedSequence([seed, i])."""
    return derive_seed(seed, i)


def density_order(ds: Dataset, k_density: int) -> np.ndarray:
    """Indices sorted by l1 distance to the k-th nearest other point, ties by index."""
    if not 1 <= k_density < ds.m:
        raise ParameterError(f"k_density must lie in [1, m), got {k_density} with m={ds.m}")
    _, dist = cached_knn_table(ds, k_density, Metric.L1)
    radius = dist[:, k_density - 1]
    return np.lexsort((np.arange(ds.m), radius))


def region_for_q(ds: Dataset, order: np.ndarray, q: float, cfg: LinfConfig, seed=None) -> ProbeRecord:
    if not 0.0 <= q <= 1.0:
        raise ParameterError(f"q must lie in [0, 1], got {q}")
    top = order[: floor_count(q, ds.m)]
    if top.size < cfg.T:
        # too few points to form T clusters: the region is the whole space
        region = RectComplementRegion((), cfg.epsilon_inf)
    else:
        pts = ds.points[top]
        clustering = kmeans_l1(pts, cfg.T, cfg.kmeans_iters, cfg.seed if seed is None else seed)
        rects = []
        for t in range(cfg.T):
            members = pts[clustering.assignment == t]
            if members.shape[0]:
                rects.append(bounding_rect(members, clustering.centroids[t]))
        region = RectComplementRegion(tuple(rects), cfg.epsilon_inf)
    risk = cr_risk(region, ds)
    advrisk = cr_advrisk_bound(region, ds)
    return ProbeRecord(q, risk >= cfg.alpha, risk, advrisk, region)


def _best_probe(probes):
    feasible = [p for p in probes if p.feasible]
    if not feasible:
        return None
    # lowest advrisk; among equals prefer the larger covered fraction
    return min(feasible, key=lambda p: (p.advrisk, -p.q))


def binary_search_q(ds: Dataset, cfg: LinfConfig, order=None, seed=None) -> LinfResult:
    """One bisection over q with a single clustering seed."""
    if order is None:
        order = density_order(ds, cfg.k_density)
    seed = cfg.seed if seed is None else seed
    lower, upper = 0.0, 1.0
    probes = []
    while upper - lower > cfg.delta_bin:
        q = (lower + upper) / 2
        probe = region_for_q(ds, order, q, cfg, seed)
        probes.append(probe)
        if probe.feasible:
            lower = q
        else:
            upper = q
    best = _best_probe(probes)
    if best is None:
        fallback = region_for_q(ds, order, 0.0, cfg, seed)
        return LinfResult(0.0, fallback.region, fallback.risk, fallback.advrisk, probes=probes, feasible=False)
    return LinfResult(best.q, best.region, best.risk, best.advrisk, probes=probes)


def _stats(values):
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def run(ds_train: Dataset, ds_test: Dataset, cfg: LinfConfig, threads: int = 1) -> LinfResult:
    """Independent restarts; the one with the lowest train advrisk wins."""
    if ds_train.n != ds_test.n:
        raise ParameterError(f"train/test dimension mismatch: {ds_train.n} vs {ds_test.n}")
    order = density_order(ds_train, cfg.k_density)
    seeds = [restart_seed(cfg.seed, i) for i in range(cfg.restarts)]

    def one(s):
        res = binary_search_q(ds_train, cfg, order, s)
        res.risk_test = cr_risk(res.region, ds_test)
        res.advrisk_test = cr_advrisk_bound(res.region, ds_test)
        return res

    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    winner_idx = min(range(len(results)), key=lambda i: (results[i].advrisk_train, i))
    winner = replace(results[winner_idx])
    winner.restart_stats = {
        "restarts": len(results),
        "winner": winner_idx,
        "best_q": _stats([r.best_q for r in results]),
        "risk_train": _stats([r.risk_train for r in results]),
        "risk_test": _stats([r.risk_test for r in results]),
        "advrisk_train": _stats([r.advrisk_train for r in results]),
        "advrisk_test": _stats([r.advrisk_test for r in results]),
    }
    return winner


def write_probe_log(probes, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q", "feasible", "risk", "advrisk"])
        for p in probes:
            writer.writerow([repr(p.q), int(p.feasible), repr(p.risk), repr(p.advrisk)])


def sweep_q(ds: Dataset, cfg: LinfConfig, order=None):
    """region_for_q over the even grid ``0, delta_bin, ..., 1``."""
    if order is None:
        order = density_order(ds, cfg.k_density)
    steps = int(round(1.0 / cfg.delta_bin))
    if not math.isclose(steps * cfg.delta_bin, 1.0, rel_tol=1e-9):
        raise ParameterError("delta_bin must divide 1 for an even q grid")
    return [region_for_q(ds, order, i / steps, cfg) for i in range(steps + 1)]
