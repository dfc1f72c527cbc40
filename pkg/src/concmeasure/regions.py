"""Candidate error regions and their empirical risk / adversarial risk.

Two families are supported:

* :class:`RectComplementRegion` -- everything outside a union of axis-aligned
  rectangles that have each been grown by ``epsilon_inf``. Its adversarial
  risk is reported through the conservative bound "outside every *base*
  rectangle", since the exact l-inf expansion of such a complement is not
  tractable in high dimension.
* :class:`BallUnionRegion` -- a union of closed Euclidean balls. Expanding a
  union of balls by ``eps`` just grows every radius, so its adversarial risk
  is exact.

All memberships are closed (``<=``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .metric_index import Metric, pairwise

SCHEMA_VERSION = 1


def _as_points(ds) -> np.ndarray:
    pts = ds.points if hasattr(ds, "points") else np.asarray(ds, dtype=np.float64)
    return np.atleast_2d(pts)


def _check_eps(eps):
    if eps < 0:
        raise ParameterError(f"expansion budget must be non-negative, got {eps}")


@dataclass(frozen=True, eq=False)
class Hyperrectangle:
    """Closed box ``{x : |x_j - u_j| <= r_j / 2 for all j}``."""

    u: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64).ravel()
        r = np.asarray(self.r, dtype=np.float64).ravel()
        if u.shape != r.shape:
            raise ParameterError("center and edge vectors differ in length")
        if np.any(r < 0):
            raise ParameterError("edge sizes must be non-negative")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.u.size

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points)
        if pts.shape[1] != self.n:
            raise ParameterError(f"dimension mismatch: {pts.shape[1]} vs {self.n}")
        return np.all(np.abs(pts - self.u) <= self.r / 2, axis=1)

    def __eq__(self, other):
        return (
            isinstance(other, Hyperrectangle)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.r, other.r)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Ball:
    """Closed Euclidean ball."""

    u: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=np.float64).ravel())
        if self.radius < 0:
            raise ParameterError("radius must be non-negative")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def n(self) -> int:
        return self.u.size

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points)
        return pairwise(self.u[None, :], pts, Metric.L2)[0] <= self.radius

    def __eq__(self, other):
        return isinstance(other, Ball) and np.array_equal(self.u, other.u) and self.radius == other.radius

    __hash__ = None


def rect_expand(rect: Hyperrectangle, eps: float) -> Hyperrectangle:
    """The l-inf ``eps``-expansion of a box: every face moves out by ``eps``."""
    _check_eps(eps)
    return Hyperrectangle(rect.u, rect.r + 2.0 * eps)


def ball_expand(ball: Ball, eps: float) -> Ball:
    """The l2 ``eps``-expansion of a ball."""
    _check_eps(eps)
    return Ball(ball.u, ball.radius + eps)


def bounding_rect(points, center) -> Hyperrectangle:
    """Smallest box centred at ``center`` containing every point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    center = np.asarray(center, dtype=np.float64).ravel()
    if pts.shape[0] == 0:
        raise ParameterError("cannot bound an empty cluster")
    if pts.shape[1] != center.size:
        raise ParameterError(f"dimension mismatch: {pts.shape[1]} vs {center.size}")
    # halving 2*max is exact, so every point stays inside under contains()
    return Hyperrectangle(center, 2.0 * np.abs(pts - center).max(axis=0))


@dataclass(frozen=True)
class RectComplementRegion:
    """``R^n`` minus the union of the base rectangles grown by ``epsilon_inf``.

    An empty rectangle list stands for the whole space.
    """

    base_rects: tuple = field(default_factory=tuple)
    epsilon_inf: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "base_rects", tuple(self.base_rects))
        _check_eps(self.epsilon_inf)
        dims = {r.n for r in self.base_rects}
        if len(dims) > 1:
            raise ParameterError("rectangles have mixed dimensions")

    @property
    def T(self) -> int:
        return len(self.base_rects)

    def expanded_rects(self):
        return [rect_expand(r, self.epsilon_inf) for r in self.base_rects]

    def _covered(self, pts, rects) -> np.ndarray:
        covered = np.zeros(pts.shape[0], dtype=bool)
        for rect in rects:
            if rect.n != pts.shape[1]:
                raise ParameterError(f"dimension mismatch: {pts.shape[1]} vs {rect.n}")
            covered |= rect.contains(pts)
        return covered

    def in_region(self, ds) -> np.ndarray:
        """Membership in the error region itself."""
        pts = _as_points(ds)
        return ~self._covered(pts, self.expanded_rects())

    def outside_base(self, ds) -> np.ndarray:
        pts = _as_points(ds)
        return ~self._covered(pts, self.base_rects)


@dataclass(frozen=True)
class BallUnionRegion:
    balls: tuple = field(default_factory=tuple)
    epsilon_2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "balls", tuple(self.balls))
        _check_eps(self.epsilon_2)

    @property
    def T(self) -> int:
        return len(self.balls)

    def _inside(self, pts, grow: float) -> np.ndarray:
        inside = np.zeros(pts.shape[0], dtype=bool)
        if not self.balls:
            return inside
        centers = np.stack([b.u for b in self.balls])
        if centers.shape[1] != pts.shape[1]:
            raise ParameterError(f"dimension mismatch: {pts.shape[1]} vs {centers.shape[1]}")
        radii = np.array([b.radius + grow for b in self.balls])
        d = pairwise(centers, pts, Metric.L2)
        return np.any(d <= radii[:, None], axis=0)

    def in_region(self, ds) -> np.ndarray:
        return self._inside(_as_points(ds), 0.0)

    def in_expansion(self, ds) -> np.ndarray:
        return self._inside(_as_points(ds), self.epsilon_2)


def _fraction(mask: np.ndarray) -> float:
    return int(np.count_nonzero(mask)) / mask.size


def cr_risk(region: RectComplementRegion, ds) -> float:
    """Fraction of points outside every expanded rectangle."""
    return _fraction(region.in_region(ds))


def cr_advrisk_bound(region: RectComplementRegion, ds) -> float:
    """Fraction of points outside every base rectangle.

    A point within l-inf distance ``eps`` of the region cannot lie in a base
    rectangle (its ``eps``-box would be inside the expanded one), so this is
    an upper bound on the empirical measure of the expanded region.
    """
    return _fraction(region.outside_base(ds))


def bu_risk(region: BallUnionRegion, ds) -> float:
    return _fraction(region.in_region(ds))


def bu_advrisk(region: BallUnionRegion, ds) -> float:
    return _fraction(region.in_expansion(ds))


# --------------------------------------------------------------------------- serialization


def region_to_dict(region) -> dict:
    if isinstance(region, RectComplementRegion):
        return {
            "schema_version": SCHEMA_VERSION,
            "family": "rect_complement",
            "metric": Metric.LINF.value,
            "epsilon": region.epsilon_inf,
            "primitives": [{"center": r.u.tolist(), "edges": r.r.tolist()} for r in region.base_rects],
        }
    if isinstance(region, BallUnionRegion):
        return {
            "schema_version": SCHEMA_VERSION,
            "family": "ball_union",
            "metric": Metric.L2.value,
            "epsilon": region.epsilon_2,
            "primitives": [{"center": b.u.tolist(), "radius": b.radius} for b in region.balls],
        }
    raise ParameterError(f"cannot serialize {type(region).__name__}")


def region_from_dict(doc: dict):
    family = doc.get("family")
    if family == "rect_complement":
        rects = [Hyperrectangle(p["center"], p["edges"]) for p in doc["primitives"]]
        return RectComplementRegion(tuple(rects), float(doc["epsilon"]))
    if family == "ball_union":
        balls = [Ball(p["center"], p["radius"]) for p in doc["primitives"]]
        return BallUnionRegion(tuple(balls), float(doc["epsilon"]))
    raise ParameterError(f"unknown region family {family!r}")


def dumps_region(region) -> str:
    # json writes floats with repr(), which round-trips doubles exactly
    return json.dumps(region_to_dict(region), indent=2)


def loads_region(text: str):
    return region_from_dict(json.loads(text))


def regions_equal(a, b) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, RectComplementRegion):
        return a.epsilon_inf == b.epsilon_inf and list(a.base_rects) == list(b.base_rects)
    return a.epsilon_2 == b.epsilon_2 and list(a.balls) == list(b.balls)

