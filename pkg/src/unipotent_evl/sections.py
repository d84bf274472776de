"""Sections of the unipotent flow, the cone-slab regions C(A, W) and the
hitting times xi_j(x, L) with their impact w-marginals.

A hit of ``h_s(x)`` on the section at scale ``L`` is a primitive vector
``v = (v', v'', v_n)`` of ``x`` with ``v_n > 0`` and ``(v'', v_n)`` in
``L^-1 W``; it happens at time ``s = v'/v_n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import (
    Lattice,
    NormPair,
    PointSet,
    SplitDims,
    enumerate_points,
    unit_ball_volume,
    vector_norm,
)

TOL = 1e-12
DEFAULT_BUDGET_DOUBLINGS = 10


class SectionError(ValueError):
    pass


# -- windows W in R^m x R_{>0} ----------------------------------------------


@dataclass(frozen=True)
class ProjectedBallWindow:
    """``W = pr(B_1^{n,+})``, the projection of the upper half of the outer
    unit ball to the last ``m+1`` coordinates.

    For euclidean and sup norms this is ``{(y'', y_n) : y_n > 0,
    |(0, y'', y_n)| <= 1}``.
    """

    dims: SplitDims
    outer: str = "euclidean"

    @property
    def w_max(self) -> float:
        return 1.0

    @property
    def is_empty(self) -> bool:
        return False

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.dims.m
        lo = np.concatenate([-np.ones(m), [0.0]])
        return lo, np.ones(m + 1)

    def contains(self, w) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return (w[:, -1] > 0) & (vector_norm(w, self.outer) <= 1 + TOL)

    def volume(self) -> float:
        d = self.dims.m + 1
        return unit_ball_volume(d, self.outer) / 2

    def to_dict(self) -> dict:
        return {"shape": "projected-ball", "outer": self.outer}


@dataclass(frozen=True)
class BoxWindow:
    """Box ``[lo, hi]`` in ``R^{m+1}``; the last coordinate is always kept
    strictly positive, so ``lo[-1] = 0`` acts as an open bound.  A box with
    some ``lo > hi`` is empty."""

    dims: SplitDims
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(a) for a in np.ravel(self.lo))
        hi = tuple(float(a) for a in np.ravel(self.hi))
        if len(lo) != self.dims.m + 1 or len(hi) != self.dims.m + 1:
            raise SectionError("box window needs m+1 coordinates")
        if lo[-1] < 0:
            raise SectionError("window must lie in y_n > 0")
        if not all(math.isfinite(a) for a in lo + hi):
            raise SectionError("window must be bounded")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def is_empty(self) -> bool:
        return any(a > b for a, b in zip(self.lo, self.hi)) or self.hi[-1] <= 0

    @property
    def w_max(self) -> float:
        return self.hi[-1]

    def bbox(self):
        return np.array(self.lo), np.array(self.hi)

    def contains(self, w) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        lo, hi = self.bbox()
        scale = np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
        ok = np.all((w >= lo - TOL * scale) & (w <= hi + TOL * scale), axis=1)
        return ok & (w[:, -1] > 0)

    def volume(self) -> float:
        if self.is_empty:
            return 0.0
        return float(np.prod(np.array(self.hi) - np.array(self.lo)))

    def to_dict(self) -> dict:
        return {"shape": "box", "lo": list(self.lo), "hi": list(self.hi)}


def window_from_dict(dims: SplitDims, d: dict):
    if d.get("shape", "projected-ball") == "projected-ball":
        return ProjectedBallWindow(dims, d.get("outer", "euclidean"))
    return BoxWindow(dims, tuple(d["lo"]), tuple(d["hi"]))


# -- inner sets A in R^k -------------------------------------------------------


@dataclass(frozen=True)
class InnerBall:
    """Closed inner-norm ball ``{|s| <= radius}``."""

    radius: float
    norm: str = "euclidean"

    def contains(self, s) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        return vector_norm(s, self.norm) <= self.radius * (1 + TOL) + TOL * (self.radius == 0)

    def bounds(self, k: int):
        return -np.full(k, self.radius), np.full(k, self.radius)

    def scaled(self, c: float) -> "InnerBall":
        return InnerBall(self.radius * c, self.norm)

    def volume(self, k: int) -> float:
        return unit_ball_volume(k, self.norm) * self.radius**k


@dataclass(frozen=True)
class InnerBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(a) for a in np.ravel(self.lo)))
        object.__setattr__(self, "hi", tuple(float(a) for a in np.ravel(self.hi)))

    def contains(self, s) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        lo, hi = np.array(self.lo), np.array(self.hi)
        return np.all((s >= lo - TOL) & (s <= hi + TOL), axis=1)

    def bounds(self, k: int):
        return np.array(self.lo), np.array(self.hi)

    def scaled(self, c: float) -> "InnerBox":
        return InnerBox(tuple(c * a for a in self.lo), tuple(c * a for a in self.hi))

    def volume(self, k: int) -> float:
        return float(np.prod(np.maximum(np.array(self.hi) - np.array(self.lo), 0)))


@dataclass
class RegionC:
    """``C(A, L^-1 W) = {y : y' in y_n A, (y'', y_n) in L^-1 W}``."""

    dims: SplitDims
    A: InnerBall | InnerBox
    W: ProjectedBallWindow | BoxWindow
    L: float = 1.0

    def bbox(self):
        k = self.dims.k
        wlo, whi = self.W.bbox()
        wlo, whi = wlo / self.L, whi / self.L
        ymax = whi[-1]
        alo, ahi = self.A.bounds(k)
        lo_p = np.minimum(alo * ymax, 0.0)
        hi_p = np.maximum(ahi * ymax, 0.0)
        return np.concatenate([lo_p, wlo]), np.concatenate([hi_p, whi])

    def contains(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        k = self.dims.k
        yn = y[:, -1]
        pos = yn > 0
        out = np.zeros(len(y), dtype=bool)
        if not pos.any():
            return out
        yp = y[pos]
        ok = self.W.contains(yp[:, k:] * self.L)
        ok &= self.A.contains(yp[:, :k] / yp[:, -1:])
        out[pos] = ok
        return out

    def volume(self) -> float:
        """Lebesgue volume; exact for box windows, quadrature otherwise."""
        k = self.dims.k
        from .oracle import window_moment

        return self.A.volume(k) * window_moment(self.W, k) / self.L ** (self.dims.m + 1 + k)


def cone_points(x: Lattice, region: RegionC, primitive_only: bool = True) -> PointSet:
    return enumerate_points(x, region, primitive_only=primitive_only)


# -- hits ----------------------------------------------------------------------


@dataclass
class HitRecord:
    s: np.ndarray
    snorm: float
    w: np.ndarray
    witness: np.ndarray
    vector: np.ndarray
    L: float

    def to_json(self) -> dict:
        return {
            "s": [float(a) for a in self.s],
            "snorm": float(self.snorm),
            "w": [float(a) for a in self.w],
            "witness": [int(a) for a in self.witness],
            "L": float(self.L),
        }


def _check(W, L: float):
    if not (L > 0 and math.isfinite(L)):
        raise SectionError("L must be positive and finite")
    if W.is_empty:
        raise SectionError("empty window W")


def _tie_sorted(records: list[HitRecord]) -> list[HitRecord]:
    records.sort(key=lambda r: (r.snorm, tuple(r.witness)))
    # equal |s| up to rounding are ordered by witness
    out: list[HitRecord] = []
    i = 0
    while i < len(records):
        j = i + 1
        while j < len(records) and records[j].snorm - records[i].snorm <= TOL * max(1.0, records[i].snorm):
            j += 1
        out.extend(sorted(records[i:j], key=lambda r: tuple(r.witness)))
        i = j
    return out


def list_hits(x: Lattice, W, L: float, s_bound: float, norms: NormPair | None = None) -> list[HitRecord]:
    """All hits with ``|s| <= s_bound``, sorted by ``|s|`` then witness."""
    norms = norms or NormPair()
    _check(W, L)
    if not s_bound > 0:
        raise SectionError("s_bound must be positive")
    dims = x.dims
    k = dims.k
    region = RegionC(dims, InnerBall(s_bound, norms.inner), W, L)
    ps = enumerate_points(x, region, primitive_only=True)
    recs = []
    for c, v in ps:
        s = v[:k] / v[-1]
        recs.append(HitRecord(s, float(vector_norm(s, norms.inner)), L * v[k:], c, v, L))
    return _tie_sorted(recs)


def default_s_start(dims: SplitDims, L: float) -> float:
    return 0.25 * L ** (dims.n / dims.k)


def first_hit(x: Lattice, W, L: float, norms: NormPair | None = None, s_start: float | None = None,
              budget: float | None = None) -> HitRecord | None:
    """The hit of smallest ``|s|`` (first hitting time ``xi_1``), or ``None``
    when no hit exists with ``|s| <= budget`` (default ``2^10 s_start``)."""
    if s_start is None:
        s_start = default_s_start(x.dims, L)
    if not s_start > 0:
        raise SectionError("s_start must be positive")
    if budget is None:
        budget = s_start * 2.0**DEFAULT_BUDGET_DOUBLINGS
    bound = min(s_start, budget)
    while True:
        hits = list_hits(x, W, L, bound, norms)
        if hits:
            return hits[0]
        if bound >= budget:
            return None
        bound = min(2 * bound, budget)


def scaled_first_hit_statistic(x: Lattice, W, L: float, norms: NormPair | None = None,
                               s_start: float | None = None, budget: float | None = None) -> float | None:
    """``L^{-n/k} |xi_1(x, L)|``; ``None`` if censored."""
    rec = first_hit(x, W, L, norms, s_start, budget)
    if rec is None:
        return None
    return rec.snorm * L ** (-x.dims.n / x.dims.k)


def region_count(x: Lattice, A, W, L: float) -> int:
    """``#(primitive points of x in C(A, L^-1 W))``."""
    return len(enumerate_points(x, RegionC(x.dims, A, W, L), primitive_only=True))


def joint_count_event(x: Lattice, A_list: Sequence, N_list: Sequence[int], W, L: float) -> bool:
    """True iff ``#{j : L^{-n/k} xi_j in A_i} = N_i`` for every ``i``."""
    if len(A_list) != len(N_list):
        raise SectionError("A_list and N_list differ in length")
    _check(W, L)
    c = L ** (x.dims.n / x.dims.k)
    for A, N in zip(A_list, N_list):
        if region_count(x, A.scaled(c), W, L) != int(N):
            return False
    return True


def impact_marginal_event(x: Lattice, W, L: float, X: float, Bsub, norms: NormPair | None = None,
                          s_start: float | None = None, budget: float | None = None) -> bool | None:
    """``{L^{-n/k} |xi_1| > X and L (v'', v_n) of the first hit in Bsub}``.

    ``None`` means the first hit was not found within the budget.
    """
    if getattr(Bsub, "is_empty", False):
        return False
    rec = first_hit(x, W, L, norms, s_start, budget)
    if rec is None:
        return None
    stat = rec.snorm * L ** (-x.dims.n / x.dims.k)
    return bool(stat > X and Bsub.contains(rec.w)[0])
