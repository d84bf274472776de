"""Cusp excursions along unipotent orbits.

``M_T(x) = sup_{|s| <= T} log alpha(h_s(x))`` is computed exactly as
``-log min_v rho_T(v)`` with ``rho_T(v) = min_{|s| <= T} |v U(s)|``, and
entry times ``r_1`` into the cusp neighbourhoods ``H(L^-1 C)`` are computed
from the same per-vector clipped minimisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .lattice import (
    BoxRegion,
    Lattice,
    LatticeError,
    NormPair,
    enumerate_points,
    lll_reduce,
    vector_norm,
)

TOL = 1e-12
DEFAULT_BUDGET_DOUBLINGS = 10


# -- clipped distances ---------------------------------------------------------


def ball_box_gap(a: np.ndarray, R) -> np.ndarray:
    """Smallest ``d >= 0`` with ``sum_i max(a_i - d, 0)^2 <= R^2`` (row-wise).

    ``a`` holds nonnegative entries. This is the sup-distance from the origin
    to a euclidean ball of radius ``R`` centred at ``a`` (equivalently the
    sup-distance from ``a`` to the euclidean ball of radius ``R`` at 0).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    R2 = np.broadcast_to(np.asarray(R, dtype=float) ** 2, (a.shape[0],))
    srt = -np.sort(-a, axis=1)
    k = srt.shape[1]
    # f(a_j) = sum_{i<j} (a_i - a_j)^2 is nondecreasing in j
    S1 = np.cumsum(srt, axis=1)
    S2 = np.cumsum(srt * srt, axis=1)
    j_idx = np.arange(1, k + 1)
    f_at = S2 - 2 * srt * S1 + j_idx * srt * srt
    j = np.sum(f_at <= R2[:, None] * (1 + 1e-15), axis=1)
    out = np.zeros(a.shape[0])
    for jj in range(1, k + 1):
        sel = j == jj
        if not sel.any():
            continue
        s1 = S1[sel, jj - 1]
        s2 = S2[sel, jj - 1]
        disc = np.maximum(s1 * s1 - jj * (s2 - R2[sel]), 0.0)
        out[sel] = np.maximum((s1 - np.sqrt(disc)) / jj, 0.0)
    # j == 0 cannot happen: f(a_1) = 0 <= R^2
    return out


def clipped_distance(sigma: np.ndarray, radius, outer: str, inner: str) -> np.ndarray:
    """``min_{|s|_inner <= radius} |sigma - s|_outer`` row-wise, where the
    outer norm is restricted to the first ``k`` coordinates."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (sigma.shape[0],))
    a = np.abs(sigma)
    if inner == "euclidean" and outer == "euclidean":
        return np.maximum(np.sqrt(np.sum(a * a, axis=1)) - radius, 0.0)
    if inner == "sup":
        gap = np.maximum(a - radius[:, None], 0.0)
        return vector_norm(gap, outer)
    return ball_box_gap(a, radius)


def clipped_minimiser(sigma: np.ndarray, radius: float, outer: str, inner: str) -> np.ndarray:
    """A minimiser ``s`` for :func:`clipped_distance`."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    a = np.abs(sigma)
    if inner == "sup":
        return np.clip(sigma, -radius, radius)
    if outer == "euclidean":
        nrm = np.sqrt(np.sum(a * a, axis=1))
        scale = np.where(nrm > radius, radius / np.where(nrm > 0, nrm, 1.0), 1.0)
        return sigma * scale[:, None]
    d = ball_box_gap(a, radius)
    return np.sign(sigma) * np.maximum(a - d[:, None], 0.0)


def _combine(a_dist: np.ndarray, rest: np.ndarray, outer: str) -> np.ndarray:
    rn = vector_norm(rest, outer)
    if outer == "euclidean":
        return np.sqrt(a_dist * a_dist + rn * rn)
    return np.maximum(a_dist, rn)


def rho_T(points: np.ndarray, T: float, k: int, norms: NormPair) -> tuple[np.ndarray, np.ndarray]:
    """``(rho, s)`` with ``rho = min_{|s| <= T} |v U(s)|`` for each row ``v``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if norms.conjugator is not None:
        res = [_rho_conjugated(v, T, k, norms) for v in pts]
        return np.array([r for r, _ in res]), np.array([s for _, s in res]).reshape(len(pts), k)
    vn = pts[:, -1]
    rho = np.empty(len(pts))
    s = np.zeros((len(pts), k))
    flat = vn == 0
    rho[flat] = vector_norm(pts[flat], norms.outer)
    nz = ~flat
    if nz.any():
        sig = pts[nz, :k] / vn[nz, None]
        d = clipped_distance(sig, T, norms.outer, norms.inner)
        rho[nz] = _combine(np.abs(vn[nz]) * d, pts[nz, k:], norms.outer)
        s[nz] = clipped_minimiser(sig, T, norms.outer, norms.inner)
    return rho, s


# -- conjugated outer norm |v|_{g0} = |v g0^-1| ----------------------------------


def _trust_region(Q: np.ndarray, b: np.ndarray, T: float) -> np.ndarray:
    """argmin ``s Q s - 2 b.s`` over ``|s|_2 <= T`` for positive definite Q."""
    w, V = np.linalg.eigh(Q)
    c = V.T @ b
    s0 = c / w
    if np.linalg.norm(s0) <= T:
        return V @ s0
    phi = lambda lam: np.linalg.norm(c / (w + lam)) - T
    hi = max(1.0, np.linalg.norm(b) / T)
    while phi(hi) > 0:
        hi *= 2
    lam = optimize.brentq(phi, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return V @ (c / (w + lam))


def _sup_fit_1d(a: np.ndarray, d: np.ndarray, T: float) -> float:
    """argmin over ``|s| <= T`` of ``max_j |a_j - s d_j|`` (exact, by breakpoints)."""
    cand = [-T, T]
    nz = d != 0
    cand.extend((a[nz] / d[nz]).tolist())
    n = len(a)
    for i in range(n):
        for j in range(i + 1, n):
            for sg in (1.0, -1.0):
                den = d[i] - sg * d[j]
                if den != 0:
                    cand.append((a[i] - sg * a[j]) / den)
    cand = np.clip(np.array(cand), -T, T)
    vals = np.max(np.abs(a[None, :] - cand[:, None] * d[None, :]), axis=1)
    return float(cand[int(np.argmin(vals))])


def _rho_conjugated(v: np.ndarray, T: float, k: int, norms: NormPair) -> tuple[float, np.ndarray]:
    ginv = norms.conjugator_inverse
    a = v @ ginv
    vn = v[-1]
    if vn == 0 or T == 0:
        return float(vector_norm(a, norms.outer)), np.zeros(k)
    D = vn * ginv[:k]  # v U(s) g0^-1 = a - s D
    if norms.outer == "euclidean":
        if norms.inner == "euclidean":
            s = _trust_region(D @ D.T, D @ a, T)
        else:
            s = optimize.lsq_linear(D.T, a, bounds=(-T, T), method="bvls", tol=1e-14).x
    elif k == 1:
        s = np.array([_sup_fit_1d(a, D[0], T)])
    elif norms.inner == "sup":
        nn = len(a)
        c = np.zeros(k + 1)
        c[-1] = 1.0
        # |a_j - (sD)_j| <= t as two linear inequalities per j
        A_ub = np.vstack([np.hstack([-D.T, -np.ones((nn, 1))]), np.hstack([D.T, -np.ones((nn, 1))])])
        b_ub = np.concatenate([-a, a])
        bounds = [(-T, T)] * k + [(0, None)]
        s = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs").x[:k]
    else:
        f = lambda z: z[-1]
        cons = [
            {"type": "ineq", "fun": lambda z: z[-1] - (a - z[:k] @ D)},
            {"type": "ineq", "fun": lambda z: z[-1] + (a - z[:k] @ D)},
            {"type": "ineq", "fun": lambda z: T * T - z[:k] @ z[:k]},
        ]
        s0 = clipped_minimiser(np.linalg.lstsq(D.T, a, rcond=None)[0][None, :], T, "euclidean", "euclidean")[0]
        z0 = np.concatenate([s0, [np.max(np.abs(a - s0 @ D))]])
        s = optimize.minimize(f, z0, constraints=cons, method="SLSQP",
                              options={"ftol": 1e-15, "maxiter": 500}).x[:k]
        nrm = np.linalg.norm(s)
        if nrm > T:
            s = s * (T / nrm)
    return float(vector_norm(a - s @ D, norms.outer)), s


# -- sup of log alpha along an orbit segment ---------------------------------------


@dataclass
class SupLogAlpha:
    M: float
    rho: float
    witness: np.ndarray
    vector: np.ndarray
    s: np.ndarray


class _RhoRegion:
    """Candidates ``v`` that could have ``rho_T(v) <= r``."""

    def __init__(self, n: int, k: int, T: float, r: float, norms: NormPair):
        self.k, self.T, self.r, self.norms = k, T, r, norms
        if norms.conjugator is None:
            cs = np.ones(n)
        else:
            cs = np.abs(norms.conjugator).sum(axis=0)
        h = r * cs
        hp = h[:k] + T * h[-1]
        self.hi = np.concatenate([hp, h[k:]])

    def bbox(self):
        return -self.hi, self.hi.copy()

    def contains(self, pts):
        rho, _ = rho_T(pts, self.T, self.k, self.norms)
        return rho <= self.r * (1 + TOL)


def sup_log_alpha(x: Lattice, T: float, norms: NormPair | None = None) -> SupLogAlpha:
    """Exact ``M_T(x)`` with the minimising lattice vector and time."""
    norms = norms or NormPair()
    if not (T >= 0 and math.isfinite(T)):
        raise LatticeError("T must be finite and >= 0")
    n, k = x.dims.n, x.dims.k
    red, tmat = lll_reduce(x)
    rho0, _ = rho_T(red.basis, T, k, norms)
    r_max = float(rho0.min())
    r = min(r_max, max(T, 1.0) ** (-k / n))
    while True:
        ps = enumerate_points(x, _RhoRegion(n, k, T, r, norms))
        if len(ps):
            rho, s = rho_T(ps.points, T, k, norms)
            i = int(np.argmin(rho))
            if rho[i] <= r * (1 + TOL):
                return SupLogAlpha(0.0 - math.log(rho[i]), float(rho[i]), ps.coeffs[i], ps.points[i], s[i])
        if r >= r_max:
            # the reduced basis vector realising r_max is always a candidate
            raise LatticeError("sup_log_alpha search failed to close")
        r = min(2 * r, r_max)


@dataclass
class EvlObservation:
    T: float
    M: float
    rescaled: float
    censored: bool = False
    witness: list | None = None
    s: list | None = None

    def to_json(self) -> dict:
        d = {"T": self.T, "M": self.M, "rescaled": self.rescaled, "censored": self.censored}
        if self.witness is not None:
            d["witness"] = self.witness
            d["s"] = self.s
        return d


def evl_statistic(x: Lattice, T: float, norms: NormPair | None = None) -> EvlObservation:
    """``M_T`` and ``M_T - (k/n) log T``."""
    if T < 1:
        raise ValueError("evl_statistic needs T >= 1")
    res = sup_log_alpha(x, T, norms)
    resc = res.M - x.dims.k / x.dims.n * math.log(T)
    return EvlObservation(float(T), res.M, resc, False,
                          [int(c) for c in res.witness], [float(a) for a in res.s])


def conjugated_evl_statistic(x: Lattice, T: float, g0, norms: NormPair | None = None) -> EvlObservation:
    """Statistic for the conjugated flow ``s -> x g0 U(s) g0^-1``."""
    norms = norms or NormPair()
    g0 = np.asarray(g0, dtype=float)
    conj = NormPair(norms.outer, norms.inner, g0)  # validates det g0 = 1
    return evl_statistic(x.act(g0), T, conj)


def conjugated_flow_apply(x: Lattice, g0, s) -> Lattice:
    """``h^{g0}_s(x) = x g0 U(s) g0^-1`` by explicit matrix products."""
    from .lattice import unipotent_matrix

    g0 = np.asarray(g0, dtype=float)
    return x.act(g0 @ unipotent_matrix(x.dims, s) @ np.linalg.inv(g0))


def loglaw_track(x: Lattice, T_sequence: Sequence[float], norms: NormPair | None = None) -> list[float]:
    """``M_T / log T`` along an increasing sequence of horizons."""
    Ts = [float(t) for t in T_sequence]
    if any(t < 2 for t in Ts) or any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ValueError("T_sequence must be increasing with T >= 2")
    return [sup_log_alpha(x, t, norms).M / math.log(t) for t in Ts]


# -- entry times into cusp neighbourhoods -------------------------------------------


@dataclass(frozen=True)
class CuspRegion:
    """``H(L^-1 C')`` for ``C' = C D``, where ``C`` is the closed outer unit
    ball (``shape='ball'``) or the box ``prod [-h_i, h_i]`` and ``D`` is an
    optional diagonal matrix whose first ``k`` entries agree (default 1)."""

    n: int
    L: float = 1.0
    shape: str = "ball"
    outer: str = "euclidean"
    halfwidths: tuple | None = None
    scale: tuple | None = None

    def __post_init__(self):
        if self.shape not in ("ball", "box"):
            raise ValueError("shape must be 'ball' or 'box'")
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.shape == "box":
            h = np.broadcast_to(np.asarray(self.halfwidths, dtype=float), (self.n,))
            if np.any(h <= 0):
                raise ValueError("box halfwidths must be positive")
            object.__setattr__(self, "halfwidths", tuple(h.tolist()))
        d = np.ones(self.n) if self.scale is None else np.asarray(self.scale, dtype=float)
        if d.shape != (self.n,) or np.any(d <= 0):
            raise ValueError("scale must be n positive numbers")
        object.__setattr__(self, "scale", tuple(d.tolist()))

    def diag(self) -> np.ndarray:
        return np.array(self.scale)

    def rescaled(self, factors) -> "CuspRegion":
        """The region ``C D diag(factors)``."""
        d = self.diag() * np.asarray(factors, dtype=float)
        return CuspRegion(self.n, self.L, self.shape, self.outer, self.halfwidths, tuple(d))

    def half_extent(self) -> np.ndarray:
        """Coordinate half-widths of ``L^-1 C D``."""
        base = np.ones(self.n) if self.shape == "ball" else np.array(self.halfwidths)
        return base * self.diag() / self.L

    def contains(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        u = y * self.L / self.diag()
        if self.shape == "ball":
            return vector_norm(u, self.outer) <= 1 + TOL
        return np.all(np.abs(u) <= np.array(self.halfwidths) * (1 + TOL), axis=1)


def entry_times(points: np.ndarray, region: CuspRegion, k: int, inner: str) -> np.ndarray:
    """Per-vector ``min{|s| : v U(s) in L^-1 C}`` (``inf`` when impossible)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full(len(pts), np.inf)
    vn = pts[:, -1]
    flat = vn == 0
    if flat.any():
        out[flat] = np.where(region.contains(pts[flat]), 0.0, np.inf)
    nz = ~flat
    if not nz.any():
        return out
    p = pts[nz]
    a = np.abs(p[:, -1])
    sig = p[:, :k] / p[:, -1:]
    d = region.diag()
    if region.shape == "ball" and region.outer == "euclidean":
        rest = p[:, k:] / d[k:]
        rho2 = region.L ** -2 - np.sum(rest * rest, axis=1)
        ok = rho2 >= -TOL * region.L ** -2
        R = d[0] * np.sqrt(np.maximum(rho2, 0.0)) / a
        if inner == "euclidean":
            r = np.maximum(np.sqrt(np.sum(sig * sig, axis=1)) - R, 0.0)
        else:
            r = ball_box_gap(np.abs(sig), R)
        out[nz] = np.where(ok, r, np.inf)
        return out
    h = region.half_extent()
    ok = np.all(np.abs(p[:, k:]) <= h[k:] * (1 + TOL), axis=1)
    R = h[:k][None, :] / a[:, None]
    gap = np.maximum(np.abs(sig) - R, 0.0)
    r = vector_norm(gap, inner)
    out[nz] = np.where(ok, r, np.inf)
    return out


def r1_entry(x: Lattice, region: CuspRegion, norms: NormPair | None = None,
             budget: float | None = None, s_start: float | None = None,
             positive_half: bool = True) -> float | None:
    """Entry time ``r_1(x, H(L^-1 C))`` or ``None`` if it exceeds ``budget``.

    With ``positive_half`` only vectors with ``v_n > 0`` are searched, which
    suffices because ``C = -C``; the full search is kept as a cross-check.
    """
    norms = norms or NormPair()
    if norms.conjugator is not None:
        raise ValueError("entry times are computed for plain norms only")
    if region.n != x.dims.n:
        raise ValueError("region dimension mismatch")
    n, k = x.dims.n, x.dims.k
    if s_start is None:
        s_start = 0.25 * region.L ** (n / k)
    if budget is None:
        budget = s_start * 2.0**DEFAULT_BUDGET_DOUBLINGS
    h = region.half_extent()
    # horizontal vectors enter at time 0 or never
    flat_hi = h.copy()
    flat_hi[-1] = 0.0
    flat = enumerate_points(x, BoxRegion(-flat_hi, flat_hi))
    if len(flat):
        sel = flat.points[:, -1] == 0
        if sel.any() and np.any(region.contains(flat.points[sel])):
            return 0.0
    bound = min(s_start, budget)
    while True:
        hp = h[:k] + bound * h[-1]
        hi = np.concatenate([hp, h[k:]])
        lo = -hi.copy()
        if positive_half:
            lo[-1] = 0.0
        ps = enumerate_points(x, BoxRegion(lo, hi))
        if len(ps):
            pts = ps.points
            keep = pts[:, -1] > 0 if positive_half else pts[:, -1] != 0
            if keep.any():
                r = entry_times(pts[keep], region, k, norms.inner)
                best = float(r.min())
                if best <= bound:
                    return best
        if bound >= budget:
            return None
        bound = min(2 * bound, budget)
