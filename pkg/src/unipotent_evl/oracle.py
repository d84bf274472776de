"""Monte Carlo and quadrature oracles for the limit laws.

Probabilities of lattice events under the Haar measure are estimated over
near-Haar samplers; the constant kappa is computed by quadrature. Curves
over a grid of X use common random numbers, so they are exactly monotone.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .lattice import NormPair, SplitDims, enumerate_points, primitive_mask, unit_ball_volume
from .parallel import pmap
from .sampling import RngStream, SamplerSpec, sample, zeta
from .sections import (
    BoxWindow,
    InnerBall,
    ProjectedBallWindow,
    first_hit,
    joint_count_event,
)


@dataclass
class OracleEstimate:
    value: float
    stderr: float
    N: int
    spec: dict = field(default_factory=dict)

    @classmethod
    def from_count(cls, hits: int, N: int, spec: dict | None = None) -> "OracleEstimate":
        p = hits / N
        return cls(p, math.sqrt(p * (1 - p) / N), N, spec or {})

    def complement(self) -> "OracleEstimate":
        return OracleEstimate(1.0 - self.value, self.stderr, self.N, dict(self.spec, complement=True))

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "N": self.N, **self.spec}


# -- quadrature -----------------------------------------------------------------


def window_moment(W, k: int) -> float:
    """``int_W y_n^k dy``."""
    if isinstance(W, BoxWindow):
        if W.is_empty:
            return 0.0
        lo, hi = np.array(W.lo), np.array(W.hi)
        side = float(np.prod(hi[:-1] - lo[:-1]))
        return side * (hi[-1] ** (k + 1) - lo[-1] ** (k + 1)) / (k + 1)
    m = W.dims.m
    if W.outer == "sup":
        # slice at height y is the cube [-1, 1]^m
        f = lambda y: y**k * 2.0**m
    else:
        vm = unit_ball_volume(m, "euclidean")
        f = lambda y: y**k * vm * (1 - y * y) ** (m / 2)
    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=0, epsrel=1e-12, limit=200)
    return val


def kappa(dims: SplitDims, norms: NormPair | None = None) -> float:
    """``vol(B_1^k) / zeta(n) * int_W y_n^k`` with ``W`` the projected upper
    half of the outer unit ball and ``B_1^k`` the inner unit ball."""
    norms = norms or NormPair()
    W = ProjectedBallWindow(dims, norms.outer)
    return unit_ball_volume(dims.k, norms.inner) / zeta(dims.n) * window_moment(W, dims.k)


# -- avoidance and count probabilities --------------------------------------------


def _spec_dict(sampler: SamplerSpec, N: int, seed: int, **kw) -> dict:
    return {"sampler": sampler.kind, "N": N, "seed": seed, **kw}


def _joint_event_worker(sampler, A_list, N_list, W, seed, i):
    x = sample(sampler, RngStream(seed, i))
    return joint_count_event(x, A_list, N_list, W, 1.0)


def psi_N_oracle(A_list, N_list, W, dims: SplitDims, norms: NormPair | None, sampler: SamplerSpec,
                 Nsamples: int, seed: int | None = None, threads: int | None = 1) -> OracleEstimate:
    """Probability that the primitive counts in ``C(A_i, W)`` equal ``N_i``."""
    if sampler.dims != dims:
        raise ValueError("sampler dims mismatch")
    seed = sampler.seed if seed is None else seed
    ev = pmap(functools.partial(_joint_event_worker, sampler, list(A_list), list(N_list), W, seed),
              range(Nsamples), threads)
    return OracleEstimate.from_count(int(sum(ev)), Nsamples,
                                     _spec_dict(sampler, Nsamples, seed, event="joint-count",
                                                counts=[int(c) for c in N_list]))


def _first_hit_worker(sampler, W, norms, s_start, X_max, seed, i):
    x = sample(sampler, RngStream(seed, i))
    rec = first_hit(x, W, 1.0, norms, s_start=s_start, budget=X_max)
    return math.inf if rec is None else rec.snorm


def first_hit_sample(W, norms: NormPair | None, sampler: SamplerSpec, Nsamples: int, X_max: float,
                     seed: int | None = None, threads: int | None = 1, X_min: float | None = None) -> np.ndarray:
    """``|xi_1(x, 1)|`` for ``Nsamples`` random ``x``; ``inf`` beyond ``X_max``."""
    norms = norms or NormPair()
    seed = sampler.seed if seed is None else seed
    s_start = X_max if X_min is None else min(max(X_min, 1e-300), X_max)
    vals = pmap(functools.partial(_first_hit_worker, sampler, W, norms, s_start, X_max, seed),
                range(Nsamples), threads)
    return np.array(vals, dtype=float)


@dataclass
class Psi0Curve:
    X: np.ndarray
    xi: np.ndarray
    sampler: dict
    seed: int

    @property
    def N(self) -> int:
        return len(self.xi)

    def estimate(self, X: float) -> OracleEstimate:
        if X > self.X.max() * (1 + 1e-12):
            raise ValueError("X beyond the computed range")
        avoid = int(np.sum(self.xi > X))
        return OracleEstimate.from_count(avoid, self.N, {"X": float(X), "seed": self.seed, **self.sampler})

    def values(self, X=None) -> np.ndarray:
        X = self.X if X is None else np.asarray(X, dtype=float)
        srt = np.sort(self.xi)
        return 1.0 - np.searchsorted(srt, X, side="right") / self.N

    def stderrs(self, X=None) -> np.ndarray:
        p = self.values(X)
        return np.sqrt(p * (1 - p) / self.N)


def psi0_curve(X_grid, W, dims: SplitDims, norms: NormPair | None, sampler: SamplerSpec, Nsamples: int,
               seed: int | None = None, threads: int | None = 1) -> Psi0Curve:
    """``Psi_0(B_X)`` on a grid of ``X`` from one set of random lattices."""
    if sampler.dims != dims:
        raise ValueError("sampler dims mismatch")
    X = np.sort(np.asarray(X_grid, dtype=float))
    if np.any(X <= 0):
        raise ValueError("X must be positive")
    seed = sampler.seed if seed is None else seed
    xi = first_hit_sample(W, norms, sampler, Nsamples, float(X[-1]), seed, threads, X_min=float(X[0]))
    return Psi0Curve(X, xi, {"sampler": sampler.kind}, seed)


def psi0(X: float, W, dims: SplitDims, norms: NormPair | None, sampler: SamplerSpec, Nsamples: int,
         seed: int | None = None, threads: int | None = 1) -> OracleEstimate:
    """Probability that the primitive points avoid ``C(B_X, W)``."""
    return psi0_curve([X], W, dims, norms, sampler, Nsamples, seed, threads).estimate(X)


def eta_X(Y, dims: SplitDims):
    return np.exp(-(dims.n / dims.k) * np.asarray(Y, dtype=float))


def eta_tail_curve(Y_grid, dims: SplitDims, norms: NormPair | None, sampler: SamplerSpec, Nsamples: int,
                   seed: int | None = None, threads: int | None = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(Y, tail, stderr)`` with ``tail(Y) = 1 - Psi_0(B_{exp(-(n/k) Y)})``."""
    norms = norms or NormPair()
    Y = np.asarray(Y_grid, dtype=float)
    X = eta_X(Y, dims)
    W = ProjectedBallWindow(dims, norms.outer)
    curve = psi0_curve(X, W, dims, norms, sampler, Nsamples, seed, threads)
    p = curve.values(X)
    return Y, 1.0 - p, np.sqrt(p * (1 - p) / curve.N)


def eta_tail(Y: float, dims: SplitDims, norms: NormPair | None, sampler: SamplerSpec, Nsamples: int,
             seed: int | None = None, threads: int | None = 1) -> OracleEstimate:
    """``int_Y^infty eta`` for the projected unit-ball window."""
    norms = norms or NormPair()
    W = ProjectedBallWindow(dims, norms.outer)
    est = psi0(float(eta_X(Y, dims)), W, dims, norms, sampler, Nsamples, seed, threads)
    out = est.complement()
    out.spec["Y"] = float(Y)
    return out


# -- the cone C_{k,m}(R, S) and its avoidance probability ----------------------------


@dataclass(frozen=True)
class ConeRegion:
    """``{y : |y'|_2 <= y_n <= R, |y''|_2 <= S}``."""

    k: int
    m: int
    R: float
    S: float | None = None

    @property
    def n(self) -> int:
        return self.k + self.m + 1

    @property
    def S_eff(self) -> float:
        return self.R if self.S is None else self.S

    def bbox(self):
        R, S = self.R, self.S_eff
        lo = np.concatenate([-np.full(self.k, R), -np.full(self.m, S), [0.0]])
        hi = np.concatenate([np.full(self.k, R), np.full(self.m, S), [R]])
        return lo, hi

    def contains(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        k, R, S = self.k, self.R, self.S_eff
        yn = y[:, -1]
        a = np.sqrt(np.sum(y[:, :k] ** 2, axis=1))
        b = np.sqrt(np.sum(y[:, k:-1] ** 2, axis=1))
        eps = 1e-12
        return (a <= yn + eps * max(R, 1)) & (yn <= R * (1 + eps)) & (b <= S * (1 + eps))


def cone_threshold(x, k: int, m: int, aspect: float = 1.0, R_max: float = 64.0, R_start: float = 1.0) -> float:
    """Smallest ``R`` with a primitive point in ``C_{k,m}(R, aspect R)``
    (``inf`` if larger than ``R_max``)."""
    R = min(R_start, R_max)
    while True:
        ps = enumerate_points(x, ConeRegion(k, m, R, aspect * R), primitive_only=True)
        if len(ps):
            p = ps.points
            b = np.sqrt(np.sum(p[:, k:-1] ** 2, axis=1))
            return float(np.min(np.maximum(p[:, -1], b / aspect)))
        if R >= R_max:
            return math.inf
        R = min(2 * R, R_max)


def _cone_worker(sampler, k, m, aspect, R_max, R_start, seed, i):
    x = sample(sampler, RngStream(seed, i))
    return cone_threshold(x, k, m, aspect, R_max, R_start)


def cone_threshold_sample(k: int, m: int, sampler: SamplerSpec, Nsamples: int, R_max: float,
                          aspect: float = 1.0, seed: int | None = None, threads: int | None = 1,
                          R_start: float = 0.5) -> np.ndarray:
    seed = sampler.seed if seed is None else seed
    vals = pmap(functools.partial(_cone_worker, sampler, k, m, aspect, R_max, R_start, seed),
                range(Nsamples), threads)
    return np.array(vals)


def fkm_probability(R: float, k: int, m: int, sampler: SamplerSpec, Nsamples: int, seed: int | None = None,
                    threads: int | None = 1, S: float | None = None) -> OracleEstimate:
    """``F_{k,m}(R)``, or the avoidance probability of ``C_{k,m}(R, S)``."""
    if not R > 0:
        raise ValueError("R must be positive")
    if sampler.dims.k != k or sampler.dims.m != m:
        raise ValueError("sampler dims mismatch")
    S = R if S is None else S
    seed = sampler.seed if seed is None else seed
    th = cone_threshold_sample(k, m, sampler, Nsamples, R, S / R, seed, threads, R_start=R)
    return OracleEstimate.from_count(int(np.sum(th > R)), Nsamples,
                                     _spec_dict(sampler, Nsamples, seed, R=R, S=S, event="cone-avoidance"))


def fkm_rescaled_radius(R: float, S: float, k: int, m: int) -> float:
    """``R'`` with ``F_{k,m}(R') = P(avoid C_{k,m}(R, S))``."""
    n = k + m + 1
    return R ** ((k + 1) / n) * S ** (m / n)


# -- tail report -----------------------------------------------------------------------


def _loglog_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0]), float(coef[1])


def bootstrap_slope(xi: np.ndarray, X: np.ndarray, t: np.ndarray, avoid: bool = True,
                    B: int = 200, seed: int = 0) -> tuple[float, float, float]:
    """Least-squares slope of ``log p(X)`` against ``t`` with a bootstrap
    95% interval, where ``p(X) = P(xi > X)`` (``avoid``) or ``P(xi <= X)``."""
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)

    def slope_of(v):
        srt = np.sort(v)
        below = np.searchsorted(srt, X, side="right") / len(v)
        p = 1.0 - below if avoid else below
        if np.any(p <= 0):
            return math.nan
        return _loglog_fit(t, np.log(p))[0]

    est = slope_of(xi)
    boots = np.array([slope_of(xi[rng.integers(0, len(xi), len(xi))]) for _ in range(B)])
    boots = boots[np.isfinite(boots)]
    if len(boots) == 0:
        return est, math.nan, math.nan
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return est, float(lo), float(hi)


def tail_report(dims: SplitDims, norms: NormPair | None, X_grid, Y_grid, sampler: SamplerSpec, Nsamples: int,
                seed: int | None = None, threads: int | None = 1, large_X_grid=None) -> dict:
    """Small-X table against ``kappa X^k``, upper tail of eta against ``Y``
    and (optionally) the large-X decay of ``Psi_0``, all from one sample."""
    norms = norms or NormPair()
    seed = sampler.seed if seed is None else seed
    W = ProjectedBallWindow(dims, norms.outer)
    X_small = np.sort(np.asarray(X_grid, dtype=float))
    Y = np.sort(np.asarray(Y_grid, dtype=float))
    X_eta = eta_X(Y, dims)
    X_large = np.sort(np.asarray(large_X_grid if large_X_grid is not None else [], dtype=float))
    all_X = np.concatenate([X_small, X_eta, X_large])
    xi = first_hit_sample(W, norms, sampler, Nsamples, float(all_X.max()), seed, threads,
                          X_min=float(all_X.min()))
    kap = kappa(dims, norms)
    N = len(xi)

    def p_hit(X):
        return float(np.mean(xi <= X))

    small = []
    for X in X_small:
        q = p_hit(X)
        ref = kap * X**dims.k
        small.append({"X": float(X), "one_minus_psi0": q, "stderr": math.sqrt(q * (1 - q) / N),
                      "kappa_Xk": ref, "ratio": q / ref})
    eta_rows = []
    for y, X in zip(Y, X_eta):
        q = p_hit(X)
        eta_rows.append({"Y": float(y), "tail": q, "stderr": math.sqrt(q * (1 - q) / N),
                         "kappa_exp": kap * math.exp(-dims.n * y)})
    up = bootstrap_slope(xi, X_eta, Y, avoid=False, seed=seed) if len(Y) > 1 else None
    report = {
        "dims": dims.to_dict(),
        "norms": norms.to_dict(),
        "N": N,
        "seed": seed,
        "kappa": kap,
        "small_X": small,
        "eta_tail": eta_rows,
        "eta_slope": None if up is None else {"slope": up[0], "ci": [up[1], up[2]], "expected": -dims.n},
    }
    if len(X_large) > 1:
        rows = []
        for X in X_large:
            p = float(np.mean(xi > X))
            rows.append({"X": float(X), "psi0": p, "stderr": math.sqrt(p * (1 - p) / N),
                         "psi0_Xn1": p * X ** (dims.n - 1)})
        lo = bootstrap_slope(xi, X_large, np.log(X_large), seed=seed)
        report["large_X"] = rows
        report["large_X_slope"] = {"slope": lo[0], "ci": [lo[1], lo[2]], "expected": -(dims.n - 1)}
    report["censored"] = int(np.sum(~np.isfinite(xi)))
    return report
