"""Random lattices: exact Haar for n=2, absolutely continuous and
horospherical laws, and their push by the contracting diagonal flow.

Every sample is drawn from its own counter-based stream keyed by
``(seed, stream_id)``, so sample ``i`` of a run is the same no matter how
the run is split across workers.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import (
    BallRegion,
    BoxRegion,
    Lattice,
    LatticeError,
    SplitDims,
    diagonal_apply,
    enumerate_points,
    lll_reduce,
    unit_ball_volume,
)
from .parallel import pmap

SAMPLER_KINDS = ("haar-exact-n2", "haar-mixing-push", "horospherical", "ac-gaussian")
BASE_KINDS = ("ac-gaussian", "horospherical")

AC_SIGMA = 0.3
AC_MIN_DET = 0.1
_SQRT3_2 = math.sqrt(3.0) / 2.0
_SEED_MASK = (1 << 64) - 1


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class RngStream:
    """Independent random stream ``stream_id`` of the run seeded by ``seed``."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed & _SEED_MASK, self.stream_id & _SEED_MASK])
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


@dataclass(frozen=True)
class SamplerSpec:
    kind: str
    dims: SplitDims
    push_time: float | None = None
    base_point: Lattice | None = field(default=None, compare=False)
    box_halfwidth: float = 0.5
    seed: int = 0
    sigma: float = AC_SIGMA
    base_kind: str = "ac-gaussian"

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise SamplerError(f"unknown sampler kind {self.kind!r}")
        if self.kind == "haar-exact-n2" and self.dims.n != 2:
            raise SamplerError("haar-exact-n2 requires n = 2")
        if self.push_time is not None and not (self.push_time >= 0 and math.isfinite(self.push_time)):
            raise SamplerError("push_time must be finite and >= 0")
        if not self.sigma > 0:
            raise SamplerError("ac-gaussian needs sigma > 0 (sigma = 0 is a point mass)")
        if self.box_halfwidth < 0:
            raise SamplerError("box_halfwidth must be >= 0")
        if self.base_kind not in BASE_KINDS:
            raise SamplerError(f"base_kind must be one of {BASE_KINDS}")
        if self.base_point is not None and self.base_point.dims != self.dims:
            raise SamplerError("base_point dims do not match sampler dims")

    @property
    def effective_push_time(self) -> float:
        if self.push_time is None:
            return 6.0 / self.dims.k
        return float(self.push_time)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "dims": self.dims.to_dict(),
            "push_time": self.effective_push_time if self.kind == "haar-mixing-push" else self.push_time,
            "box_halfwidth": self.box_halfwidth,
            "seed": self.seed,
            "sigma": self.sigma,
            "base_kind": self.base_kind,
        }
        if self.base_point is not None:
            d["base_point"] = self.base_point.basis.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerSpec":
        d = dict(d)
        dd = d.pop("dims")
        dims = dd if isinstance(dd, SplitDims) else SplitDims(int(dd["n"]), int(dd["k"]), int(dd["m"]))
        bp = d.pop("base_point", None)
        if bp is not None and not isinstance(bp, Lattice):
            bp = Lattice(dims, bp)
        return cls(dims=dims, base_point=bp, **d)


def modular_point(gen: np.random.Generator) -> tuple[float, float, float]:
    """Haar-random ``(u, y, theta)`` with ``u + iy`` in the standard
    fundamental domain of SL(2,Z) and ``theta`` uniform on ``[0, pi)``."""
    while True:
        u = gen.uniform(-0.5, 0.5)
        # inverse CDF of the density (sqrt3/2) y^-2 on [sqrt3/2, inf)
        y = _SQRT3_2 / (1.0 - gen.random())
        if u * u + y * y >= 1.0:
            break
    theta = gen.uniform(0.0, math.pi)
    return u, y, theta


def modular_basis(u: float, y: float, theta: float) -> np.ndarray:
    r = math.sqrt(y)
    g = np.array([[r, u / r], [0.0, 1.0 / r]])
    c, s = math.cos(theta), math.sin(theta)
    return g @ np.array([[c, s], [-s, c]])


def horospherical_matrix(dims: SplitDims, B) -> np.ndarray:
    """``V(B)``: identity with the upper-right ``k x (m+1)`` block set to B."""
    B = np.asarray(B, dtype=float).reshape(dims.k, dims.m + 1)
    v = np.eye(dims.n)
    v[: dims.k, dims.k:] = B
    return v


def _ac_gaussian(dims: SplitDims, sigma: float, gen: np.random.Generator) -> Lattice:
    n = dims.n
    while True:
        b = np.eye(n) + sigma * gen.standard_normal((n, n))
        det = np.linalg.det(b)
        if abs(det) >= AC_MIN_DET:
            break
    return Lattice.from_matrix(dims, b)


def _horospherical(spec: SamplerSpec, gen: np.random.Generator) -> Lattice:
    dims = spec.dims
    x0 = spec.base_point or Lattice.standard(dims)
    h = spec.box_halfwidth
    B = gen.uniform(-h, h, size=(dims.k, dims.m + 1)) if h > 0 else np.zeros((dims.k, dims.m + 1))
    return Lattice(dims, x0.basis @ horospherical_matrix(dims, B))


def sample(spec: SamplerSpec, rng: RngStream | np.random.Generator) -> Lattice:
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    dims = spec.dims
    if spec.kind == "haar-exact-n2":
        return Lattice(dims, modular_basis(*modular_point(gen)))
    if spec.kind == "ac-gaussian":
        return _ac_gaussian(dims, spec.sigma, gen)
    if spec.kind == "horospherical":
        return _horospherical(spec, gen)
    # haar-mixing-push
    if spec.base_kind == "horospherical":
        x = _horospherical(spec, gen)
    else:
        x = _ac_gaussian(dims, spec.sigma, gen)
    x = diagonal_apply(x, -spec.effective_push_time)
    # the pushed basis is badly conditioned; hand back a reduced one
    return lll_reduce(x)[0]


def _sample_index(spec: SamplerSpec, seed: int, i: int) -> Lattice:
    return sample(spec, RngStream(seed, i))


def sample_many(spec: SamplerSpec, N: int, seed: int | None = None, start: int = 0,
                threads: int | None = 1) -> list[Lattice]:
    seed = spec.seed if seed is None else seed
    return pmap(functools.partial(_sample_index, spec, seed), range(start, start + N), threads)


# -- moment diagnostics ------------------------------------------------------


def zeta(s: int | float) -> float:
    """Riemann zeta for real ``s > 1``: partial sum plus Euler-Maclaurin tail
    (error well below 1e-12 for ``s >= 2``)."""
    s = float(s)
    if s <= 1:
        raise ValueError("zeta needs s > 1")
    N = 1000
    j = np.arange(1, N, dtype=float)
    head = math.fsum(j ** -s)
    tail = (
        N ** (1 - s) / (s - 1)
        + 0.5 * N ** -s
        + s * N ** (-s - 1) / 12
        - s * (s + 1) * (s + 2) * N ** (-s - 3) / 720
    )
    return head + tail


def region_volume(region) -> float:
    if isinstance(region, BallRegion):
        if region.norms.conjugator is not None:
            return unit_ball_volume(region.dim, region.norms.outer) * region.radius ** region.dim
        return unit_ball_volume(region.dim, region.norms.outer) * region.radius ** region.dim
    if isinstance(region, BoxRegion) and region.test is None:
        lo, hi = region.bbox()
        return float(np.prod(np.maximum(hi - lo, 0.0)))
    if hasattr(region, "volume"):
        return float(region.volume())
    raise SamplerError("region has no known volume")


@dataclass
class DiagnosticResult:
    estimate: float
    stderr: float
    reference: float
    N: int

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.estimate == self.reference else math.copysign(math.inf, self.estimate - self.reference)
        return (self.estimate - self.reference) / self.stderr

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr,
                "reference": self.reference, "z": self.z, "N": self.N}


def _primitive_count(spec: SamplerSpec, region, seed: int, i: int) -> int:
    x = sample(spec, RngStream(seed, i))
    return len(enumerate_points(x, region, primitive_only=True))


def _pair_count(spec: SamplerSpec, region, seed: int, i: int) -> int:
    x = sample(spec, RngStream(seed, i))
    ps = enumerate_points(x, region, primitive_only=True)
    N = len(ps)
    if N < 2:
        return 0
    if _symmetric(region):
        # the only dependent partners of a primitive v are v and -v
        return N * (N - 2)
    c = ps.coeffs
    same = np.all(c[:, None, :] == c[None, :, :], axis=2)
    opp = np.all(c[:, None, :] == -c[None, :, :], axis=2)
    return int(N * N - same.sum() - opp.sum())


def _symmetric(region) -> bool:
    if isinstance(region, BallRegion):
        return region.center is None or not np.any(region.center)
    if isinstance(region, BoxRegion) and region.test is None:
        lo, hi = region.bbox()
        return bool(np.allclose(lo, -hi, rtol=0, atol=0))
    return False


def _summarise(values, reference: float) -> DiagnosticResult:
    v = np.asarray(values, dtype=float)
    N = len(v)
    est = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(N)) if N > 1 else math.inf
    return DiagnosticResult(est, se, reference, N)


def siegel_mean_diagnostic(spec: SamplerSpec, region, N: int, seed: int | None = None,
                           threads: int | None = 1) -> DiagnosticResult:
    """Mean primitive count in ``region`` against ``vol / zeta(n)``."""
    if N < 100:
        raise SamplerError("siegel_mean_diagnostic needs N >= 100")
    seed = spec.seed if seed is None else seed
    ref = region_volume(region) / zeta(spec.dims.n)
    counts = pmap(functools.partial(_primitive_count, spec, region, seed), range(N), threads)
    return _summarise(counts, ref)


def rogers_second_moment_diagnostic(spec: SamplerSpec, region, N: int, seed: int | None = None,
                                    threads: int | None = 1) -> DiagnosticResult:
    """Mean number of ordered linearly independent primitive pairs in
    ``region`` against ``(vol / zeta(n))^2``; needs n >= 3."""
    if spec.dims.n < 3:
        raise SamplerError("the second-moment identity is used for n >= 3 only")
    if N < 100:
        raise SamplerError("rogers_second_moment_diagnostic needs N >= 100")
    seed = spec.seed if seed is None else seed
    ref = (region_volume(region) / zeta(spec.dims.n)) ** 2
    counts = pmap(functools.partial(_pair_count, spec, region, seed), range(N), threads)
    return _summarise(counts, ref)


def with_push(spec: SamplerSpec, t: float) -> SamplerSpec:
    """The mixing-push sampler built on ``spec`` with push time ``t``."""
    base = spec.kind if spec.kind in BASE_KINDS else spec.base_kind
    return replace(spec, kind="haar-mixing-push", push_time=float(t), base_kind=base)
